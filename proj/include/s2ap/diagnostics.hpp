#ifndef S2AP_DIAGNOSTICS_HPP
#define S2AP_DIAGNOSTICS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "s2ap/loss.hpp"
#include "s2ap/model.hpp"

namespace s2ap {

// ---------------------------------------------------------------------------
// Mask stability
// ---------------------------------------------------------------------------

/// Bit-packed mask snapshots across pruning epochs. Entry 0 is the reference
/// mask m_0; one snapshot is appended per epoch after that.
struct MaskTrace {
    int64_t bit_count = 0;
    std::vector<std::vector<uint64_t>> masks;

    void append_bits(const std::vector<uint8_t>& bits);
    size_t size() const { return masks.size(); }
};

/// Flattened 0/1 bits of the prunable layers' masks, layer-major.
std::vector<uint8_t> mask_bits(const Network& net, const std::vector<Tensor>& masks);

/// Normalized Hamming distance between two packed masks of `bits` bits:
/// popcount(a XOR b) / bits.
double hamming(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b, int64_t bits);

/// h_t = |m_0 XOR m_t| / |m_0| for t = 1..T. Requires at least two masks.
std::vector<double> hamming_trace(const MaskTrace& trace);

/// Paired series h_orig - h_s2ap (positive where the s2ap run is more
/// stable). The traces must have equal length and bit count.
std::vector<double> hamming_diff(const MaskTrace& orig, const MaskTrace& s2ap);

// ---------------------------------------------------------------------------
// Curvature
// ---------------------------------------------------------------------------

/// Gradient oracle over a flat score vector.
using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;

/// Hessian-vector product by central differences of the gradient:
/// (g(s + eps v) - g(s - eps v)) / (2 eps) with eps = 1e-4 ||s|| / ||v||.
std::vector<double> hvp(const GradFn& grad, const std::vector<double>& s,
                        const std::vector<double>& v);

struct LambdaResult {
    double value = 0.0;
    bool flat = false;  // Hv vanished; landscape numerically flat
};

/// Largest-magnitude eigenvalue of the Hessian behind `grad`, via power
/// iteration from a seeded random unit vector followed by a Rayleigh
/// quotient.
LambdaResult lambda_max(const GradFn& grad, const std::vector<double>& s, int iterations,
                        uint64_t seed);

/// Power iteration from an explicit start vector.
LambdaResult lambda_max_from(const GradFn& grad, const std::vector<double>& s, int iterations,
                             std::vector<double> v0);

// ---------------------------------------------------------------------------
// Score-space robust loss plumbing
// ---------------------------------------------------------------------------

/// Concatenation of the prunable layers' scores.
std::vector<double> gather_scores(const Network& net);
void scatter_scores(Network& net, const std::vector<double>& flat);
std::vector<double> gather_weights(const Network& net);

/// A robust-loss snapshot: one batch with its adversarial examples already
/// crafted and held fixed, so the loss is a deterministic function of the
/// scores.
struct ScoreLossContext {
    const Network* net = nullptr;
    const SparsitySpec* spec = nullptr;
    RankRule rank = RankRule::magnitude;
    Tensor x;
    Tensor x_adv;  // ignored for clean_ce
    std::vector<int> y;
    LossSpec loss;
};

/// Straight-through gradient of the robust loss at an arbitrary flat score
/// point, with the mask frozen at the context's current scores: effective
/// weights are w ⊙ (m_ref + s' - s_ref), and the returned gradient is
/// w ⊙ dL/d_eff. This is the surrogate whose Hessian the power iteration
/// probes; the hard top-k itself is piecewise constant.
GradFn frozen_mask_grad_fn(const ScoreLossContext& ctx);

/// True masked robust loss at scores s' (top-k recomputed from s').
double masked_loss_at(const ScoreLossContext& ctx, const std::vector<double>& scores);

// ---------------------------------------------------------------------------
// Loss-difference sharpness
// ---------------------------------------------------------------------------

struct LossDiffOptions {
    int steps = 20;
    int restarts = 2;
    uint64_t seed = 0;
};

/// max over |nu_i| <= rho * c_i of L(s + nu) - L(s), with c = |s| + 1e-12,
/// searched by projected gradient ascent (straight-through ascent direction,
/// true masked loss values). The trajectory maximum includes nu = 0, so the
/// result is never negative. rho = 0 returns exactly 0.
double loss_diff_sharpness(const ScoreLossContext& ctx, double rho, const LossDiffOptions& opt);

/// Sweep over an ascending rho grid; each level is warm-started from the
/// best perturbation found so far, which makes the series monotone
/// non-decreasing.
std::map<double, double> loss_diff_grid(const ScoreLossContext& ctx,
                                        const std::vector<double>& rho_grid,
                                        const LossDiffOptions& opt);

// ---------------------------------------------------------------------------
// Report payload
// ---------------------------------------------------------------------------

struct SharpnessReport {
    std::vector<double> lambda_per_epoch;
    std::vector<int> lambda_flat_events;  // per epoch, count of flat-flagged samples
    std::map<double, double> loss_diff;   // rho -> loss difference
};

}  // namespace s2ap

#endif  // S2AP_DIAGNOSTICS_HPP
