#ifndef S2AP_PRUNER_HPP
#define S2AP_PRUNER_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s2ap/attack.hpp"
#include "s2ap/diagnostics.hpp"
#include "s2ap/loss.hpp"
#include "s2ap/model.hpp"

namespace s2ap {

enum class PruneMode { baseline, s2ap, awp };
enum class BestTracking { iteration, epoch };

struct PruneConfig {
    double sparsity = 0.5;
    double gamma = 0.001;  // perturbation scale
    double eta = 0.01;     // normalized-step length
    int epochs = 20;
    int warmup_epochs = 5;
    PruneMode mode = PruneMode::s2ap;
    BestTracking best_tracking = BestTracking::epoch;
    bool rlth = false;  // random init, no pretraining / finetuning
    LossSpec loss;
    RankRule rank = RankRule::magnitude;
    int batch_size = 64;
    uint64_t seed = 0;

    void validate() const;
};

/// Lambda-max sampling during the search. Runs on a separate random stream,
/// so enabling it never changes the training trajectory.
struct PruneDiagnostics {
    bool enabled = false;
    int lambda_iterations = 10;
    int samples_per_epoch = 4;
};

/// Per-iteration snapshot for invariant checks (restore exactness, weight
/// immutability). Flat vectors cover the prunable layers only.
struct IterationRecord {
    int epoch = 0;
    int iteration = 0;
    double loss = 0.0;                // line-4 robust loss at the entry scores
    std::vector<double> s_entry;
    std::vector<double> z;            // projected perturbation (zero when inactive)
    std::vector<double> step;         // eta * normalized gradient applied to s
    std::vector<double> s_after;
};

using PruneObserver = std::function<void(const IterationRecord&)>;

struct PruneResult {
    std::vector<Tensor> best_masks;        // m* = M(s*, k), one per layer
    std::vector<double> best_scores;       // s* flattened over prunable layers
    double best_loss = 0.0;                // tracked loss associated with s*
    std::vector<double> epoch_mean_loss;
    MaskTrace trace;                       // [0] = initial mask, then one per epoch
    SharpnessReport sharpness;
    std::vector<std::string> events;
};

/// One single-step score perturbation: z = eta * g / ||g|| (global norm over
/// the prunable layers, gradient of the robust loss at s with the fixed
/// adversarial batch), then the layer-wise projection ||z_l|| <= gamma ||s_l||.
/// Writes the layers' z buffers. Returns false and leaves z at zero when the
/// gradient norm vanishes.
bool perturb_scores(Network& net, const SparsitySpec& spec, RankRule rank, const Tensor& x,
                    const Tensor* x_adv, const std::vector<int>& y, const LossSpec& loss,
                    double gamma, double eta, std::vector<std::string>* events = nullptr);

/// Convenience overload matching the operation contract: crafts the
/// adversarial batch itself before perturbing.
bool perturb_scores(Network& net, const SparsitySpec& spec, RankRule rank, const Tensor& x,
                    const std::vector<int>& y, const LossSpec& loss, const AttackConfig& attack,
                    double gamma, double eta, uint64_t seed,
                    std::vector<std::string>* events = nullptr);

/// The mask search. Weights (and biases) are bit-identical before and after;
/// only scores move. On return the layers' m buffers hold the best mask m*.
/// mode == baseline runs the plain score optimization; s2ap adds the
/// score-space perturbation after the warm-up epochs; awp perturbs the
/// weights instead (the ablation).
PruneResult run_prune(Network& net, const Tensor& x_train, const std::vector<int>& y_train,
                      const PruneConfig& cfg, const AttackConfig& attack,
                      const PruneDiagnostics& diag = {}, const PruneObserver* observer = nullptr);

const char* prune_mode_name(PruneMode mode);

}  // namespace s2ap

#endif  // S2AP_PRUNER_HPP
