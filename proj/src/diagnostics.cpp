#include "s2ap/diagnostics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "s2ap/rng.hpp"

namespace s2ap {

// --------------------------- mask stability --------------------------------

void MaskTrace::append_bits(const std::vector<uint8_t>& bits) {
    if (masks.empty()) {
        bit_count = static_cast<int64_t>(bits.size());
    } else if (bit_count != static_cast<int64_t>(bits.size())) {
        throw std::invalid_argument("mask trace: bit count changed between snapshots");
    }
    std::vector<uint64_t> packed((bits.size() + 63) / 64, 0);
    for (size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 64] |= (1ULL << (i % 64));
    masks.push_back(std::move(packed));
}

std::vector<uint8_t> mask_bits(const Network& net, const std::vector<Tensor>& masks) {
    std::vector<uint8_t> bits;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        if (!net.layers()[l].prunable) continue;
        for (double v : masks[l].data) bits.push_back(v != 0.0 ? 1 : 0);
    }
    return bits;
}

double hamming(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b, int64_t bits) {
    if (a.size() != b.size()) throw std::invalid_argument("hamming: word count mismatch");
    if (bits <= 0) throw std::invalid_argument("hamming: empty masks");
    int64_t differ = 0;
    for (size_t i = 0; i < a.size(); ++i) differ += std::popcount(a[i] ^ b[i]);
    return static_cast<double>(differ) / static_cast<double>(bits);
}

std::vector<double> hamming_trace(const MaskTrace& trace) {
    if (trace.size() < 2) throw std::invalid_argument("hamming_trace: need at least two masks");
    std::vector<double> h;
    h.reserve(trace.size() - 1);
    for (size_t t = 1; t < trace.size(); ++t)
        h.push_back(hamming(trace.masks[0], trace.masks[t], trace.bit_count));
    return h;
}

std::vector<double> hamming_diff(const MaskTrace& orig, const MaskTrace& s2ap) {
    if (orig.size() != s2ap.size() || orig.bit_count != s2ap.bit_count) {
        throw std::invalid_argument("hamming_diff: trace length or bit count mismatch");
    }
    std::vector<double> ho = hamming_trace(orig);
    std::vector<double> hs = hamming_trace(s2ap);
    std::vector<double> diff(ho.size());
    for (size_t i = 0; i < ho.size(); ++i) diff[i] = ho[i] - hs[i];
    return diff;
}

// ------------------------------ curvature ----------------------------------

std::vector<double> hvp(const GradFn& grad, const std::vector<double>& s,
                        const std::vector<double>& v) {
    const double vnorm = l2_norm(v);
    if (vnorm <= 0.0) throw std::invalid_argument("hvp: direction must be nonzero");
    double snorm = l2_norm(s);
    if (snorm == 0.0) snorm = 1.0;  // degenerate center; keep the step finite
    const double eps = 1e-4 * snorm / vnorm;

    std::vector<double> plus(s), minus(s);
    for (size_t i = 0; i < s.size(); ++i) {
        plus[i] += eps * v[i];
        minus[i] -= eps * v[i];
    }
    std::vector<double> gp = grad(plus);
    std::vector<double> gm = grad(minus);
    std::vector<double> out(s.size());
    for (size_t i = 0; i < s.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
    return out;
}

LambdaResult lambda_max_from(const GradFn& grad, const std::vector<double>& s, int iterations,
                             std::vector<double> v0) {
    if (iterations < 1) throw std::invalid_argument("lambda_max: iterations must be >= 1");
    std::vector<double> v = std::move(v0);
    double n = l2_norm(v);
    if (n == 0.0) {
        v.assign(s.size(), 0.0);
        v[0] = 1.0;
        n = 1.0;
    }
    for (double& x : v) x /= n;

    for (int t = 0; t < iterations; ++t) {
        std::vector<double> hv = hvp(grad, s, v);
        const double hn = l2_norm(hv);
        if (hn < 1e-12) return {0.0, true};
        for (size_t i = 0; i < v.size(); ++i) v[i] = hv[i] / hn;
    }
    std::vector<double> hv = hvp(grad, s, v);
    return {dot(v, hv), false};
}

LambdaResult lambda_max(const GradFn& grad, const std::vector<double>& s, int iterations,
                        uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(s.size());
    for (double& x : v) x = rng.normal();
    return lambda_max_from(grad, s, iterations, std::move(v));
}

// ----------------------- score-space loss plumbing -------------------------

std::vector<double> gather_scores(const Network& net) {
    std::vector<double> flat;
    for (const auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        flat.insert(flat.end(), layer.s.data.begin(), layer.s.data.end());
    }
    return flat;
}

void scatter_scores(Network& net, const std::vector<double>& flat) {
    size_t pos = 0;
    for (auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        std::copy(flat.begin() + static_cast<long>(pos),
                  flat.begin() + static_cast<long>(pos + layer.s.data.size()),
                  layer.s.data.begin());
        pos += layer.s.data.size();
    }
    if (pos != flat.size()) throw std::invalid_argument("scatter_scores: length mismatch");
}

std::vector<double> gather_weights(const Network& net) {
    std::vector<double> flat;
    for (const auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        flat.insert(flat.end(), layer.w.data.begin(), layer.w.data.end());
    }
    return flat;
}

namespace {

/// Evaluates the context loss with the given per-layer effective weights,
/// optionally collecting the flat STE gradient w ⊙ dL/d_eff.
double eval_ctx(const ScoreLossContext& ctx, std::vector<Tensor>& eff,
                std::vector<double>* flat_ste_grad) {
    const Network& net = *ctx.net;
    if (flat_ste_grad) {
        for (size_t l = 0; l < net.layer_count(); ++l)
            if (net.layers()[l].prunable) eff[l].set_requires_grad(true);
    }
    std::vector<Tensor> bias = bias_copies(net);
    Tensor x_adv = ctx.x_adv;
    Tensor* adv = ctx.loss.kind == LossKind::clean_ce ? nullptr : &x_adv;
    const double value = batch_loss(net, eff, bias, ctx.x, adv, ctx.y, ctx.loss);
    if (flat_ste_grad) {
        flat_ste_grad->clear();
        for (size_t l = 0; l < net.layer_count(); ++l) {
            const PrunableLayer& layer = net.layers()[l];
            if (!layer.prunable) continue;
            for (size_t i = 0; i < layer.w.data.size(); ++i)
                flat_ste_grad->push_back(eff[l].grad[i] * layer.w.data[i]);
        }
    }
    return value;
}

std::vector<Tensor> eff_at_scores(const ScoreLossContext& ctx, const std::vector<double>& scores) {
    // Mask recomputed from the given score point.
    const Network& net = *ctx.net;
    std::vector<Tensor> eff;
    size_t pos = 0;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const PrunableLayer& layer = net.layers()[l];
        if (!layer.prunable) {
            eff.push_back(layer.w);
            continue;
        }
        Tensor s_point = Tensor::zeros(layer.w.shape);
        for (size_t i = 0; i < s_point.data.size(); ++i) s_point.data[i] = scores[pos + i];
        Tensor mask = topk_mask(s_point, ctx.spec->retained[l], ctx.rank);
        Tensor e = layer.w;
        for (size_t i = 0; i < e.data.size(); ++i) e.data[i] *= mask.data[i];
        eff.push_back(std::move(e));
        pos += layer.w.data.size();
    }
    return eff;
}

}  // namespace

GradFn frozen_mask_grad_fn(const ScoreLossContext& ctx) {
    const Network& net = *ctx.net;
    // Reference point and frozen masks captured now.
    std::vector<double> s_ref = gather_scores(net);
    std::vector<Tensor> masks_ref = masks_from_scores(net, *ctx.spec, ctx.rank, ScorePoint::s);
    return [&ctx, s_ref = std::move(s_ref),
            masks_ref = std::move(masks_ref)](const std::vector<double>& s_point) {
        const Network& n = *ctx.net;
        std::vector<Tensor> eff;
        size_t pos = 0;
        for (size_t l = 0; l < n.layer_count(); ++l) {
            const PrunableLayer& layer = n.layers()[l];
            if (!layer.prunable) {
                eff.push_back(layer.w);
                continue;
            }
            Tensor e = layer.w;
            for (size_t i = 0; i < e.data.size(); ++i) {
                e.data[i] *= masks_ref[l].data[i] + (s_point[pos + i] - s_ref[pos + i]);
            }
            eff.push_back(std::move(e));
            pos += layer.w.data.size();
        }
        std::vector<double> g;
        eval_ctx(ctx, eff, &g);
        return g;
    };
}

double masked_loss_at(const ScoreLossContext& ctx, const std::vector<double>& scores) {
    std::vector<Tensor> eff = eff_at_scores(ctx, scores);
    return eval_ctx(ctx, eff, nullptr);
}

// ------------------------ loss-difference sharpness ------------------------

namespace {

struct AscentOutcome {
    double best_diff = 0.0;
    std::vector<double> best_nu;
};

/// Projected gradient ascent inside |nu_i| <= rho * c_i, tracking the best
/// observed loss difference including the start point.
void ascend(const ScoreLossContext& ctx, const std::vector<double>& s_ref, double loss_ref,
            const std::vector<double>& c, double rho, std::vector<double> nu, int steps,
            AscentOutcome& out) {
    const size_t p = s_ref.size();
    auto eval_at = [&](const std::vector<double>& nu_try) {
        std::vector<double> s_try(p);
        for (size_t i = 0; i < p; ++i) s_try[i] = s_ref[i] + nu_try[i];
        return masked_loss_at(ctx, s_try) - loss_ref;
    };

    double diff = eval_at(nu);
    if (diff > out.best_diff) {
        out.best_diff = diff;
        out.best_nu = nu;
    }

    for (int step = 0; step < steps; ++step) {
        std::vector<double> s_try(p);
        for (size_t i = 0; i < p; ++i) s_try[i] = s_ref[i] + nu[i];
        // Straight-through ascent direction at the current point.
        std::vector<Tensor> eff = eff_at_scores(ctx, s_try);
        std::vector<double> g;
        eval_ctx(ctx, eff, &g);
        for (size_t i = 0; i < p; ++i) {
            const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            double v = nu[i] + 0.25 * rho * c[i] * sign;
            const double bound = rho * c[i];
            nu[i] = std::min(std::max(v, -bound), bound);
        }
        diff = eval_at(nu);
        if (diff > out.best_diff) {
            out.best_diff = diff;
            out.best_nu = nu;
        }
    }
}

AscentOutcome run_loss_diff(const ScoreLossContext& ctx, double rho, const LossDiffOptions& opt,
                            const std::vector<double>* warm_start) {
    const std::vector<double> s_ref = gather_scores(*ctx.net);
    const size_t p = s_ref.size();
    std::vector<double> c(p);
    for (size_t i = 0; i < p; ++i) c[i] = std::abs(s_ref[i]) + 1e-12;
    const double loss_ref = masked_loss_at(ctx, s_ref);

    AscentOutcome out;
    out.best_nu.assign(p, 0.0);
    if (rho == 0.0) return out;

    // Restart 0 starts at the origin (or the warm start carried in from a
    // smaller ball); further restarts sample uniformly inside the box.
    std::vector<double> start0(p, 0.0);
    if (warm_start && warm_start->size() == p) {
        start0 = *warm_start;
        for (size_t i = 0; i < p; ++i) {
            const double bound = rho * c[i];
            start0[i] = std::min(std::max(start0[i], -bound), bound);
        }
        // Keep the origin in the candidate set as well.
        ascend(ctx, s_ref, loss_ref, c, rho, std::vector<double>(p, 0.0), 0, out);
    }
    ascend(ctx, s_ref, loss_ref, c, rho, std::move(start0), opt.steps, out);
    for (int r = 1; r < opt.restarts; ++r) {
        Rng rng(substream(opt.seed, stream::loss_diff, static_cast<uint64_t>(r)));
        std::vector<double> nu(p);
        for (size_t i = 0; i < p; ++i) nu[i] = rng.uniform(-rho * c[i], rho * c[i]);
        ascend(ctx, s_ref, loss_ref, c, rho, std::move(nu), opt.steps, out);
    }
    return out;
}

}  // namespace

double loss_diff_sharpness(const ScoreLossContext& ctx, double rho, const LossDiffOptions& opt) {
    if (rho < 0.0) throw std::invalid_argument("loss_diff_sharpness: rho must be >= 0");
    return run_loss_diff(ctx, rho, opt, nullptr).best_diff;
}

std::map<double, double> loss_diff_grid(const ScoreLossContext& ctx,
                                        const std::vector<double>& rho_grid,
                                        const LossDiffOptions& opt) {
    std::vector<double> grid = rho_grid;
    std::sort(grid.begin(), grid.end());
    std::map<double, double> result;
    std::vector<double> carry;
    double best_so_far = 0.0;
    for (double rho : grid) {
        AscentOutcome out = run_loss_diff(ctx, rho, opt, carry.empty() ? nullptr : &carry);
        if (out.best_diff > best_so_far) {
            best_so_far = out.best_diff;
            carry = out.best_nu;
        }
        result[rho] = best_so_far;
    }
    return result;
}

}  // namespace s2ap
