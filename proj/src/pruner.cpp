#include "s2ap/pruner.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "s2ap/rng.hpp"

namespace s2ap {

void PruneConfig::validate() const {
    if (!(sparsity >= 0.0 && sparsity < 1.0))
        throw std::invalid_argument("prune: sparsity must be in [0,1)");
    if (mode != PruneMode::baseline && gamma <= 0.0)
        throw std::invalid_argument("prune: gamma must be > 0 for s2ap/awp modes");
    if (eta <= 0.0) throw std::invalid_argument("prune: eta must be > 0");
    if (epochs < 1) throw std::invalid_argument("prune: epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw std::invalid_argument("prune: warmup_epochs must be in [0, epochs]");
    if (batch_size < 1) throw std::invalid_argument("prune: batch_size must be >= 1");
    loss.validate();
}

const char* prune_mode_name(PruneMode mode) {
    switch (mode) {
        case PruneMode::baseline: return "baseline";
        case PruneMode::s2ap: return "s2ap";
        case PruneMode::awp: return "awp";
    }
    return "?";
}

namespace {

struct BatchSlice {
    Tensor x;
    std::vector<int> y;
};

BatchSlice slice_batch(const Tensor& x, const std::vector<int>& y,
                       const std::vector<int64_t>& order, size_t begin, size_t end) {
    const int64_t d = x.shape[1];
    BatchSlice out;
    out.x = Tensor::zeros({static_cast<int64_t>(end - begin), d});
    out.y.reserve(end - begin);
    for (size_t r = begin; r < end; ++r) {
        const int64_t src = order[r];
        std::copy(x.data.begin() + src * d, x.data.begin() + (src + 1) * d,
                  out.x.data.begin() + static_cast<int64_t>(r - begin) * d);
        out.y.push_back(y[static_cast<size_t>(src)]);
    }
    return out;
}

/// Flat STE gradient over the prunable layers; `chain_nu` switches the chain
/// factor from w to w + nu (the weight-perturbed ablation).
std::vector<double> flat_ste_grad(const Network& net, const std::vector<Tensor>& eff,
                                  bool chain_nu) {
    std::vector<double> g;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const PrunableLayer& layer = net.layers()[l];
        if (!layer.prunable) continue;
        for (size_t i = 0; i < layer.w.data.size(); ++i) {
            double chain = layer.w.data[i];
            if (chain_nu) chain += layer.nu.data[i];
            g.push_back(eff[l].grad[i] * chain);
        }
    }
    return g;
}

void scatter_z(Network& net, const std::vector<double>& flat) {
    size_t pos = 0;
    for (auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        std::copy(flat.begin() + static_cast<long>(pos),
                  flat.begin() + static_cast<long>(pos + layer.z.data.size()),
                  layer.z.data.begin());
        pos += layer.z.data.size();
    }
}

void scatter_nu(Network& net, const std::vector<double>& flat) {
    size_t pos = 0;
    for (auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        std::copy(flat.begin() + static_cast<long>(pos),
                  flat.begin() + static_cast<long>(pos + layer.nu.data.size()),
                  layer.nu.data.begin());
        pos += layer.nu.data.size();
    }
}

void clear_z(Network& net) {
    for (auto& layer : net.layers()) std::fill(layer.z.data.begin(), layer.z.data.end(), 0.0);
}

void clear_nu(Network& net) {
    for (auto& layer : net.layers()) std::fill(layer.nu.data.begin(), layer.nu.data.end(), 0.0);
}

/// Layer-wise projection of a flat perturbation: each prunable layer's slice
/// is rescaled onto the ball of radius gamma * ||ref_l|| when it exceeds it.
/// `ref` selects the anchoring norm (scores for z, weights for nu).
void project_layerwise(const Network& net, std::vector<double>& flat, double gamma,
                       bool anchor_on_weights, bool mask_weights) {
    size_t pos = 0;
    for (const auto& layer : net.layers()) {
        if (!layer.prunable) continue;
        const size_t count = layer.w.data.size();
        double ref_sq = 0.0;
        for (size_t i = 0; i < count; ++i) {
            double r;
            if (anchor_on_weights) {
                r = layer.w.data[i];
                if (mask_weights) r *= layer.m.data[i];
            } else {
                r = layer.s.data[i];
            }
            ref_sq += r * r;
        }
        double pert_sq = 0.0;
        for (size_t i = 0; i < count; ++i) pert_sq += flat[pos + i] * flat[pos + i];
        const double bound = gamma * std::sqrt(ref_sq);
        const double norm = std::sqrt(pert_sq);
        if (norm > bound) {
            const double scale = bound / norm;
            for (size_t i = 0; i < count; ++i) flat[pos + i] *= scale;
        }
        pos += count;
    }
}

std::vector<Tensor> eff_with_grad(const Network& net, const std::vector<Tensor>& masks,
                                  bool add_nu = false) {
    std::vector<Tensor> eff = effective_masked(net, masks, add_nu);
    for (size_t l = 0; l < net.layer_count(); ++l)
        if (net.layers()[l].prunable) eff[l].set_requires_grad(true);
    return eff;
}

double loss_with_grads(const Network& net, std::vector<Tensor>& eff, const Tensor& x,
                       Tensor* x_adv, const std::vector<int>& y, const LossSpec& spec) {
    std::vector<Tensor> bias = bias_copies(net);
    return batch_loss(net, eff, bias, x, x_adv, y, spec);
}

std::vector<int> lambda_sample_points(int iters, int samples) {
    std::vector<int> pts;
    if (samples >= iters) {
        for (int i = 0; i < iters; ++i) pts.push_back(i);
        return pts;
    }
    for (int j = 0; j < samples; ++j) pts.push_back(j * iters / samples);
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

}  // namespace

bool perturb_scores(Network& net, const SparsitySpec& spec, RankRule rank, const Tensor& x,
                    const Tensor* x_adv, const std::vector<int>& y, const LossSpec& loss,
                    double gamma, double eta, std::vector<std::string>* events) {
    clear_z(net);
    std::vector<Tensor> masks = masks_from_scores(net, spec, rank, ScorePoint::s);
    std::vector<Tensor> eff = eff_with_grad(net, masks);
    Tensor adv_local;
    Tensor* adv = nullptr;
    if (loss.kind != LossKind::clean_ce) {
        adv_local = *x_adv;
        adv = &adv_local;
    }
    loss_with_grads(net, eff, x, adv, y, loss);
    std::vector<double> g = flat_ste_grad(net, eff, false);
    const double gn = l2_norm(g);
    if (gn == 0.0) {
        if (events) events->push_back("perturb_scores: zero gradient norm, z unchanged");
        return false;
    }
    for (double& v : g) v *= eta / gn;
    project_layerwise(net, g, gamma, /*anchor_on_weights=*/false, /*mask_weights=*/false);
    scatter_z(net, g);
    return true;
}

bool perturb_scores(Network& net, const SparsitySpec& spec, RankRule rank, const Tensor& x,
                    const std::vector<int>& y, const LossSpec& loss, const AttackConfig& attack,
                    double gamma, double eta, uint64_t seed, std::vector<std::string>* events) {
    Tensor x_adv;
    if (loss.kind != LossKind::clean_ce) {
        std::vector<Tensor> masks = masks_from_scores(net, spec, rank, ScorePoint::s);
        std::vector<Tensor> eff = effective_masked(net, masks);
        x_adv = pgd_attack(net, eff, x, y, attack, attack_objective(loss.kind), seed);
    }
    return perturb_scores(net, spec, rank, x, &x_adv, y, loss, gamma, eta, events);
}

PruneResult run_prune(Network& net, const Tensor& x_train, const std::vector<int>& y_train,
                      const PruneConfig& cfg, const AttackConfig& attack,
                      const PruneDiagnostics& diag, const PruneObserver* observer) {
    cfg.validate();
    attack.validate();
    const SparsitySpec spec = SparsitySpec::uniform(net, cfg.sparsity);

    PruneResult result;
    clear_z(net);
    clear_nu(net);
    result.trace.append_bits(
        mask_bits(net, masks_from_scores(net, spec, cfg.rank, ScorePoint::s)));

    const int64_t n = x_train.shape[0];
    const int iters_per_epoch =
        static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);
    const std::vector<int> lambda_points =
        lambda_sample_points(iters_per_epoch, diag.samples_per_epoch);

    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> best_scores = gather_scores(net);

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(substream(cfg.seed, stream::shuffle, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        const bool active = cfg.mode != PruneMode::baseline && epoch >= cfg.warmup_epochs;
        double epoch_loss = 0.0;
        double lambda_sum = 0.0;
        int lambda_count = 0;
        int lambda_flat = 0;

        for (int it = 0; it < iters_per_epoch; ++it) {
            const size_t begin = static_cast<size_t>(it) * static_cast<size_t>(cfg.batch_size);
            const size_t end = std::min(static_cast<size_t>(n),
                                        begin + static_cast<size_t>(cfg.batch_size));
            BatchSlice batch = slice_batch(x_train, y_train, order, begin, end);

            // Adversarial examples on the currently-masked model; the mask is
            // fixed for the whole attack.
            std::vector<Tensor> masks = masks_from_scores(net, spec, cfg.rank, ScorePoint::s);
            Tensor x_adv;
            Tensor* adv = nullptr;
            if (cfg.loss.kind != LossKind::clean_ce) {
                std::vector<Tensor> eff_fixed = effective_masked(net, masks);
                x_adv = pgd_attack(net, eff_fixed, batch.x, batch.y, attack,
                                   attack_objective(cfg.loss.kind),
                                   substream(cfg.seed, stream::attack,
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(it)));
                adv = &x_adv;
            }

            // Robust loss and STE gradient at the entry scores.
            std::vector<Tensor> eff = eff_with_grad(net, masks);
            const double loss_entry = loss_with_grads(net, eff, batch.x, adv, batch.y, cfg.loss);
            std::vector<double> g_entry = flat_ste_grad(net, eff, false);

            IterationRecord record;
            record.epoch = epoch;
            record.iteration = it;
            record.loss = loss_entry;
            const std::vector<double> s_entry = gather_scores(net);
            if (observer) record.s_entry = s_entry;

            if (diag.enabled &&
                std::find(lambda_points.begin(), lambda_points.end(), it) != lambda_points.end()) {
                ScoreLossContext ctx;
                ctx.net = &net;
                ctx.spec = &spec;
                ctx.rank = cfg.rank;
                ctx.x = batch.x;
                if (adv) ctx.x_adv = *adv;
                ctx.y = batch.y;
                ctx.loss = cfg.loss;
                GradFn grad_fn = frozen_mask_grad_fn(ctx);
                LambdaResult lr = lambda_max(grad_fn, s_entry, diag.lambda_iterations,
                                             substream(cfg.seed, stream::power_iter,
                                                       static_cast<uint64_t>(epoch),
                                                       static_cast<uint64_t>(it)));
                lambda_sum += lr.value;
                ++lambda_count;
                if (lr.flat) ++lambda_flat;
            }

            std::vector<double> update_grad;
            std::vector<double> z_applied(s_entry.size(), 0.0);

            if (!active) {
                update_grad = std::move(g_entry);
            } else if (cfg.mode == PruneMode::s2ap) {
                // Single ascent step on z from zero, then the layer-wise
                // gamma projection; the descent gradient is taken at s + z.
                const double gn = l2_norm(g_entry);
                if (gn == 0.0) {
                    result.events.push_back("s2ap: zero gradient norm at epoch " +
                                            std::to_string(epoch) + " iter " + std::to_string(it) +
                                            ", z unchanged");
                } else {
                    z_applied = g_entry;
                    for (double& v : z_applied) v *= cfg.eta / gn;
                    project_layerwise(net, z_applied, cfg.gamma, false, false);
                    scatter_z(net, z_applied);
                }
                std::vector<Tensor> masks_z =
                    masks_from_scores(net, spec, cfg.rank, ScorePoint::s_plus_z);
                std::vector<Tensor> eff_z = eff_with_grad(net, masks_z);
                loss_with_grads(net, eff_z, batch.x, adv, batch.y, cfg.loss);
                update_grad = flat_ste_grad(net, eff_z, false);
                clear_z(net);
            } else {  // PruneMode::awp — perturb the weights instead
                // Ascent direction on nu: d loss / d nu = d loss / d eff ⊙ m.
                std::vector<double> g_nu;
                for (size_t l = 0; l < net.layer_count(); ++l) {
                    const PrunableLayer& layer = net.layers()[l];
                    if (!layer.prunable) continue;
                    for (size_t i = 0; i < layer.w.data.size(); ++i)
                        g_nu.push_back(eff[l].grad[i] * masks[l].data[i]);
                }
                const double gn = l2_norm(g_nu);
                if (gn == 0.0) {
                    result.events.push_back("awp: zero gradient norm at epoch " +
                                            std::to_string(epoch) + " iter " + std::to_string(it) +
                                            ", nu unchanged");
                } else {
                    for (double& v : g_nu) v *= cfg.eta / gn;
                    project_layerwise(net, g_nu, cfg.gamma, /*anchor_on_weights=*/true,
                                      /*mask_weights=*/false);
                    scatter_nu(net, g_nu);
                    z_applied = g_nu;
                }
                std::vector<Tensor> eff_nu = eff_with_grad(net, masks, /*add_nu=*/true);
                loss_with_grads(net, eff_nu, batch.x, adv, batch.y, cfg.loss);
                update_grad = flat_ste_grad(net, eff_nu, /*chain_nu=*/true);
                clear_nu(net);
            }

            // Normalized descent step on the scores.
            const double un = l2_norm(update_grad);
            std::vector<double> step(s_entry.size(), 0.0);
            if (un == 0.0) {
                result.events.push_back("prune: zero update gradient at epoch " +
                                        std::to_string(epoch) + " iter " + std::to_string(it) +
                                        ", no-op step");
            } else {
                for (size_t i = 0; i < step.size(); ++i)
                    step[i] = cfg.eta * update_grad[i] / un;
                std::vector<double> s_new(s_entry.size());
                for (size_t i = 0; i < s_new.size(); ++i) s_new[i] = s_entry[i] - step[i];
                scatter_scores(net, s_new);
            }

            epoch_loss += loss_entry;
            if (cfg.best_tracking == BestTracking::iteration && loss_entry < best_loss) {
                best_loss = loss_entry;
                best_scores = s_entry;
            }

            if (observer) {
                record.z = std::move(z_applied);
                record.step = std::move(step);
                record.s_after = gather_scores(net);
                (*observer)(record);
            }
        }

        const double epoch_mean = epoch_loss / static_cast<double>(iters_per_epoch);
        result.epoch_mean_loss.push_back(epoch_mean);
        if (cfg.best_tracking == BestTracking::epoch && epoch_mean < best_loss) {
            best_loss = epoch_mean;
            best_scores = gather_scores(net);
        }

        result.trace.append_bits(
            mask_bits(net, masks_from_scores(net, spec, cfg.rank, ScorePoint::s)));
#ifndef NDEBUG
        for (const auto& layer : net.layers()) {
            assert(layer.w.all_finite() && layer.s.all_finite());
        }
#endif
        if (diag.enabled) {
            result.sharpness.lambda_per_epoch.push_back(
                lambda_count > 0 ? lambda_sum / static_cast<double>(lambda_count) : 0.0);
            result.sharpness.lambda_flat_events.push_back(lambda_flat);
        }
    }

    // Adopt the best scores and derive m* from them.
    result.best_loss = best_loss;
    result.best_scores = best_scores;
    scatter_scores(net, best_scores);
    std::vector<Tensor> final_masks = masks_from_scores(net, spec, cfg.rank, ScorePoint::s);
    for (size_t l = 0; l < net.layer_count(); ++l) net.layers()[l].m = final_masks[l];
    result.best_masks = std::move(final_masks);
    return result;
}

}  // namespace s2ap
