#include "s2ap/finetune.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "s2ap/rng.hpp"

namespace s2ap {

void FinetuneConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("finetune: epochs must be >= 1");
    if (eta <= 0.0) throw std::invalid_argument("finetune: eta must be > 0");
    if (mode == FinetuneMode::s2ap_awp && gamma <= 0.0)
        throw std::invalid_argument("finetune: gamma must be > 0 for s2ap_awp");
    if (batch_size < 1) throw std::invalid_argument("finetune: batch_size must be >= 1");
    loss.validate();
}

namespace {

// Flattened weights over all layers (records cover every layer; pruned
// positions are identified through the masks).
std::vector<double> gather_all_w(const Network& net) {
    std::vector<double> flat;
    for (const auto& layer : net.layers())
        flat.insert(flat.end(), layer.w.data.begin(), layer.w.data.end());
    return flat;
}

}  // namespace

FinetuneResult run_finetune(Network& net, const Tensor& x_train, const std::vector<int>& y_train,
                            const FinetuneConfig& cfg, const AttackConfig& attack,
                            const FinetuneObserver* observer) {
    cfg.validate();
    attack.validate();
    FinetuneResult result;

    for (auto& layer : net.layers()) std::fill(layer.nu.data.begin(), layer.nu.data.end(), 0.0);

    const int64_t n = x_train.shape[0];
    const int iters_per_epoch = static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int64_t d = x_train.shape[1];

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(substream(cfg.seed, stream::shuffle, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        const double eta =
            cfg.step_decay && epoch >= cfg.epochs / 2 ? 0.5 * cfg.eta : cfg.eta;
        double epoch_loss = 0.0;

        for (int it = 0; it < iters_per_epoch; ++it) {
            const size_t begin = static_cast<size_t>(it) * static_cast<size_t>(cfg.batch_size);
            const size_t end =
                std::min(static_cast<size_t>(n), begin + static_cast<size_t>(cfg.batch_size));
            Tensor xb = Tensor::zeros({static_cast<int64_t>(end - begin), d});
            std::vector<int> yb;
            yb.reserve(end - begin);
            for (size_t r = begin; r < end; ++r) {
                const int64_t src = order[r];
                std::copy(x_train.data.begin() + src * d, x_train.data.begin() + (src + 1) * d,
                          xb.data.begin() + static_cast<int64_t>(r - begin) * d);
                yb.push_back(y_train[static_cast<size_t>(src)]);
            }

            const std::vector<Tensor> masks = layer_masks(net);
            Tensor x_adv;
            Tensor* adv = nullptr;
            if (cfg.loss.kind != LossKind::clean_ce) {
                std::vector<Tensor> eff_fixed = effective_masked(net, masks);
                x_adv = pgd_attack(net, eff_fixed, xb, yb, attack,
                                   attack_objective(cfg.loss.kind),
                                   substream(cfg.seed, stream::attack,
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(it)));
                adv = &x_adv;
            }

            FinetuneRecord record;
            record.epoch = epoch;
            record.iteration = it;
            if (observer) record.w_entry = gather_all_w(net);

            auto eval = [&](bool add_nu, std::vector<Tensor>& eff_out,
                            std::vector<Tensor>& bias_out) {
                eff_out = effective_masked(net, masks, add_nu);
                for (auto& e : eff_out) e.set_requires_grad(true);
                bias_out = bias_copies(net);
                for (auto& b : bias_out) b.set_requires_grad(true);
                Tensor adv_copy;
                Tensor* adv_ptr = nullptr;
                if (adv) {
                    adv_copy = *adv;
                    adv_ptr = &adv_copy;
                }
                return batch_loss(net, eff_out, bias_out, xb, adv_ptr, yb, cfg.loss);
            };

            std::vector<Tensor> eff, bias;
            const double loss_value = eval(false, eff, bias);
            epoch_loss += loss_value;
            record.loss = loss_value;

            std::vector<double> nu_flat;
            if (cfg.mode == FinetuneMode::s2ap_awp) {
                // Single normalized ascent step on nu over the surviving
                // weights: d loss / d nu = d loss / d eff ⊙ m.
                std::vector<double> g_nu;
                for (size_t l = 0; l < net.layer_count(); ++l) {
                    for (size_t i = 0; i < eff[l].grad.size(); ++i)
                        g_nu.push_back(eff[l].grad[i] * masks[l].data[i]);
                }
                const double gn = l2_norm(g_nu);
                if (gn == 0.0) {
                    result.events.push_back("finetune: zero nu gradient at epoch " +
                                            std::to_string(epoch) + " iter " + std::to_string(it));
                } else {
                    for (double& v : g_nu) v *= eta / gn;
                    // Layer-wise projection onto ||nu_l|| <= gamma ||w_l ⊙ m_l||
                    // (the live weights of the pruned parameterization).
                    size_t pos = 0;
                    for (size_t l = 0; l < net.layer_count(); ++l) {
                        const PrunableLayer& layer = net.layers()[l];
                        const size_t count = layer.w.data.size();
                        double ref_sq = 0.0, pert_sq = 0.0;
                        for (size_t i = 0; i < count; ++i) {
                            const double lw = layer.w.data[i] * masks[l].data[i];
                            ref_sq += lw * lw;
                            pert_sq += g_nu[pos + i] * g_nu[pos + i];
                        }
                        const double bound = cfg.gamma * std::sqrt(ref_sq);
                        const double norm = std::sqrt(pert_sq);
                        if (norm > bound) {
                            const double scale = bound / norm;
                            for (size_t i = 0; i < count; ++i) g_nu[pos + i] *= scale;
                        }
                        pos += count;
                    }
                    size_t cursor = 0;
                    for (auto& layer : net.layers()) {
                        std::copy(g_nu.begin() + static_cast<long>(cursor),
                                  g_nu.begin() + static_cast<long>(cursor + layer.nu.data.size()),
                                  layer.nu.data.begin());
                        cursor += layer.nu.data.size();
                    }
                    nu_flat = g_nu;
                    // Gradient at the perturbed point (w + nu) ⊙ m.
                    eval(true, eff, bias);
                    for (auto& layer : net.layers())
                        std::fill(layer.nu.data.begin(), layer.nu.data.end(), 0.0);
                }
            }

            // Joint normalized step over weights and biases; updates to
            // pruned positions are explicitly zeroed.
            std::vector<double> g_all;
            for (size_t l = 0; l < net.layer_count(); ++l) {
                for (size_t i = 0; i < eff[l].grad.size(); ++i)
                    g_all.push_back(eff[l].grad[i] * masks[l].data[i]);
                for (double gb : bias[l].grad) g_all.push_back(gb);
            }
            const double norm = l2_norm(g_all);
            if (norm == 0.0) {
                result.events.push_back("finetune: zero update gradient at epoch " +
                                        std::to_string(epoch) + " iter " + std::to_string(it) +
                                        ", no-op step");
            } else {
                size_t pos = 0;
                for (size_t l = 0; l < net.layer_count(); ++l) {
                    PrunableLayer& layer = net.layers()[l];
                    for (size_t i = 0; i < layer.w.data.size(); ++i) {
                        const double upd = eta * g_all[pos + i] / norm * masks[l].data[i];
                        layer.w.data[i] -= upd;
                    }
                    pos += layer.w.data.size();
                    for (size_t i = 0; i < layer.bias.data.size(); ++i) {
                        layer.bias.data[i] -= eta * g_all[pos + i] / norm;
                    }
                    pos += layer.bias.data.size();
                }
            }

            if (observer) {
                record.nu = std::move(nu_flat);
                if (record.nu.empty()) record.nu.assign(record.w_entry.size(), 0.0);
                // Record the applied prunable-weight step.
                record.w_after = gather_all_w(net);
                record.step_w.resize(record.w_entry.size());
                for (size_t i = 0; i < record.step_w.size(); ++i)
                    record.step_w[i] = record.w_entry[i] - record.w_after[i];
                (*observer)(record);
            }
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(iters_per_epoch));
#ifndef NDEBUG
        for (const auto& layer : net.layers()) {
            assert(layer.w.all_finite() && layer.bias.all_finite());
        }
#endif
    }
    return result;
}

}  // namespace s2ap
