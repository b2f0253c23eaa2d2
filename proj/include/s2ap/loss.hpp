#ifndef S2AP_LOSS_HPP
#define S2AP_LOSS_HPP

#include <cstdint>
#include <vector>

#include "s2ap/attack.hpp"
#include "s2ap/model.hpp"

namespace s2ap {

enum class LossKind { clean_ce, pgd_at, trades };

struct LossSpec {
    LossKind kind = LossKind::trades;
    double beta = 6.0;  // TRADES trade-off; used only for trades

    void validate() const;
};

AttackObjective attack_objective(LossKind kind);

/// Loss on one batch with the adversarial inputs already crafted and held
/// fixed:
///   clean_ce : mean CE on x
///   pgd_at   : mean CE on x_adv
///   trades   : mean CE on x + beta * mean KL(logp(x_adv) || logp(x))
/// Gradients are produced for whichever of eff / bias / x_adv have
/// requires_grad set before the call.
double batch_loss(const Network& net, std::vector<Tensor>& eff, std::vector<Tensor>& bias,
                  const Tensor& x, Tensor* x_adv, const std::vector<int>& y,
                  const LossSpec& spec);

/// The full robust loss: crafts the inner-maximization adversarial examples
/// with PGD (CE objective for pgd_at, KL objective for trades), then
/// evaluates batch_loss. clean_ce ignores the attack entirely.
double robust_loss(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                   const std::vector<int>& y, const LossSpec& spec, const AttackConfig& attack,
                   uint64_t seed);

/// Fresh bias copies from the network, for use as tape leaves.
std::vector<Tensor> bias_copies(const Network& net);

}  // namespace s2ap

#endif  // S2AP_LOSS_HPP
