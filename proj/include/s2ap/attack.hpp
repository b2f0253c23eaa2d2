#ifndef S2AP_ATTACK_HPP
#define S2AP_ATTACK_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "s2ap/model.hpp"

namespace s2ap {

struct AttackConfig {
    double epsilon = 0.08;  // l-inf budget, input units
    double alpha = 0.02;    // step size
    int steps = 10;
    bool random_start = true;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;

    void validate() const;
};

/// What the attacker maximizes: cross-entropy against the labels, or KL
/// divergence from the clean predictive distribution (TRADES inner problem).
enum class AttackObjective { cross_entropy, kl_from_clean };

/// l-inf projected gradient ascent. The effective weights (and therefore the
/// mask) are fixed for the whole attack. Every intermediate iterate stays
/// inside both the epsilon ball around x and the [clamp_lo, clamp_hi] box;
/// epsilon = 0 returns x unchanged. Bit-deterministic for a fixed seed.
/// `on_step`, when set, observes each intermediate iterate.
Tensor pgd_attack(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg, AttackObjective objective,
                  uint64_t seed,
                  const std::function<void(const Tensor&)>* on_step = nullptr);

/// Percentage of correctly classified samples.
double clean_accuracy(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                      const std::vector<int>& y);

/// Percentage of samples classified correctly under every PGD restart
/// (cross-entropy objective). The evaluation default is steps=50 with two
/// restarts, reported as pgd50_acc.
double robust_accuracy(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                       const std::vector<int>& y, const AttackConfig& cfg, int restarts,
                       uint64_t seed);

}  // namespace s2ap

#endif  // S2AP_ATTACK_HPP
