#include "s2ap/attack.hpp"

#include <cmath>
#include <stdexcept>

#include "s2ap/rng.hpp"

namespace s2ap {

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
    if (alpha <= 0.0) throw std::invalid_argument("attack: alpha must be > 0");
    if (epsilon > 0.0 && alpha > epsilon)
        throw std::invalid_argument("attack: alpha must be <= epsilon");
    if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
    if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("attack: clamp_lo must be < clamp_hi");
}

namespace {

inline double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

/// Gradient of the attack objective with respect to x_adv.
std::vector<double> input_gradient(const Network& net, const std::vector<Tensor>& eff,
                                   Tensor& x_adv, const std::vector<int>& y,
                                   AttackObjective objective, const Tensor* logp_clean) {
    Tape tape;
    std::vector<Tape::NodeId> w_nodes, b_nodes;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        Tensor e = eff[l];
        w_nodes.push_back(tape.constant(std::move(e)));
        b_nodes.push_back(tape.constant(net.layers()[l].bias));
    }
    x_adv.set_requires_grad(true);
    Tape::NodeId x_node = tape.leaf(x_adv);
    Tape::NodeId logp = net.forward_graph(tape, x_node, w_nodes, b_nodes);
    Tape::NodeId loss;
    if (objective == AttackObjective::cross_entropy) {
        loss = tape.nll(logp, y);
    } else {
        loss = tape.kl_div(logp, tape.constant(*logp_clean));
    }
    tape.backward(loss);
    std::vector<double> g = x_adv.grad;
    x_adv.set_requires_grad(false);
    return g;
}

}  // namespace

Tensor pgd_attack(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                  const std::vector<int>& y, const AttackConfig& cfg, AttackObjective objective,
                  uint64_t seed, const std::function<void(const Tensor&)>* on_step) {
    cfg.validate();
    if (cfg.epsilon == 0.0) return x;

    Tensor logp_clean;
    if (objective == AttackObjective::kl_from_clean) logp_clean = forward_logp(net, eff, x);

    Tensor x_adv = x;
    if (cfg.random_start) {
        Rng rng(seed);
        for (size_t i = 0; i < x_adv.data.size(); ++i) {
            double v = x_adv.data[i] + rng.uniform(-cfg.epsilon, cfg.epsilon);
            x_adv.data[i] = clip(v, cfg.clamp_lo, cfg.clamp_hi);
        }
        if (on_step) (*on_step)(x_adv);
    }

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<double> g =
            input_gradient(net, eff, x_adv, y, objective, &logp_clean);
        for (size_t i = 0; i < x_adv.data.size(); ++i) {
            const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            double v = x_adv.data[i] + cfg.alpha * sign;
            // Project onto the epsilon ball around x, then the input box.
            v = clip(v, x.data[i] - cfg.epsilon, x.data[i] + cfg.epsilon);
            v = clip(v, cfg.clamp_lo, cfg.clamp_hi);
            x_adv.data[i] = v;
        }
        if (on_step) (*on_step)(x_adv);
    }
    return x_adv;
}

double clean_accuracy(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                      const std::vector<int>& y) {
    Tensor logp = forward_logp(net, eff, x);
    int64_t correct = 0;
    for (int64_t i = 0; i < logp.shape[0]; ++i)
        if (argmax_row(logp, i) == y[static_cast<size_t>(i)]) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(logp.shape[0]);
}

double robust_accuracy(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                       const std::vector<int>& y, const AttackConfig& cfg, int restarts,
                       uint64_t seed) {
    const int64_t n = x.shape[0];
    std::vector<bool> robust(static_cast<size_t>(n), true);
    for (int r = 0; r < restarts; ++r) {
        Tensor x_adv = pgd_attack(net, eff, x, y, cfg, AttackObjective::cross_entropy,
                                  substream(seed, stream::eval_attack, static_cast<uint64_t>(r)));
        Tensor logp = forward_logp(net, eff, x_adv);
        for (int64_t i = 0; i < n; ++i)
            if (argmax_row(logp, i) != y[static_cast<size_t>(i)]) robust[static_cast<size_t>(i)] = false;
    }
    int64_t count = 0;
    for (bool b : robust)
        if (b) ++count;
    return 100.0 * static_cast<double>(count) / static_cast<double>(n);
}

}  // namespace s2ap
