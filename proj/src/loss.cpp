#include "s2ap/loss.hpp"

#include <stdexcept>

namespace s2ap {

void LossSpec::validate() const {
    if (beta < 0.0) throw std::invalid_argument("loss: beta must be >= 0");
}

AttackObjective attack_objective(LossKind kind) {
    return kind == LossKind::trades ? AttackObjective::kl_from_clean
                                    : AttackObjective::cross_entropy;
}

double batch_loss(const Network& net, std::vector<Tensor>& eff, std::vector<Tensor>& bias,
                  const Tensor& x, Tensor* x_adv, const std::vector<int>& y,
                  const LossSpec& spec) {
    spec.validate();
    if (y.empty()) throw std::invalid_argument("batch_loss: empty batch");
    if (spec.kind != LossKind::clean_ce && x_adv == nullptr) {
        throw std::invalid_argument("batch_loss: adversarial inputs required for this loss kind");
    }

    Tape tape;
    std::vector<Tape::NodeId> w_nodes, b_nodes;
    bool want_grad = false;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        w_nodes.push_back(tape.leaf(eff[l]));
        b_nodes.push_back(tape.leaf(bias[l]));
        want_grad = want_grad || eff[l].requires_grad || bias[l].requires_grad;
    }

    Tape::NodeId loss;
    switch (spec.kind) {
        case LossKind::clean_ce: {
            Tape::NodeId logp = net.forward_graph(tape, tape.constant(x), w_nodes, b_nodes);
            loss = tape.nll(logp, y);
            break;
        }
        case LossKind::pgd_at: {
            want_grad = want_grad || x_adv->requires_grad;
            Tape::NodeId logp =
                net.forward_graph(tape, tape.leaf(*x_adv), w_nodes, b_nodes);
            loss = tape.nll(logp, y);
            break;
        }
        case LossKind::trades: {
            want_grad = want_grad || x_adv->requires_grad;
            Tape::NodeId logp_clean = net.forward_graph(tape, tape.constant(x), w_nodes, b_nodes);
            Tape::NodeId logp_adv =
                net.forward_graph(tape, tape.leaf(*x_adv), w_nodes, b_nodes);
            Tape::NodeId ce = tape.nll(logp_clean, y);
            Tape::NodeId kl = tape.kl_div(logp_adv, logp_clean);
            loss = tape.add(ce, tape.mul(tape.constant(Tensor::scalar(spec.beta)), kl));
            break;
        }
        default:
            throw std::logic_error("batch_loss: unknown loss kind");
    }

    if (want_grad) tape.backward(loss);
    return tape.scalar(loss);
}

double robust_loss(const Network& net, const std::vector<Tensor>& eff, const Tensor& x,
                   const std::vector<int>& y, const LossSpec& spec, const AttackConfig& attack,
                   uint64_t seed) {
    std::vector<Tensor> eff_local = eff;
    std::vector<Tensor> bias = bias_copies(net);
    if (spec.kind == LossKind::clean_ce) {
        return batch_loss(net, eff_local, bias, x, nullptr, y, spec);
    }
    Tensor x_adv = pgd_attack(net, eff, x, y, attack, attack_objective(spec.kind), seed);
    return batch_loss(net, eff_local, bias, x, &x_adv, y, spec);
}

std::vector<Tensor> bias_copies(const Network& net) {
    std::vector<Tensor> bias;
    bias.reserve(net.layer_count());
    for (const auto& layer : net.layers()) bias.push_back(layer.bias);
    return bias;
}

}  // namespace s2ap
