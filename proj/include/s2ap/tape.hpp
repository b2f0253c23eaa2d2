#ifndef S2AP_TAPE_HPP
#define S2AP_TAPE_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "s2ap/tensor.hpp"

namespace s2ap {

/// Reverse-mode autodiff over a flat operation tape.
///
/// Values are computed eagerly as ops are recorded; backward() walks the
/// tape in strict reverse insertion order and accumulates gradients, so two
/// identical runs produce bit-identical results. The op set is exactly what
/// the training pipeline needs: matmul, add (with row broadcast), mul, relu,
/// log-softmax, mean negative log-likelihood, mean row KL between
/// log-probability matrices, sum/mean reductions and elementwise clamp.
class Tape {
   public:
    using NodeId = int;

    /// Registers an external tensor as a leaf. Its value is copied; if it
    /// requires grad, backward() writes the accumulated gradient back into
    /// tensor.grad (overwriting, not adding).
    NodeId leaf(Tensor& tensor);

    /// Leaf owned by the tape; never receives a gradient.
    NodeId constant(Tensor value);

    NodeId matmul(NodeId a, NodeId b);
    /// Elementwise add; also accepts b of shape (m) broadcast across the
    /// rows of a of shape (n, m) (bias addition).
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId relu(NodeId a);
    /// Row-wise log-softmax over the last dimension of a (n, c) tensor.
    NodeId log_softmax(NodeId a);
    /// Mean over rows of -logp[i, labels[i]]. Returns a scalar.
    NodeId nll(NodeId logp, std::vector<int> labels);
    /// Mean over rows of KL(exp(logp) || exp(logq)). Returns a scalar.
    NodeId kl_div(NodeId logp, NodeId logq);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId clamp(NodeId a, double lo, double hi);

    const Tensor& value(NodeId id) const { return nodes_.at(static_cast<size_t>(id)).value; }
    double scalar(NodeId id) const;
    const std::vector<double>& grad(NodeId id) const;

    /// Backpropagates from a scalar root. Every registered leaf with
    /// requires_grad receives its gradient (zero if unreachable).
    void backward(NodeId root);

    size_t node_count() const { return nodes_.size(); }

   private:
    enum class Op {
        leaf,
        constant,
        matmul,
        add,
        add_rowbcast,
        mul,
        relu,
        log_softmax,
        nll,
        kl_div,
        sum,
        mean,
        clamp,
    };

    struct Node {
        Op op;
        NodeId in0 = -1;
        NodeId in1 = -1;
        Tensor value;
        std::vector<double> grad;
        Tensor* external = nullptr;  // leaf write-back target
        std::vector<int> labels;     // nll
        double lo = 0.0, hi = 0.0;   // clamp
    };

    NodeId push(Node node);
    Node& at(NodeId id) { return nodes_.at(static_cast<size_t>(id)); }
    const Node& at(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }
    static const char* op_name(Op op);

    std::vector<Node> nodes_;
};

}  // namespace s2ap

#endif  // S2AP_TAPE_HPP
