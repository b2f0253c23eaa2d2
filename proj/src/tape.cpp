#include "s2ap/tape.hpp"

#include <algorithm>
#include <cmath>

namespace s2ap {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

void check_matrix(const char* op, const Tensor& t) {
    if (t.shape.size() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + t.shape_string());
    }
}

}  // namespace

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::add_rowbcast: return "add";
        case Op::mul: return "mul";
        case Op::relu: return "relu";
        case Op::log_softmax: return "log_softmax";
        case Op::nll: return "nll";
        case Op::kl_div: return "kl_div";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::clamp: return "clamp";
    }
    return "?";
}

Tape::NodeId Tape::push(Node node) {
    node.grad.assign(node.value.data.size(), 0.0);
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor& tensor) {
    Node n;
    n.op = Op::leaf;
    n.value = tensor;  // copy of the current value
    n.external = &tensor;
    return push(std::move(n));
}

Tape::NodeId Tape::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    check_matrix("matmul", ta);
    check_matrix("matmul", tb);
    if (ta.shape[1] != tb.shape[0]) {
        throw ShapeError("matmul: inner dimensions differ, " + ta.shape_string() + " x " +
                         tb.shape_string());
    }
    const int64_t n = ta.shape[0], k = ta.shape[1], m = tb.shape[1];
    Node node;
    node.op = Op::matmul;
    node.in0 = a;
    node.in1 = b;
    node.value = Tensor::zeros({n, m});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = ta.data[static_cast<size_t>(i * k + p)];
            if (av == 0.0) continue;
            const double* brow = &tb.data[static_cast<size_t>(p * m)];
            double* orow = &node.value.data[static_cast<size_t>(i * m)];
            for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return push(std::move(node));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    Node node;
    node.in0 = a;
    node.in1 = b;
    if (ta.same_shape(tb)) {
        node.op = Op::add;
        node.value = ta;
        for (size_t i = 0; i < tb.data.size(); ++i) node.value.data[i] += tb.data[i];
    } else if (ta.shape.size() == 2 && tb.shape.size() == 1 && ta.shape[1] == tb.shape[0]) {
        node.op = Op::add_rowbcast;
        node.value = ta;
        const int64_t n = ta.shape[0], m = ta.shape[1];
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j)
                node.value.data[static_cast<size_t>(i * m + j)] += tb.data[static_cast<size_t>(j)];
    } else {
        throw ShapeError("add: shape mismatch " + ta.shape_string() + " vs " + tb.shape_string());
    }
    return push(std::move(node));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& ta = at(a).value;
    const Tensor& tb = at(b).value;
    check_same_shape("mul", ta, tb);
    Node node;
    node.op = Op::mul;
    node.in0 = a;
    node.in1 = b;
    node.value = ta;
    for (size_t i = 0; i < tb.data.size(); ++i) node.value.data[i] *= tb.data[i];
    return push(std::move(node));
}

Tape::NodeId Tape::relu(NodeId a) {
    Node node;
    node.op = Op::relu;
    node.in0 = a;
    node.value = at(a).value;
    for (double& v : node.value.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(node));
}

Tape::NodeId Tape::log_softmax(NodeId a) {
    const Tensor& ta = at(a).value;
    check_matrix("log_softmax", ta);
    const int64_t n = ta.shape[0], c = ta.shape[1];
    Node node;
    node.op = Op::log_softmax;
    node.in0 = a;
    node.value = ta;
    for (int64_t i = 0; i < n; ++i) {
        double* row = &node.value.data[static_cast<size_t>(i * c)];
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int64_t j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        for (int64_t j = 0; j < c; ++j) row[j] -= lse;
    }
    return push(std::move(node));
}

Tape::NodeId Tape::nll(NodeId logp, std::vector<int> labels) {
    const Tensor& tp = at(logp).value;
    check_matrix("nll", tp);
    const int64_t n = tp.shape[0], c = tp.shape[1];
    if (static_cast<int64_t>(labels.size()) != n) {
        throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= c) throw ShapeError("nll: label out of range");
        loss -= tp.data[static_cast<size_t>(i * c + y)];
    }
    Node node;
    node.op = Op::nll;
    node.in0 = logp;
    node.labels = std::move(labels);
    node.value = Tensor::scalar(loss / static_cast<double>(n));
    return push(std::move(node));
}

Tape::NodeId Tape::kl_div(NodeId logp, NodeId logq) {
    const Tensor& tp = at(logp).value;
    const Tensor& tq = at(logq).value;
    check_matrix("kl_div", tp);
    check_same_shape("kl_div", tp, tq);
    const int64_t n = tp.shape[0], c = tp.shape[1];
    double total = 0.0;
    for (int64_t i = 0; i < n * c; ++i) {
        const double lp = tp.data[static_cast<size_t>(i)];
        const double lq = tq.data[static_cast<size_t>(i)];
        total += std::exp(lp) * (lp - lq);
    }
    Node node;
    node.op = Op::kl_div;
    node.in0 = logp;
    node.in1 = logq;
    node.value = Tensor::scalar(total / static_cast<double>(n));
    return push(std::move(node));
}

Tape::NodeId Tape::sum(NodeId a) {
    double s = 0.0;
    for (double v : at(a).value.data) s += v;
    Node node;
    node.op = Op::sum;
    node.in0 = a;
    node.value = Tensor::scalar(s);
    return push(std::move(node));
}

Tape::NodeId Tape::mean(NodeId a) {
    const Tensor& ta = at(a).value;
    double s = 0.0;
    for (double v : ta.data) s += v;
    Node node;
    node.op = Op::mean;
    node.in0 = a;
    node.value = Tensor::scalar(s / static_cast<double>(ta.size()));
    return push(std::move(node));
}

Tape::NodeId Tape::clamp(NodeId a, double lo, double hi) {
    if (!(lo < hi)) throw ShapeError("clamp: lo must be < hi");
    Node node;
    node.op = Op::clamp;
    node.in0 = a;
    node.lo = lo;
    node.hi = hi;
    node.value = at(a).value;
    for (double& v : node.value.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(node));
}

double Tape::scalar(NodeId id) const {
    const Tensor& t = at(id).value;
    if (!t.is_scalar()) throw AutodiffError("scalar: node has shape " + t.shape_string());
    return t.data[0];
}

const std::vector<double>& Tape::grad(NodeId id) const { return at(id).grad; }

void Tape::backward(NodeId root) {
    if (nodes_.empty()) throw AutodiffError("backward: no forward pass has been recorded");
    if (root < 0 || static_cast<size_t>(root) >= nodes_.size()) {
        throw AutodiffError("backward: unknown node id");
    }
    if (!at(root).value.is_scalar()) {
        throw AutodiffError("backward: root must be a scalar, got shape " +
                            at(root).value.shape_string());
    }

    for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    at(root).grad[0] = 1.0;

    // Strict reverse insertion order; accumulation is plain += so a node
    // feeding several consumers receives the sum of all path gradients.
    for (NodeId id = root; id >= 0; --id) {
        Node& n = at(id);
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul: {
                Node& a = at(n.in0);
                Node& b = at(n.in1);
                const int64_t rows = a.value.shape[0], k = a.value.shape[1], m = b.value.shape[1];
                // dA = G * B^T, dB = A^T * G
                for (int64_t i = 0; i < rows; ++i) {
                    for (int64_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = &g[static_cast<size_t>(i * m)];
                        const double* brow = &b.value.data[static_cast<size_t>(p * m)];
                        for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        a.grad[static_cast<size_t>(i * k + p)] += acc;
                    }
                }
                for (int64_t p = 0; p < k; ++p) {
                    for (int64_t i = 0; i < rows; ++i) {
                        const double av = a.value.data[static_cast<size_t>(i * k + p)];
                        if (av == 0.0) continue;
                        const double* grow = &g[static_cast<size_t>(i * m)];
                        double* brow = &b.grad[static_cast<size_t>(p * m)];
                        for (int64_t j = 0; j < m; ++j) brow[j] += av * grow[j];
                    }
                }
                break;
            }
            case Op::add: {
                Node& a = at(n.in0);
                Node& b = at(n.in1);
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad[i] += g[i];
                    b.grad[i] += g[i];
                }
                break;
            }
            case Op::add_rowbcast: {
                Node& a = at(n.in0);
                Node& b = at(n.in1);
                const int64_t rows = a.value.shape[0], m = a.value.shape[1];
                for (int64_t i = 0; i < rows; ++i) {
                    for (int64_t j = 0; j < m; ++j) {
                        const double gv = g[static_cast<size_t>(i * m + j)];
                        a.grad[static_cast<size_t>(i * m + j)] += gv;
                        b.grad[static_cast<size_t>(j)] += gv;
                    }
                }
                break;
            }
            case Op::mul: {
                Node& a = at(n.in0);
                Node& b = at(n.in1);
                for (size_t i = 0; i < g.size(); ++i) {
                    a.grad[i] += g[i] * b.value.data[i];
                    b.grad[i] += g[i] * a.value.data[i];
                }
                break;
            }
            case Op::relu: {
                // Subgradient at 0 is fixed to 0.
                Node& a = at(n.in0);
                for (size_t i = 0; i < g.size(); ++i)
                    if (a.value.data[i] > 0.0) a.grad[i] += g[i];
                break;
            }
            case Op::log_softmax: {
                Node& a = at(n.in0);
                const int64_t rows = n.value.shape[0], c = n.value.shape[1];
                for (int64_t i = 0; i < rows; ++i) {
                    const double* grow = &g[static_cast<size_t>(i * c)];
                    const double* yrow = &n.value.data[static_cast<size_t>(i * c)];
                    double gsum = 0.0;
                    for (int64_t j = 0; j < c; ++j) gsum += grow[j];
                    double* arow = &a.grad[static_cast<size_t>(i * c)];
                    for (int64_t j = 0; j < c; ++j) arow[j] += grow[j] - std::exp(yrow[j]) * gsum;
                }
                break;
            }
            case Op::nll: {
                Node& a = at(n.in0);
                const int64_t rows = a.value.shape[0], c = a.value.shape[1];
                const double gd = g[0] / static_cast<double>(rows);
                for (int64_t i = 0; i < rows; ++i)
                    a.grad[static_cast<size_t>(i * c + n.labels[static_cast<size_t>(i)])] -= gd;
                break;
            }
            case Op::kl_div: {
                Node& p = at(n.in0);
                Node& q = at(n.in1);
                const int64_t rows = p.value.shape[0];
                const double gd = g[0] / static_cast<double>(rows);
                for (size_t i = 0; i < p.value.data.size(); ++i) {
                    const double lp = p.value.data[i];
                    const double lq = q.value.data[i];
                    const double pe = std::exp(lp);
                    p.grad[i] += gd * pe * (lp - lq + 1.0);
                    q.grad[i] -= gd * pe;
                }
                break;
            }
            case Op::sum: {
                Node& a = at(n.in0);
                for (double& ag : a.grad) ag += g[0];
                break;
            }
            case Op::mean: {
                Node& a = at(n.in0);
                const double gd = g[0] / static_cast<double>(a.value.size());
                for (double& ag : a.grad) ag += gd;
                break;
            }
            case Op::clamp: {
                // Gradient passes only strictly inside the box, mirroring the
                // relu convention at the kink.
                Node& a = at(n.in0);
                for (size_t i = 0; i < g.size(); ++i) {
                    const double v = a.value.data[i];
                    if (v > n.lo && v < n.hi) a.grad[i] += g[i];
                }
                break;
            }
        }
    }

    // Write leaf gradients back to their external tensors. Zero first, then
    // accumulate, so a tensor registered as a leaf more than once still
    // receives the sum of all its path gradients.
    for (Node& n : nodes_) {
        if (n.op == Op::leaf && n.external != nullptr && n.external->requires_grad) {
            n.external->zero_grad();
        }
    }
    for (Node& n : nodes_) {
        if (n.op == Op::leaf && n.external != nullptr && n.external->requires_grad) {
            for (size_t i = 0; i < n.grad.size(); ++i) n.external->grad[i] += n.grad[i];
        }
    }
}

}  // namespace s2ap
