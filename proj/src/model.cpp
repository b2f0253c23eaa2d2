#include "s2ap/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s2ap/rng.hpp"

namespace s2ap {

Network Network::mlp(const std::vector<int64_t>& dims, uint64_t seed, bool exempt_boundary) {
    if (dims.size() < 2) throw ShapeError("mlp: need at least input and output dims");
    Network net;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        PrunableLayer layer;
        const int64_t fan_in = dims[l], fan_out = dims[l + 1];
        Rng rng(substream(seed, stream::weight_init, static_cast<uint64_t>(l)));
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        layer.w = Tensor::zeros({fan_in, fan_out});
        for (double& v : layer.w.data) v = rng.uniform(-limit, limit);
        layer.bias = Tensor::zeros({fan_out});
        layer.has_bias = true;
        layer.s = Tensor::zeros(layer.w.shape);
        layer.m = Tensor::zeros(layer.w.shape);
        std::fill(layer.m.data.begin(), layer.m.data.end(), 1.0);
        layer.z = Tensor::zeros(layer.w.shape);
        layer.nu = Tensor::zeros(layer.w.shape);
        layer.prunable = true;
        net.layers_.push_back(std::move(layer));
    }
    if (exempt_boundary) {
        net.layers_.front().prunable = false;
        net.layers_.back().prunable = false;
    }
    return net;
}

int64_t Network::prunable_param_count() const {
    int64_t p = 0;
    for (const auto& l : layers_)
        if (l.prunable) p += l.weight_count();
    return p;
}

Tape::NodeId Network::forward_graph(Tape& tape, Tape::NodeId x_node,
                                    const std::vector<Tape::NodeId>& weight_nodes,
                                    const std::vector<Tape::NodeId>& bias_nodes) const {
    Tape::NodeId h = x_node;
    for (size_t l = 0; l < layers_.size(); ++l) {
        h = tape.matmul(h, weight_nodes[l]);
        if (layers_[l].has_bias) h = tape.add(h, bias_nodes[l]);
        if (l + 1 < layers_.size()) h = tape.relu(h);
    }
    return tape.log_softmax(h);
}

SparsitySpec SparsitySpec::uniform(const Network& net, double sparsity) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw std::invalid_argument("sparsity must be in [0,1), got " + std::to_string(sparsity));
    }
    SparsitySpec spec;
    spec.sparsity = sparsity;
    for (const auto& layer : net.layers()) {
        if (!layer.prunable) {
            spec.retained.push_back(layer.weight_count());
            continue;
        }
        const double keep = (1.0 - sparsity) * static_cast<double>(layer.weight_count());
        spec.retained.push_back(std::max<int64_t>(1, std::llround(keep)));
    }
    return spec;
}

Tensor topk_mask(const Tensor& scores, int64_t k, RankRule rule) {
    const int64_t n = scores.size();
    if (k < 1 || k > n) {
        throw std::invalid_argument("topk_mask: k=" + std::to_string(k) + " out of range for " +
                                    std::to_string(n) + " scores");
    }
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    auto key = [&](int64_t i) {
        const double v = scores.data[static_cast<size_t>(i)];
        return rule == RankRule::magnitude ? std::abs(v) : v;
    };
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        const double ka = key(a), kb = key(b);
        if (ka != kb) return ka > kb;
        return a < b;  // tie-break: lowest flat index wins
    });
    Tensor mask = Tensor::zeros(scores.shape);
    for (int64_t r = 0; r < k; ++r) mask.data[static_cast<size_t>(idx[static_cast<size_t>(r)])] = 1.0;
    return mask;
}

void init_scores(Network& net, std::vector<std::string>* warnings) {
    size_t index = 0;
    for (auto& layer : net.layers()) {
        layer.z = Tensor::zeros(layer.w.shape);
        layer.nu = Tensor::zeros(layer.w.shape);
        layer.m = Tensor::zeros(layer.w.shape);
        std::fill(layer.m.data.begin(), layer.m.data.end(), 1.0);
        if (!layer.prunable) {
            ++index;
            continue;
        }
        double wmax = 0.0;
        for (double v : layer.w.data) wmax = std::max(wmax, std::abs(v));
        layer.s = Tensor::zeros(layer.w.shape);
        if (wmax == 0.0) {
            if (warnings) {
                warnings->push_back("init_scores: layer " + std::to_string(index) +
                                    " has all-zero weights; scores set to 0");
            }
        } else {
            for (size_t i = 0; i < layer.w.data.size(); ++i) layer.s.data[i] = layer.w.data[i] / wmax;
        }
        ++index;
    }
}

std::vector<Tensor> masks_from_scores(const Network& net, const SparsitySpec& spec, RankRule rule,
                                      ScorePoint point) {
    std::vector<Tensor> masks;
    masks.reserve(net.layer_count());
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const PrunableLayer& layer = net.layers()[l];
        if (!layer.prunable) {
            Tensor ones = Tensor::zeros(layer.w.shape);
            std::fill(ones.data.begin(), ones.data.end(), 1.0);
            masks.push_back(std::move(ones));
            continue;
        }
        if (point == ScorePoint::s) {
            masks.push_back(topk_mask(layer.s, spec.retained[l], rule));
        } else {
            Tensor perturbed = layer.s;
            for (size_t i = 0; i < perturbed.data.size(); ++i) perturbed.data[i] += layer.z.data[i];
            masks.push_back(topk_mask(perturbed, spec.retained[l], rule));
        }
    }
    return masks;
}

std::vector<Tensor> effective_dense(const Network& net) {
    std::vector<Tensor> eff;
    eff.reserve(net.layer_count());
    for (const auto& layer : net.layers()) eff.push_back(layer.w);
    return eff;
}

std::vector<Tensor> effective_masked(const Network& net, const std::vector<Tensor>& masks,
                                     bool add_nu) {
    std::vector<Tensor> eff;
    eff.reserve(net.layer_count());
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const PrunableLayer& layer = net.layers()[l];
        Tensor e = layer.w;
        if (add_nu) {
            for (size_t i = 0; i < e.data.size(); ++i) e.data[i] += layer.nu.data[i];
        }
        for (size_t i = 0; i < e.data.size(); ++i) e.data[i] *= masks[l].data[i];
        eff.push_back(std::move(e));
    }
    return eff;
}

std::vector<Tensor> layer_masks(const Network& net) {
    std::vector<Tensor> masks;
    masks.reserve(net.layer_count());
    for (const auto& layer : net.layers()) masks.push_back(layer.m);
    return masks;
}

Tensor forward_logp(const Network& net, const std::vector<Tensor>& eff, const Tensor& x) {
    Tape tape;
    std::vector<Tape::NodeId> w_nodes, b_nodes;
    for (size_t l = 0; l < net.layer_count(); ++l) {
        w_nodes.push_back(tape.constant(eff[l]));
        b_nodes.push_back(tape.constant(net.layers()[l].bias));
    }
    Tape::NodeId x_node = tape.constant(x);
    Tape::NodeId out = net.forward_graph(tape, x_node, w_nodes, b_nodes);
    return tape.value(out);
}

std::vector<std::vector<double>> ste_score_grads(const Network& net,
                                                 const std::vector<Tensor>& eff_with_grads,
                                                 bool chain_through_nu) {
    std::vector<std::vector<double>> grads;
    grads.reserve(net.layer_count());
    for (size_t l = 0; l < net.layer_count(); ++l) {
        const PrunableLayer& layer = net.layers()[l];
        std::vector<double> g(layer.w.data.size(), 0.0);
        if (layer.prunable) {
            const std::vector<double>& deff = eff_with_grads[l].grad;
            for (size_t i = 0; i < g.size(); ++i) {
                double chain = layer.w.data[i];
                if (chain_through_nu) chain += layer.nu.data[i];
                g[i] = deff[i] * chain;
            }
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

int argmax_row(const Tensor& logp, int64_t row) {
    const int64_t c = logp.shape[1];
    const double* r = &logp.data[static_cast<size_t>(row * c)];
    int best = 0;
    for (int64_t j = 1; j < c; ++j)
        if (r[j] > r[best]) best = static_cast<int>(j);
    return best;
}

}  // namespace s2ap
