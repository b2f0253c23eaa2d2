#ifndef S2AP_MODEL_HPP
#define S2AP_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "s2ap/tape.hpp"
#include "s2ap/tensor.hpp"

namespace s2ap {

/// Ranking rule for the top-k selection. The default ranks by |s|, which
/// makes the initial mask equal to lowest-weight-magnitude pruning; signed
/// ranking is kept as an option.
enum class RankRule { magnitude, signed_value };

/// One dense layer with weights w, importance scores s, binary mask m and
/// the score / weight perturbation buffers z and nu. All five share one
/// shape (in, out); the bias is never pruned.
struct PrunableLayer {
    Tensor w;
    Tensor bias;
    bool has_bias = true;
    Tensor s;
    Tensor m;
    Tensor z;
    Tensor nu;
    bool prunable = true;

    int64_t in_dim() const { return w.shape[0]; }
    int64_t out_dim() const { return w.shape[1]; }
    int64_t weight_count() const { return w.size(); }
};

/// Feed-forward network: relu between layers, log-softmax head. Forward
/// passes run over caller-supplied effective weights so one topology serves
/// dense, mask-search and finetune modes.
class Network {
   public:
    Network() = default;

    /// He-uniform initialized MLP. `dims` lists layer widths, e.g.
    /// {2, 32, 32, 2}. When exempt_boundary is set the first and last
    /// layers are excluded from pruning.
    static Network mlp(const std::vector<int64_t>& dims, uint64_t seed,
                       bool exempt_boundary = false);

    std::vector<PrunableLayer>& layers() { return layers_; }
    const std::vector<PrunableLayer>& layers() const { return layers_; }
    size_t layer_count() const { return layers_.size(); }

    int64_t input_dim() const { return layers_.front().in_dim(); }
    int64_t class_count() const { return layers_.back().out_dim(); }

    /// Total prunable parameter count p.
    int64_t prunable_param_count() const;

    /// Records the forward graph (relu stack + log-softmax head) on `tape`
    /// using pre-registered weight/bias leaves; returns the log-prob node.
    Tape::NodeId forward_graph(Tape& tape, Tape::NodeId x_node,
                               const std::vector<Tape::NodeId>& weight_nodes,
                               const std::vector<Tape::NodeId>& bias_nodes) const;

   private:
    std::vector<PrunableLayer> layers_;
};

/// Per-layer retained counts derived from one global sparsity rate:
/// k_l = max(1, round((1 - sparsity) * |w_l|)) for prunable layers.
struct SparsitySpec {
    double sparsity = 0.0;
    std::vector<int64_t> retained;  // per layer; full count for non-prunable layers

    static SparsitySpec uniform(const Network& net, double sparsity);
};

/// Binary mask with exactly k ones at the top-k entries of the scores,
/// ranked per `rule`; ties resolved toward the lowest flat index.
Tensor topk_mask(const Tensor& scores, int64_t k, RankRule rule = RankRule::magnitude);

/// s_l = w_l / max|w_l| per prunable layer; degenerate all-zero layers get
/// s = 0 and a warning. Also clears the z / nu buffers and resets masks.
void init_scores(Network& net, std::vector<std::string>* warnings = nullptr);

/// Where score-driven masks are evaluated: at s or at s + z.
enum class ScorePoint { s, s_plus_z };

/// Fresh top-k masks computed from the layer scores (or s + z); non-prunable
/// layers get all-ones masks.
std::vector<Tensor> masks_from_scores(const Network& net, const SparsitySpec& spec,
                                      RankRule rule, ScorePoint point);

/// Effective weights for a forward pass.
std::vector<Tensor> effective_dense(const Network& net);
/// w (or w + nu) elementwise-multiplied by the given masks.
std::vector<Tensor> effective_masked(const Network& net, const std::vector<Tensor>& masks,
                                     bool add_nu = false);
/// Masks frozen in the layers' m buffers.
std::vector<Tensor> layer_masks(const Network& net);

/// Forward-only log-probabilities for a batch (n, input_dim) -> (n, classes).
Tensor forward_logp(const Network& net, const std::vector<Tensor>& eff, const Tensor& x);

/// Straight-through score gradients: grad_s[l] = chain ⊙ d loss / d eff_w[l],
/// where `chain` is the layer's w (or w + nu in the weight-perturbed
/// ablation). Masked-out positions receive gradient like any other.
std::vector<std::vector<double>> ste_score_grads(const Network& net,
                                                 const std::vector<Tensor>& eff_with_grads,
                                                 bool chain_through_nu = false);

int argmax_row(const Tensor& logp, int64_t row);

}  // namespace s2ap

#endif  // S2AP_MODEL_HPP
