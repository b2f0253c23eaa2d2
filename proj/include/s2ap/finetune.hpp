#ifndef S2AP_FINETUNE_HPP
#define S2AP_FINETUNE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s2ap/attack.hpp"
#include "s2ap/loss.hpp"
#include "s2ap/model.hpp"

namespace s2ap {

enum class FinetuneMode { standard, s2ap_awp };

struct FinetuneConfig {
    int epochs = 30;
    double eta = 0.01;
    double gamma = 0.001;  // weight-perturbation scale (s2ap_awp)
    FinetuneMode mode = FinetuneMode::s2ap_awp;
    LossSpec loss;
    int batch_size = 64;
    bool step_decay = false;  // halve eta at epoch epochs/2
    uint64_t seed = 0;

    void validate() const;
};

/// Per-iteration snapshot, flattened over all layers, for invariant checks.
struct FinetuneRecord {
    int epoch = 0;
    int iteration = 0;
    double loss = 0.0;
    std::vector<double> w_entry;
    std::vector<double> nu;      // projected perturbation (zero in standard mode)
    std::vector<double> step_w;  // applied weight update
    std::vector<double> w_after;
};

using FinetuneObserver = std::function<void(const FinetuneRecord&)>;

struct FinetuneResult {
    std::vector<double> epoch_mean_loss;
    std::vector<std::string> events;
};

/// Robust finetuning of the masked weights. The mask (layers' m buffers) is
/// fixed throughout; pruned weight positions are frozen at their entry
/// values and contribute exactly zero to every forward pass. standard mode
/// takes plain normalized gradient steps; s2ap_awp first applies a single
/// gamma-bounded adversarial weight perturbation nu to the surviving weights
/// and steps on the gradient taken at (w + nu) ⊙ m. Biases train in both
/// modes and are never perturbed or pruned.
///
/// With all-ones masks this doubles as the dense (pre-)training loop.
FinetuneResult run_finetune(Network& net, const Tensor& x_train, const std::vector<int>& y_train,
                            const FinetuneConfig& cfg, const AttackConfig& attack,
                            const FinetuneObserver* observer = nullptr);

}  // namespace s2ap

#endif  // S2AP_FINETUNE_HPP
