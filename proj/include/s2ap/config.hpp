#ifndef S2AP_CONFIG_HPP
#define S2AP_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "s2ap/attack.hpp"
#include "s2ap/finetune.hpp"
#include "s2ap/loss.hpp"
#include "s2ap/pruner.hpp"

namespace s2ap {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataConfig {
    std::string kind = "moons";  // moons | idx
    int64_t n = 400;
    double noise = 0.1;
    std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
    std::vector<int64_t> layers = {2, 32, 32, 2};
    RankRule rank = RankRule::magnitude;
    bool exempt_boundary = false;
};

struct PretrainConfig {
    int epochs = 30;
    double eta = 0.05;
    bool step_decay = false;
};

struct EvalConfig {
    AttackConfig attack{0.08, 0.02, 50, true, 0.0, 1.0};
    int restarts = 2;
};

struct DiagConfig {
    bool enabled = true;
    int lambda_iterations = 10;
    int lambda_samples_per_epoch = 4;
    std::vector<double> rho_grid = {0.001, 0.0025, 0.005, 0.0075, 0.01};
    int lossdiff_steps = 20;
    int lossdiff_restarts = 2;
    int64_t batch = 256;
};

/// Everything one experiment needs. Parsed from a flat UTF-8 text file of
/// `section.key = value` lines with `#` comments (grammar in the README).
struct RunConfig {
    DataConfig data;
    ModelConfig model;
    int batch_size = 64;
    PretrainConfig pretrain;
    LossSpec loss;
    AttackConfig attack{0.08, 0.02, 10, true, 0.0, 1.0};
    EvalConfig eval;
    PruneConfig prune;
    FinetuneConfig finetune;
    DiagConfig diag;
    std::vector<uint64_t> seeds = {0};
    std::string out_dir = "out";
    std::vector<double> gamma_grid = {0.00075, 0.001, 0.0025, 0.005, 0.0075, 0.01};

    void validate() const;

    /// Canonical serialization: every key in a fixed order, parseable by
    /// from_text. Used for the checkpoint/config echo.
    std::string to_text() const;

    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::string& path);

    /// Stamps the shared fields (loss, rank, batch, seed) into the nested
    /// stage configs for one seeded run.
    PruneConfig prune_for_seed(uint64_t seed) const;
    FinetuneConfig finetune_for_seed(uint64_t seed) const;
};

}  // namespace s2ap

#endif  // S2AP_CONFIG_HPP
