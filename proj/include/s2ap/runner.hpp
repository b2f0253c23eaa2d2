#ifndef S2AP_RUNNER_HPP
#define S2AP_RUNNER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "s2ap/config.hpp"
#include "s2ap/data.hpp"
#include "s2ap/diagnostics.hpp"
#include "s2ap/pruner.hpp"

namespace s2ap {

struct StageError : std::runtime_error {
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage(stage) {}
    std::string stage;
};

struct EvalMetrics {
    double clean_acc = 0.0;   // percent
    double robust_acc = 0.0;  // percent, pgd50 with restarts
};

struct SeedResult {
    uint64_t seed = 0;
    EvalMetrics mask;         // pruned model before finetuning
    EvalMetrics final_model;  // after finetuning (same as mask in rlth mode)
    std::vector<double> pretrain_epoch_loss;
    std::vector<double> prune_epoch_loss;
    double prune_best_loss = 0.0;
    std::vector<double> finetune_epoch_loss;
    std::vector<double> lambda_per_epoch;
    std::vector<int> lambda_flat_events;
    std::vector<double> hamming;  // h_t vs the initial mask, one per prune epoch
    std::map<double, double> loss_diff;
    MaskTrace trace;
    std::vector<std::string> events;
};

struct Aggregate {
    double mean = 0.0;
    double stdev = 0.0;
};

Aggregate aggregate(const std::vector<double>& values);

struct ExperimentResult {
    std::string mode;
    std::string config_echo;
    std::vector<SeedResult> seeds;
    Aggregate clean;
    Aggregate robust;
    Aggregate mask_robust;
};

/// Wall-clock log, kept out of results.json so reruns stay byte-identical.
using StageTimings = std::vector<std::pair<std::string, double>>;

Dataset make_dataset(const RunConfig& cfg, uint64_t seed);

/// Dense robust pretraining (the finetune loop with all-ones masks).
Network pretrain_stage(const RunConfig& cfg, const Dataset& ds, uint64_t seed,
                       std::vector<double>* epoch_loss = nullptr);

struct PruneStageResult {
    PruneResult prune;
    EvalMetrics mask_eval;
    std::map<double, double> loss_diff;
};

/// Mask search plus pre-finetune evaluation and the loss-difference grid.
/// The network enters with (pre)trained weights and leaves with m* adopted.
PruneStageResult prune_stage(Network& net, const RunConfig& cfg, const Dataset& ds,
                             uint64_t seed, PruneMode mode);

/// Full three-step pipeline for one seed. rlth skips pretraining and
/// finetuning. Checkpoints are flushed after each stage.
SeedResult run_pipeline_seed(const RunConfig& cfg, uint64_t seed, PruneMode mode,
                             StageTimings* timings = nullptr);

/// All seeds of the config; writes results.json and per-series artifacts
/// under cfg.out_dir.
ExperimentResult run_pipeline(const RunConfig& cfg, StageTimings* timings = nullptr);

struct PairedResult {
    ExperimentResult baseline;
    ExperimentResult s2ap;
};

/// Baseline and s2ap searches on the same pretrained model per seed. When
/// include_finetune is false the pipelines stop after the pre-finetune mask
/// evaluation (the Fig.-1-style comparison).
PairedResult run_paired(const RunConfig& cfg, bool include_finetune,
                        StageTimings* timings = nullptr);

struct GammaSweepRow {
    double gamma = 0.0;
    double mask_robust_acc = 0.0;  // mean over seeds
};

struct GammaSweepResult {
    double best_gamma = 0.0;
    std::vector<GammaSweepRow> rows;
};

/// Prune-stage sweep over the gamma grid; argmax of mask robust accuracy,
/// ties resolved toward the smaller gamma.
GammaSweepResult sweep_gamma(const RunConfig& cfg, const std::vector<double>& grid,
                             StageTimings* timings = nullptr);

}  // namespace s2ap

#endif  // S2AP_RUNNER_HPP
