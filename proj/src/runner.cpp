#include "s2ap/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>

#include "s2ap/checkpoint.hpp"
#include "s2ap/finetune.hpp"
#include "s2ap/report.hpp"
#include "s2ap/rng.hpp"

namespace s2ap {

namespace {

class StageTimer {
   public:
    StageTimer(StageTimings* sink, std::string name)
        : sink_(sink), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        if (!sink_) return;
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        sink_->emplace_back(name_, std::chrono::duration<double>(elapsed).count());
    }

   private:
    StageTimings* sink_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

/// Chunked test-set evaluation (keeps attack tapes small on image data).
EvalMetrics evaluate_masked(const Network& net, const Dataset& ds, const RunConfig& cfg,
                            uint64_t seed, uint64_t tag) {
    const std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
    const int64_t n = ds.x_test.shape[0];
    const int64_t d = ds.x_test.shape[1];
    const int64_t chunk = 256;
    int64_t clean_correct = 0;
    int64_t robust_correct = 0;
    for (int64_t begin = 0; begin < n; begin += chunk) {
        const int64_t end = std::min(n, begin + chunk);
        Tensor xb = Tensor::zeros({end - begin, d});
        std::copy(ds.x_test.data.begin() + begin * d, ds.x_test.data.begin() + end * d,
                  xb.data.begin());
        std::vector<int> yb(ds.y_test.begin() + begin, ds.y_test.begin() + end);

        Tensor logp = forward_logp(net, eff, xb);
        for (int64_t i = 0; i < end - begin; ++i)
            if (argmax_row(logp, i) == yb[static_cast<size_t>(i)]) ++clean_correct;

        std::vector<bool> robust(static_cast<size_t>(end - begin), true);
        for (int r = 0; r < cfg.eval.restarts; ++r) {
            Tensor x_adv = pgd_attack(net, eff, xb, yb, cfg.eval.attack,
                                      AttackObjective::cross_entropy,
                                      substream(seed, stream::eval_attack, tag,
                                                static_cast<uint64_t>(r) * 1000003ULL +
                                                    static_cast<uint64_t>(begin)));
            Tensor logp_adv = forward_logp(net, eff, x_adv);
            for (int64_t i = 0; i < end - begin; ++i)
                if (argmax_row(logp_adv, i) != yb[static_cast<size_t>(i)])
                    robust[static_cast<size_t>(i)] = false;
        }
        for (bool b : robust)
            if (b) ++robust_correct;
    }
    EvalMetrics m;
    m.clean_acc = 100.0 * static_cast<double>(clean_correct) / static_cast<double>(n);
    m.robust_acc = 100.0 * static_cast<double>(robust_correct) / static_cast<double>(n);
    return m;
}

std::string seed_tag(uint64_t seed) { return "seed" + std::to_string(seed); }

/// Prune + evaluate (+ finetune + evaluate) on an already-prepared network.
SeedResult run_stages(const RunConfig& cfg, const Dataset& ds, Network net, uint64_t seed,
                      PruneMode mode, bool include_finetune, StageTimings* timings) {
    SeedResult result;
    result.seed = seed;
    const std::string out = cfg.out_dir;
    const std::string mode_name = prune_mode_name(mode);

    stage("prune", [&] {
        StageTimer timer(timings, std::string("prune_") + mode_name + "_" + seed_tag(seed));
        init_scores(net, &result.events);
        PruneStageResult ps = prune_stage(net, cfg, ds, seed, mode);
        result.prune_epoch_loss = ps.prune.epoch_mean_loss;
        result.prune_best_loss = ps.prune.best_loss;
        result.lambda_per_epoch = ps.prune.sharpness.lambda_per_epoch;
        result.lambda_flat_events = ps.prune.sharpness.lambda_flat_events;
        result.trace = ps.prune.trace;
        result.hamming = hamming_trace(ps.prune.trace);
        result.loss_diff = ps.loss_diff;
        result.mask = ps.mask_eval;
        for (const auto& e : ps.prune.events) result.events.push_back(e);
        save_checkpoint(net, cfg.to_text(),
                        out + "/pruned_" + mode_name + "_" + seed_tag(seed) + ".spchk");
        return 0;
    });

    if (include_finetune && !cfg.prune.rlth) {
        stage("finetune", [&] {
            StageTimer timer(timings, std::string("finetune_") + mode_name + "_" + seed_tag(seed));
            FinetuneConfig fcfg = cfg.finetune_for_seed(seed);
            FinetuneResult ft = run_finetune(net, ds.x_train, ds.y_train, fcfg, cfg.attack);
            result.finetune_epoch_loss = ft.epoch_mean_loss;
            for (const auto& e : ft.events) result.events.push_back(e);
            save_checkpoint(net, cfg.to_text(),
                            out + "/finetuned_" + mode_name + "_" + seed_tag(seed) + ".spchk");
            result.final_model = evaluate_masked(net, ds, cfg, seed, 2);
            return 0;
        });
    } else {
        result.final_model = result.mask;
    }
    return result;
}

ExperimentResult assemble(const RunConfig& cfg, const char* mode_name,
                          std::vector<SeedResult> seeds) {
    ExperimentResult result;
    result.mode = mode_name;
    result.config_echo = cfg.to_text();
    result.seeds = std::move(seeds);
    std::vector<double> clean, robust, mask_robust;
    for (const auto& s : result.seeds) {
        clean.push_back(s.final_model.clean_acc);
        robust.push_back(s.final_model.robust_acc);
        mask_robust.push_back(s.mask.robust_acc);
    }
    result.clean = aggregate(clean);
    result.robust = aggregate(robust);
    result.mask_robust = aggregate(mask_robust);
    return result;
}

}  // namespace

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

Dataset make_dataset(const RunConfig& cfg, uint64_t seed) {
    if (cfg.data.kind == "moons") return gen_two_moons(cfg.data.n, cfg.data.noise, seed);
    return load_idx_dataset(cfg.data.train_images, cfg.data.train_labels, cfg.data.test_images,
                            cfg.data.test_labels);
}

Network pretrain_stage(const RunConfig& cfg, const Dataset& ds, uint64_t seed,
                       std::vector<double>* epoch_loss) {
    Network net = Network::mlp(cfg.model.layers, seed, cfg.model.exempt_boundary);
    // Dense robust training: the finetune loop over all-ones masks.
    FinetuneConfig fcfg;
    fcfg.epochs = cfg.pretrain.epochs;
    fcfg.eta = cfg.pretrain.eta;
    fcfg.step_decay = cfg.pretrain.step_decay;
    fcfg.mode = FinetuneMode::standard;
    fcfg.loss = cfg.loss;
    fcfg.batch_size = cfg.batch_size;
    fcfg.seed = substream(seed, 11);  // distinct stream family from finetuning
    FinetuneResult ft = run_finetune(net, ds.x_train, ds.y_train, fcfg, cfg.attack);
    if (epoch_loss) *epoch_loss = ft.epoch_mean_loss;
    return net;
}

PruneStageResult prune_stage(Network& net, const RunConfig& cfg, const Dataset& ds,
                             uint64_t seed, PruneMode mode) {
    PruneConfig pcfg = cfg.prune_for_seed(seed);
    pcfg.mode = mode;
    PruneDiagnostics diag;
    diag.enabled = cfg.diag.enabled;
    diag.lambda_iterations = cfg.diag.lambda_iterations;
    diag.samples_per_epoch = cfg.diag.lambda_samples_per_epoch;

    PruneStageResult out;
    out.prune = run_prune(net, ds.x_train, ds.y_train, pcfg, cfg.attack, diag);
    out.mask_eval = evaluate_masked(net, ds, cfg, seed, 1);

    if (cfg.diag.enabled && !cfg.diag.rho_grid.empty()) {
        const int64_t n = std::min<int64_t>(cfg.diag.batch, ds.x_train.shape[0]);
        const int64_t d = ds.x_train.shape[1];
        ScoreLossContext ctx;
        ctx.net = &net;
        SparsitySpec spec = SparsitySpec::uniform(net, pcfg.sparsity);
        ctx.spec = &spec;
        ctx.rank = pcfg.rank;
        ctx.x = Tensor::zeros({n, d});
        std::copy(ds.x_train.data.begin(), ds.x_train.data.begin() + n * d, ctx.x.data.begin());
        ctx.y.assign(ds.y_train.begin(), ds.y_train.begin() + n);
        ctx.loss = cfg.loss;
        if (cfg.loss.kind != LossKind::clean_ce) {
            std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
            ctx.x_adv = pgd_attack(net, eff, ctx.x, ctx.y, cfg.attack,
                                   attack_objective(cfg.loss.kind),
                                   substream(seed, stream::loss_diff, 999));
        }
        LossDiffOptions opt;
        opt.steps = cfg.diag.lossdiff_steps;
        opt.restarts = cfg.diag.lossdiff_restarts;
        opt.seed = substream(seed, stream::loss_diff);
        out.loss_diff = loss_diff_grid(ctx, cfg.diag.rho_grid, opt);
    }
    return out;
}

SeedResult run_pipeline_seed(const RunConfig& cfg, uint64_t seed, PruneMode mode,
                             StageTimings* timings) {
    std::filesystem::create_directories(cfg.out_dir);
    Dataset ds = make_dataset(cfg, seed);

    std::vector<double> pretrain_loss;
    Network net = stage("pretrain", [&] {
        StageTimer timer(timings, "pretrain_" + seed_tag(seed));
        if (cfg.prune.rlth) {
            // Robust lottery-ticket mode: random initialization, no training.
            return Network::mlp(cfg.model.layers, seed, cfg.model.exempt_boundary);
        }
        Network trained = pretrain_stage(cfg, ds, seed, &pretrain_loss);
        save_checkpoint(trained, cfg.to_text(),
                        cfg.out_dir + "/pretrained_" + seed_tag(seed) + ".spchk");
        return trained;
    });

    SeedResult result = run_stages(cfg, ds, std::move(net), seed, mode, true, timings);
    result.pretrain_epoch_loss = std::move(pretrain_loss);
    return result;
}

ExperimentResult run_pipeline(const RunConfig& cfg, StageTimings* timings) {
    std::vector<SeedResult> seeds;
    for (uint64_t seed : cfg.seeds)
        seeds.push_back(run_pipeline_seed(cfg, seed, cfg.prune.mode, timings));
    ExperimentResult result = assemble(cfg, prune_mode_name(cfg.prune.mode), std::move(seeds));
    emit_run_artifacts(result, cfg.out_dir);
    return result;
}

PairedResult run_paired(const RunConfig& cfg, bool include_finetune, StageTimings* timings) {
    std::filesystem::create_directories(cfg.out_dir);
    std::vector<SeedResult> base_seeds, s2ap_seeds;
    for (uint64_t seed : cfg.seeds) {
        Dataset ds = make_dataset(cfg, seed);
        Network net = stage("pretrain", [&] {
            StageTimer timer(timings, "pretrain_" + seed_tag(seed));
            if (cfg.prune.rlth)
                return Network::mlp(cfg.model.layers, seed, cfg.model.exempt_boundary);
            Network trained = pretrain_stage(cfg, ds, seed, nullptr);
            save_checkpoint(trained, cfg.to_text(),
                            cfg.out_dir + "/pretrained_" + seed_tag(seed) + ".spchk");
            return trained;
        });
        base_seeds.push_back(
            run_stages(cfg, ds, net, seed, PruneMode::baseline, include_finetune, timings));
        s2ap_seeds.push_back(
            run_stages(cfg, ds, std::move(net), seed, PruneMode::s2ap, include_finetune, timings));
    }
    PairedResult paired;
    paired.baseline = assemble(cfg, "baseline", std::move(base_seeds));
    paired.s2ap = assemble(cfg, "s2ap", std::move(s2ap_seeds));
    emit_paired_artifacts(paired, cfg.prune.warmup_epochs, cfg.out_dir);
    return paired;
}

GammaSweepResult sweep_gamma(const RunConfig& cfg, const std::vector<double>& grid,
                             StageTimings* timings) {
    if (grid.empty()) throw std::invalid_argument("sweep_gamma: empty grid");
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());

    // One dataset + prepared network per seed, shared across the grid.
    std::vector<Dataset> datasets;
    std::vector<Network> nets;
    for (uint64_t seed : cfg.seeds) {
        datasets.push_back(make_dataset(cfg, seed));
        nets.push_back(stage("pretrain", [&] {
            StageTimer timer(timings, "pretrain_" + seed_tag(seed));
            if (cfg.prune.rlth)
                return Network::mlp(cfg.model.layers, seed, cfg.model.exempt_boundary);
            return pretrain_stage(cfg, datasets.back(), seed, nullptr);
        }));
    }

    GammaSweepResult result;
    double best_acc = -1.0;
    for (double gamma : sorted) {
        std::vector<double> accs;
        for (size_t i = 0; i < cfg.seeds.size(); ++i) {
            RunConfig local = cfg;
            local.prune.gamma = gamma;
            Network net = nets[i];
            std::vector<std::string> warnings;
            init_scores(net, &warnings);
            PruneStageResult ps = stage("prune", [&] {
                StageTimer timer(timings, "sweep_gamma_" + seed_tag(cfg.seeds[i]));
                return prune_stage(net, local, datasets[i], cfg.seeds[i], local.prune.mode);
            });
            accs.push_back(ps.mask_eval.robust_acc);
        }
        GammaSweepRow row;
        row.gamma = gamma;
        row.mask_robust_acc = aggregate(accs).mean;
        result.rows.push_back(row);
        if (row.mask_robust_acc > best_acc) {  // strict: ties keep the smaller gamma
            best_acc = row.mask_robust_acc;
            result.best_gamma = gamma;
        }
    }
    return result;
}

}  // namespace s2ap
