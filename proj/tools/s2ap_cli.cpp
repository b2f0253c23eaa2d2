// Command-line front end: pretrain / prune / finetune / diagnose /
// sweep-gamma / report, all driven by a flat text config plus --seed/--out
// overrides. Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "s2ap/checkpoint.hpp"
#include "s2ap/config.hpp"
#include "s2ap/finetune.hpp"
#include "s2ap/report.hpp"
#include "s2ap/rng.hpp"
#include "s2ap/runner.hpp"

namespace {

using namespace s2ap;

struct CommonArgs {
    std::string config_path;
    std::optional<int64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat text config file")->required();
    cmd->add_option("--seed", args.seed, "seed override (single run)");
    cmd->add_option("--out", args.out, "output directory override");
}

RunConfig load_config(const CommonArgs& args) {
    RunConfig cfg = RunConfig::from_file(args.config_path);
    if (args.seed) cfg.seeds = {static_cast<uint64_t>(*args.seed)};
    if (!args.out.empty()) cfg.out_dir = args.out;
    cfg.validate();
    return cfg;
}

std::string run_json_path(const RunConfig& cfg, PruneMode mode, uint64_t seed) {
    return cfg.out_dir + "/run_" + prune_mode_name(mode) + "_seed" + std::to_string(seed) +
           ".json";
}

ExperimentResult single_seed_result(const RunConfig& cfg, PruneMode mode, SeedResult seed) {
    ExperimentResult result;
    result.mode = prune_mode_name(mode);
    result.config_echo = cfg.to_text();
    result.seeds.push_back(std::move(seed));
    result.clean = aggregate({result.seeds[0].final_model.clean_acc});
    result.robust = aggregate({result.seeds[0].final_model.robust_acc});
    result.mask_robust = aggregate({result.seeds[0].mask.robust_acc});
    return result;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmd_pretrain(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    StageTimings timings;
    for (uint64_t seed : cfg.seeds) {
        const auto start = std::chrono::steady_clock::now();
        Dataset ds = make_dataset(cfg, seed);
        Network net = pretrain_stage(cfg, ds, seed, nullptr);
        timings.emplace_back("pretrain_seed" + std::to_string(seed), seconds_since(start));
        std::filesystem::create_directories(cfg.out_dir);
        save_checkpoint(net, cfg.to_text(),
                        cfg.out_dir + "/pretrained_seed" + std::to_string(seed) + ".spchk");
        std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
        const double clean = clean_accuracy(net, eff, ds.x_test, ds.y_test);
        const double robust = robust_accuracy(net, eff, ds.x_test, ds.y_test, cfg.eval.attack,
                                              cfg.eval.restarts, substream(seed, 90));
        std::cout << "pretrain seed=" << seed << " clean=" << clean << " pgd" << cfg.eval.attack.steps
                  << "_acc=" << robust << "\n";
    }
    emit_timings(timings, cfg.out_dir);
    return 0;
}

int cmd_prune(const CommonArgs& args, const std::string& mode_arg) {
    RunConfig cfg = load_config(args);
    PruneMode mode = cfg.prune.mode;
    if (!mode_arg.empty()) {
        if (mode_arg == "baseline")
            mode = PruneMode::baseline;
        else if (mode_arg == "s2ap")
            mode = PruneMode::s2ap;
        else if (mode_arg == "awp")
            mode = PruneMode::awp;
        else
            throw ConfigError("prune: --mode must be baseline, s2ap or awp");
    }
    cfg.prune.mode = mode;

    StageTimings timings;
    for (uint64_t seed : cfg.seeds) {
        const auto start = std::chrono::steady_clock::now();
        Dataset ds = make_dataset(cfg, seed);
        Network net;
        if (cfg.prune.rlth) {
            net = Network::mlp(cfg.model.layers, seed, cfg.model.exempt_boundary);
        } else {
            const std::string path =
                cfg.out_dir + "/pretrained_seed" + std::to_string(seed) + ".spchk";
            net = load_checkpoint(path).net;
        }
        std::vector<std::string> warnings;
        init_scores(net, &warnings);
        PruneStageResult ps = prune_stage(net, cfg, ds, seed, mode);
        timings.emplace_back("prune_" + std::string(prune_mode_name(mode)) + "_seed" +
                                 std::to_string(seed),
                             seconds_since(start));
        std::filesystem::create_directories(cfg.out_dir);
        save_checkpoint(net, cfg.to_text(),
                        cfg.out_dir + "/pruned_" + std::string(prune_mode_name(mode)) + "_seed" +
                            std::to_string(seed) + ".spchk");

        SeedResult sr;
        sr.seed = seed;
        sr.mask = ps.mask_eval;
        sr.final_model = ps.mask_eval;  // finetune updates this later
        sr.prune_epoch_loss = ps.prune.epoch_mean_loss;
        sr.prune_best_loss = ps.prune.best_loss;
        sr.lambda_per_epoch = ps.prune.sharpness.lambda_per_epoch;
        sr.lambda_flat_events = ps.prune.sharpness.lambda_flat_events;
        sr.trace = ps.prune.trace;
        sr.hamming = hamming_trace(ps.prune.trace);
        sr.loss_diff = ps.loss_diff;
        sr.events = warnings;
        for (const auto& e : ps.prune.events) sr.events.push_back(e);
        write_text_file(run_json_path(cfg, mode, seed),
                        results_json(single_seed_result(cfg, mode, std::move(sr))));
        std::cout << "prune mode=" << prune_mode_name(mode) << " seed=" << seed
                  << " mask_clean=" << ps.mask_eval.clean_acc
                  << " mask_pgd" << cfg.eval.attack.steps << "_acc=" << ps.mask_eval.robust_acc << "\n";
    }
    emit_timings(timings, cfg.out_dir);
    return 0;
}

int cmd_finetune(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    if (cfg.prune.rlth) {
        std::cerr << "finetune: rlth mode does not finetune the pruned parameterization\n";
        return 1;
    }
    const PruneMode mode = cfg.prune.mode;
    for (uint64_t seed : cfg.seeds) {
        Dataset ds = make_dataset(cfg, seed);
        const std::string pruned = cfg.out_dir + "/pruned_" +
                                   std::string(prune_mode_name(mode)) + "_seed" +
                                   std::to_string(seed) + ".spchk";
        Network net = load_checkpoint(pruned).net;
        FinetuneConfig fcfg = cfg.finetune_for_seed(seed);
        FinetuneResult ft = run_finetune(net, ds.x_train, ds.y_train, fcfg, cfg.attack);
        save_checkpoint(net, cfg.to_text(),
                        cfg.out_dir + "/finetuned_" + std::string(prune_mode_name(mode)) +
                            "_seed" + std::to_string(seed) + ".spchk");

        std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
        EvalMetrics final_eval;
        final_eval.clean_acc = clean_accuracy(net, eff, ds.x_test, ds.y_test);
        final_eval.robust_acc = robust_accuracy(net, eff, ds.x_test, ds.y_test, cfg.eval.attack,
                                                cfg.eval.restarts, substream(seed, 91));

        // Fold the finetune outcome into the per-seed run record if present.
        const std::string run_path = run_json_path(cfg, mode, seed);
        if (std::filesystem::exists(run_path)) {
            ExperimentResult run = results_from_json(read_text_file(run_path));
            if (!run.seeds.empty()) {
                run.seeds[0].final_model = final_eval;
                run.seeds[0].finetune_epoch_loss = ft.epoch_mean_loss;
                for (const auto& e : ft.events) run.seeds[0].events.push_back(e);
                run.clean = aggregate({final_eval.clean_acc});
                run.robust = aggregate({final_eval.robust_acc});
                write_text_file(run_path, results_json(run));
            }
        }
        std::cout << "finetune mode=" << prune_mode_name(mode) << " seed=" << seed
                  << " clean=" << final_eval.clean_acc << " pgd" << cfg.eval.attack.steps << "_acc=" << final_eval.robust_acc
                  << "\n";
    }
    return 0;
}

int cmd_diagnose(const CommonArgs& args, const std::string& measure) {
    RunConfig cfg = load_config(args);
    const PruneMode mode = cfg.prune.mode;
    if (measure == "hamming") {
        for (uint64_t seed : cfg.seeds) {
            const std::string base_path = run_json_path(cfg, PruneMode::baseline, seed);
            const std::string s2ap_path = run_json_path(cfg, PruneMode::s2ap, seed);
            const bool paired =
                std::filesystem::exists(base_path) && std::filesystem::exists(s2ap_path);
            std::vector<std::vector<double>> rows;
            if (paired) {
                ExperimentResult base = results_from_json(read_text_file(base_path));
                ExperimentResult s2ap = results_from_json(read_text_file(s2ap_path));
                std::vector<double> diff = hamming_diff(base.seeds[0].trace, s2ap.seeds[0].trace);
                std::vector<double> ho = hamming_trace(base.seeds[0].trace);
                std::vector<double> hs = hamming_trace(s2ap.seeds[0].trace);
                for (size_t t = 0; t < diff.size(); ++t)
                    rows.push_back({static_cast<double>(t + 1), ho[t], hs[t], diff[t]});
                write_text_file(cfg.out_dir + "/diagnose_hamming_seed" + std::to_string(seed) +
                                    ".csv",
                                csv_text("epoch,h_orig,h_s2ap,diff", rows));
            } else {
                const std::string path = run_json_path(cfg, mode, seed);
                ExperimentResult run = results_from_json(read_text_file(path));
                std::vector<double> h = hamming_trace(run.seeds[0].trace);
                for (size_t t = 0; t < h.size(); ++t)
                    rows.push_back({static_cast<double>(t + 1), h[t]});
                write_text_file(cfg.out_dir + "/diagnose_hamming_seed" + std::to_string(seed) +
                                    ".csv",
                                csv_text("epoch,h", rows));
            }
            std::cout << "diagnose hamming seed=" << seed << ": " << rows.size() << " epochs\n";
        }
        return 0;
    }

    for (uint64_t seed : cfg.seeds) {
        Dataset ds = make_dataset(cfg, seed);
        const std::string pruned = cfg.out_dir + "/pruned_" +
                                   std::string(prune_mode_name(mode)) + "_seed" +
                                   std::to_string(seed) + ".spchk";
        Network net = load_checkpoint(pruned).net;
        SparsitySpec spec = SparsitySpec::uniform(net, cfg.prune.sparsity);
        const int64_t n = std::min<int64_t>(cfg.diag.batch, ds.x_train.shape[0]);
        const int64_t d = ds.x_train.shape[1];
        ScoreLossContext ctx;
        ctx.net = &net;
        ctx.spec = &spec;
        ctx.rank = cfg.model.rank;
        ctx.x = Tensor::zeros({n, d});
        std::copy(ds.x_train.data.begin(), ds.x_train.data.begin() + n * d, ctx.x.data.begin());
        ctx.y.assign(ds.y_train.begin(), ds.y_train.begin() + n);
        ctx.loss = cfg.loss;
        if (cfg.loss.kind != LossKind::clean_ce) {
            std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
            ctx.x_adv =
                pgd_attack(net, eff, ctx.x, ctx.y, cfg.attack, attack_objective(cfg.loss.kind),
                           substream(seed, stream::loss_diff, 999));
        }

        if (measure == "lambda") {
            GradFn grad = frozen_mask_grad_fn(ctx);
            LambdaResult lr = lambda_max(grad, gather_scores(net), cfg.diag.lambda_iterations,
                                         substream(seed, stream::power_iter));
            nlohmann::json j;
            j["lambda_max"] = lr.value;
            j["flat"] = lr.flat;
            write_text_file(cfg.out_dir + "/diagnose_lambda_seed" + std::to_string(seed) + ".json",
                            j.dump(2) + "\n");
            std::cout << "diagnose lambda seed=" << seed << " lambda_max=" << lr.value
                      << (lr.flat ? " (flat)" : "") << "\n";
        } else if (measure == "lossdiff") {
            LossDiffOptions opt;
            opt.steps = cfg.diag.lossdiff_steps;
            opt.restarts = cfg.diag.lossdiff_restarts;
            opt.seed = substream(seed, stream::loss_diff);
            std::map<double, double> grid = loss_diff_grid(ctx, cfg.diag.rho_grid, opt);
            std::vector<std::vector<double>> rows;
            for (const auto& [rho, v] : grid) rows.push_back({rho, v});
            write_text_file(cfg.out_dir + "/diagnose_lossdiff_seed" + std::to_string(seed) +
                                ".csv",
                            csv_text("rho,value", rows));
            std::cout << "diagnose lossdiff seed=" << seed << ": " << rows.size() << " rows\n";
        } else {
            throw ConfigError("diagnose: --measure must be lambda, lossdiff or hamming");
        }
    }
    return 0;
}

int cmd_sweep_gamma(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    StageTimings timings;
    GammaSweepResult sweep = sweep_gamma(cfg, cfg.gamma_grid, &timings);
    emit_gamma_sweep(sweep, cfg.out_dir);
    emit_timings(timings, cfg.out_dir);
    for (const auto& row : sweep.rows)
        std::cout << "gamma=" << row.gamma << " mask_robust_acc=" << row.mask_robust_acc << "\n";
    std::cout << "best_gamma=" << sweep.best_gamma << "\n";
    return 0;
}

int cmd_report(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    const PruneMode modes[] = {PruneMode::baseline, PruneMode::s2ap, PruneMode::awp};
    std::map<PruneMode, ExperimentResult> found;
    for (PruneMode mode : modes) {
        std::vector<SeedResult> seeds;
        for (uint64_t seed : cfg.seeds) {
            const std::string path = run_json_path(cfg, mode, seed);
            if (!std::filesystem::exists(path)) continue;
            ExperimentResult one = results_from_json(read_text_file(path));
            for (auto& s : one.seeds) seeds.push_back(std::move(s));
        }
        if (seeds.empty()) continue;
        ExperimentResult merged;
        merged.mode = prune_mode_name(mode);
        merged.config_echo = cfg.to_text();
        merged.seeds = std::move(seeds);
        std::vector<double> clean, robust, mask_robust;
        for (const auto& s : merged.seeds) {
            clean.push_back(s.final_model.clean_acc);
            robust.push_back(s.final_model.robust_acc);
            mask_robust.push_back(s.mask.robust_acc);
        }
        merged.clean = aggregate(clean);
        merged.robust = aggregate(robust);
        merged.mask_robust = aggregate(mask_robust);
        found[mode] = std::move(merged);
    }
    if (found.empty()) {
        std::cerr << "report: no run_<mode>_seed<k>.json files under " << cfg.out_dir << "\n";
        return 1;
    }
    for (const auto& [mode, result] : found) {
        write_text_file(cfg.out_dir + "/results_" + std::string(prune_mode_name(mode)) + ".json",
                        results_json(result));
    }
    if (found.count(PruneMode::baseline) && found.count(PruneMode::s2ap)) {
        PairedResult paired;
        paired.baseline = found[PruneMode::baseline];
        paired.s2ap = found[PruneMode::s2ap];
        emit_paired_artifacts(paired, cfg.prune.warmup_epochs, cfg.out_dir);
        std::cout << "report: paired artifacts written to " << cfg.out_dir << "\n";
    } else {
        emit_run_artifacts(found.begin()->second, cfg.out_dir);
        std::cout << "report: single-mode artifacts written to " << cfg.out_dir << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"score-space sharpness-aware adversarial pruning"};
    app.require_subcommand(1);

    CommonArgs pretrain_args, prune_args, finetune_args, diagnose_args, sweep_args, report_args;
    std::string prune_mode, diagnose_measure;

    CLI::App* pretrain = app.add_subcommand("pretrain", "robust dense pretraining");
    add_common(pretrain, pretrain_args);
    CLI::App* prune = app.add_subcommand("prune", "mask search");
    add_common(prune, prune_args);
    prune->add_option("--mode", prune_mode, "baseline|s2ap|awp (overrides prune.mode)");
    CLI::App* finetune = app.add_subcommand("finetune", "finetune the pruned model");
    add_common(finetune, finetune_args);
    CLI::App* diagnose = app.add_subcommand("diagnose", "sharpness / stability measures");
    add_common(diagnose, diagnose_args);
    diagnose->add_option("--measure", diagnose_measure, "lambda|lossdiff|hamming")->required();
    CLI::App* sweep = app.add_subcommand("sweep-gamma", "gamma grid search");
    add_common(sweep, sweep_args);
    CLI::App* report = app.add_subcommand("report", "aggregate run records into reports");
    add_common(report, report_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (pretrain->parsed()) return cmd_pretrain(pretrain_args);
        if (prune->parsed()) return cmd_prune(prune_args, prune_mode);
        if (finetune->parsed()) return cmd_finetune(finetune_args);
        if (diagnose->parsed()) return cmd_diagnose(diagnose_args, diagnose_measure);
        if (sweep->parsed()) return cmd_sweep_gamma(sweep_args);
        if (report->parsed()) return cmd_report(report_args);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
