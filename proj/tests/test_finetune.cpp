#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s2ap/data.hpp"
#include "s2ap/finetune.hpp"
#include "s2ap/pruner.hpp"
#include "s2ap/rng.hpp"

using namespace s2ap;

namespace {

AttackConfig small_attack() {
    AttackConfig a;
    a.epsilon = 0.08;
    a.alpha = 0.02;
    a.steps = 3;
    return a;
}

FinetuneConfig base_config(FinetuneMode mode) {
    FinetuneConfig cfg;
    cfg.epochs = 3;
    cfg.eta = 0.02;
    cfg.gamma = 0.005;
    cfg.mode = mode;
    cfg.loss = LossSpec{LossKind::pgd_at, 0.0};
    cfg.batch_size = 16;
    cfg.seed = 4;
    return cfg;
}

/// Network pruned to 50% with a quick baseline search, masks adopted.
Network pruned_net(const Dataset& ds, uint64_t seed) {
    Network net = Network::mlp({2, 8, 2}, seed);
    init_scores(net);
    PruneConfig pcfg;
    pcfg.sparsity = 0.5;
    pcfg.mode = PruneMode::baseline;
    pcfg.epochs = 2;
    pcfg.warmup_epochs = 0;
    pcfg.eta = 0.05;
    pcfg.loss = LossSpec{LossKind::clean_ce, 0.0};
    pcfg.batch_size = 16;
    pcfg.seed = seed;
    run_prune(net, ds.x_train, ds.y_train, pcfg, small_attack());
    return net;
}

}  // namespace

TEST_CASE("pruned positions stay frozen and inert") {
    Dataset ds = gen_two_moons(100, 0.1, 3);
    for (FinetuneMode mode : {FinetuneMode::standard, FinetuneMode::s2ap_awp}) {
        Network net = pruned_net(ds, 31);
        std::vector<std::vector<double>> w_before, masks;
        for (const auto& layer : net.layers()) {
            w_before.push_back(layer.w.data);
            masks.push_back(layer.m.data);
        }
        run_finetune(net, ds.x_train, ds.y_train, base_config(mode), small_attack());
        int frozen_checked = 0;
        for (size_t l = 0; l < net.layer_count(); ++l) {
            for (size_t i = 0; i < masks[l].size(); ++i) {
                if (masks[l][i] == 0.0) {
                    CHECK(net.layers()[l].w.data[i] == w_before[l][i]);
                    ++frozen_checked;
                }
            }
        }
        CHECK(frozen_checked > 0);
        // The effective weight at pruned positions is exactly zero.
        std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
        for (size_t l = 0; l < net.layer_count(); ++l)
            for (size_t i = 0; i < masks[l].size(); ++i)
                if (masks[l][i] == 0.0) CHECK(eff[l].data[i] == 0.0);
    }
}

TEST_CASE("one epoch reduces the robust training loss on nearly all seeds") {
    int improved = 0;
    const int runs = 20;
    for (int trial = 0; trial < runs; ++trial) {
        Dataset ds = gen_two_moons(100, 0.1, 100 + trial);
        Network net = pruned_net(ds, 200 + trial);
        FinetuneConfig cfg = base_config(FinetuneMode::standard);
        cfg.epochs = 2;
        cfg.seed = trial;
        FinetuneResult r = run_finetune(net, ds.x_train, ds.y_train, cfg, small_attack());
        if (r.epoch_mean_loss[1] < r.epoch_mean_loss[0]) ++improved;
    }
    MESSAGE("loss improved in " << improved << " / " << runs << " runs");
    CHECK(improved >= runs * 9 / 10);
}

TEST_CASE("gamma to zero matches standard finetuning to 1e-9") {
    Dataset ds = gen_two_moons(100, 0.1, 6);
    auto run_with = [&](FinetuneMode mode, double gamma) {
        Network net = pruned_net(ds, 33);
        FinetuneConfig cfg = base_config(mode);
        cfg.gamma = gamma;
        std::vector<std::vector<double>> trajectory;
        FinetuneObserver obs = [&](const FinetuneRecord& r) { trajectory.push_back(r.w_after); };
        run_finetune(net, ds.x_train, ds.y_train, cfg, small_attack(), &obs);
        return trajectory;
    };
    const auto standard = run_with(FinetuneMode::standard, 0.005);
    const auto tiny = run_with(FinetuneMode::s2ap_awp, 1e-14);
    REQUIRE(standard.size() == tiny.size());
    for (size_t it = 0; it < standard.size(); ++it)
        CHECK(max_abs_diff(standard[it], tiny[it]) <= 1e-9);
}

TEST_CASE("all-ones mask reduces s2ap_awp to classic full-weight AWP") {
    // Nothing is frozen: every position may move.
    Dataset ds = gen_two_moons(100, 0.1, 7);
    Network net = Network::mlp({2, 6, 2}, 35);  // masks initialize to ones
    std::vector<std::vector<double>> w_before;
    for (const auto& layer : net.layers()) w_before.push_back(layer.w.data);
    run_finetune(net, ds.x_train, ds.y_train, base_config(FinetuneMode::s2ap_awp),
                 small_attack());
    int moved = 0;
    for (size_t l = 0; l < net.layer_count(); ++l)
        for (size_t i = 0; i < w_before[l].size(); ++i)
            if (net.layers()[l].w.data[i] != w_before[l][i]) ++moved;
    CHECK(moved == static_cast<int>(net.layers()[0].w.data.size() +
                                    net.layers()[1].w.data.size()));
}

TEST_CASE("nu projection arithmetic: norm 10 weights, gamma 0.005 caps nu at 0.05") {
    Dataset ds = gen_two_moons(100, 0.1, 8);
    Network net = pruned_net(ds, 36);
    // Rescale the live weights of layer 0 so ||w ⊙ m|| = 10.
    {
        auto& layer = net.layers()[0];
        double live_sq = 0.0;
        for (size_t i = 0; i < layer.w.data.size(); ++i) {
            const double lw = layer.w.data[i] * layer.m.data[i];
            live_sq += lw * lw;
        }
        const double scale = 10.0 / std::sqrt(live_sq);
        for (double& v : layer.w.data) v *= scale;
    }
    FinetuneConfig cfg = base_config(FinetuneMode::s2ap_awp);
    cfg.eta = 0.2;  // pre-projection ||nu|| = 0.2 across all layers
    cfg.gamma = 0.005;
    cfg.epochs = 1;
    cfg.batch_size = static_cast<int>(ds.x_train.shape[0]);

    std::vector<FinetuneRecord> records;
    FinetuneObserver obs = [&](const FinetuneRecord& r) { records.push_back(r); };
    run_finetune(net, ds.x_train, ds.y_train, cfg, small_attack(), &obs);
    REQUIRE(records.size() == 1);
    // Layer 0's slice of nu respects the projected bound 0.005 * 10 = 0.05.
    const size_t c0 = net.layers()[0].w.data.size();
    double nu0 = 0.0;
    for (size_t i = 0; i < c0; ++i) nu0 += records[0].nu[i] * records[0].nu[i];
    CHECK(std::sqrt(nu0) <= 0.05 * (1.0 + 1e-12));
}

TEST_CASE("nu restore exactness: w_after equals w_entry minus the applied step") {
    Dataset ds = gen_two_moons(100, 0.1, 9);
    Network net = pruned_net(ds, 37);
    std::vector<FinetuneRecord> records;
    FinetuneObserver obs = [&](const FinetuneRecord& r) { records.push_back(r); };
    run_finetune(net, ds.x_train, ds.y_train, base_config(FinetuneMode::s2ap_awp),
                 small_attack(), &obs);
    for (const auto& r : records) {
        for (size_t i = 0; i < r.w_entry.size(); ++i)
            CHECK(std::abs(r.w_after[i] - (r.w_entry[i] - r.step_w[i])) <= 1e-12);
    }
    // nu buffers are cleared after every iteration.
    for (const auto& layer : net.layers())
        for (double v : layer.nu.data) CHECK(v == 0.0);
}

TEST_CASE("epsilon zero with clean loss is ordinary finetuning") {
    Dataset ds = gen_two_moons(100, 0.1, 10);
    Network net = pruned_net(ds, 38);
    FinetuneConfig cfg = base_config(FinetuneMode::standard);
    cfg.loss = LossSpec{LossKind::clean_ce, 0.0};
    AttackConfig attack = small_attack();
    attack.epsilon = 0.0;
    FinetuneResult r = run_finetune(net, ds.x_train, ds.y_train, cfg, attack);
    CHECK(r.epoch_mean_loss.size() == static_cast<size_t>(cfg.epochs));
}

TEST_CASE("step decay halves the step length after the midpoint") {
    Dataset ds = gen_two_moons(100, 0.1, 11);
    Network net = pruned_net(ds, 39);
    FinetuneConfig cfg = base_config(FinetuneMode::standard);
    cfg.epochs = 4;
    cfg.step_decay = true;
    std::vector<FinetuneRecord> records;
    FinetuneObserver obs = [&](const FinetuneRecord& r) { records.push_back(r); };
    run_finetune(net, ds.x_train, ds.y_train, cfg, small_attack(), &obs);
    for (const auto& r : records) {
        std::vector<double> full_step;  // weights plus biases share the norm
        for (double v : r.step_w) full_step.push_back(v);
        const double wnorm = l2_norm(full_step);
        if (wnorm == 0.0) continue;
        const double eta = r.epoch >= cfg.epochs / 2 ? 0.5 * cfg.eta : cfg.eta;
        // The weight step is part of a jointly-normalized (w, b) step, so its
        // norm is bounded by the effective eta.
        CHECK(wnorm <= eta * (1.0 + 1e-12));
    }
}

TEST_CASE("finetune config validation") {
    FinetuneConfig cfg = base_config(FinetuneMode::s2ap_awp);
    cfg.validate();
    FinetuneConfig bad = cfg;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.mode = FinetuneMode::standard;  // gamma unused there
    bad.validate();
    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
