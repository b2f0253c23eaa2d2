#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "s2ap/data.hpp"
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

PruneConfig base_config(PruneMode mode) {
    PruneConfig cfg;
    cfg.sparsity = 0.5;
    cfg.gamma = 0.001;
    cfg.eta = 0.05;
    cfg.epochs = 4;
    cfg.warmup_epochs = 1;
    cfg.mode = mode;
    cfg.best_tracking = BestTracking::epoch;
    cfg.loss = LossSpec{LossKind::pgd_at, 0.0};
    cfg.batch_size = 16;
    cfg.seed = 7;
    return cfg;
}

struct Moons {
    Dataset ds = gen_two_moons(100, 0.1, 5);
};

}  // namespace

TEST_CASE("projection rescales onto the gamma ball and preserves direction") {
    // Single prunable layer, ||s|| = 100, gamma = 0.001: a pre-projection
    // ||z|| of 0.4 (eta) must come back at 0.1.
    Network net = Network::mlp({4, 4}, 3);
    init_scores(net);
    double s_norm_sq = 0.0;
    for (double& v : net.layers()[0].s.data) s_norm_sq += v * v;
    const double scale = 100.0 / std::sqrt(s_norm_sq);
    for (double& v : net.layers()[0].s.data) v *= scale;

    Tensor x = Tensor::zeros({8, 4});
    Rng rng(1);
    for (double& v : x.data) v = rng.uniform(0.0, 1.0);
    std::vector<int> y = {0, 1, 0, 1, 0, 1, 0, 1};

    SparsitySpec spec = SparsitySpec::uniform(net, 0.5);
    LossSpec loss{LossKind::clean_ce, 0.0};
    REQUIRE(perturb_scores(net, spec, RankRule::magnitude, x, nullptr, y, loss,
                           /*gamma=*/0.001, /*eta=*/0.4));
    double z_norm_sq = 0.0;
    for (double v : net.layers()[0].z.data) z_norm_sq += v * v;
    CHECK(std::sqrt(z_norm_sq) == doctest::Approx(0.1).epsilon(1e-12));

    // Direction: the projected z must be a positive multiple of the
    // unprojected step, reproduced here with a large gamma.
    Network net2 = net;
    for (auto& layer : net2.layers()) std::fill(layer.z.data.begin(), layer.z.data.end(), 0.0);
    REQUIRE(perturb_scores(net2, spec, RankRule::magnitude, x, nullptr, y, loss,
                           /*gamma=*/1e9, /*eta=*/0.4));
    const double ratio0 = net.layers()[0].z.data[0] / net2.layers()[0].z.data[0];
    for (size_t i = 0; i < net.layers()[0].z.data.size(); ++i) {
        if (net2.layers()[0].z.data[i] == 0.0) continue;
        CHECK(net.layers()[0].z.data[i] / net2.layers()[0].z.data[i] ==
              doctest::Approx(ratio0).epsilon(1e-12));
    }

    // Inside the ball nothing changes: eta small enough that ||z|| stays under
    // the bound.
    Network net3 = net2;
    for (auto& layer : net3.layers()) std::fill(layer.z.data.begin(), layer.z.data.end(), 0.0);
    REQUIRE(perturb_scores(net3, spec, RankRule::magnitude, x, nullptr, y, loss,
                           /*gamma=*/0.001, /*eta=*/0.05));
    double z3 = 0.0;
    for (double v : net3.layers()[0].z.data) z3 += v * v;
    CHECK(std::sqrt(z3) == doctest::Approx(0.05).epsilon(1e-12));  // untouched step length
}

TEST_CASE("single-parameter layer: step then clip gives z = +0.01") {
    Network net = Network::mlp({1, 1, 2}, 0);
    net.layers()[0].w = Tensor({1, 1}, {1.0});
    net.layers()[0].bias = Tensor::zeros({1});
    net.layers()[1].w = Tensor({1, 2}, {-1.0, 1.0});
    net.layers()[1].bias = Tensor::zeros({2});
    net.layers()[1].prunable = false;  // score space is exactly one parameter
    init_scores(net);
    REQUIRE(net.layers()[0].s.data[0] == 1.0);

    Tensor x({1, 1}, {1.0});
    std::vector<int> y = {0};
    SparsitySpec spec = SparsitySpec::uniform(net, 0.0);
    LossSpec loss{LossKind::clean_ce, 0.0};
    REQUIRE(perturb_scores(net, spec, RankRule::magnitude, x, nullptr, y, loss,
                           /*gamma=*/0.01, /*eta=*/1.0));
    CHECK(net.layers()[0].z.data[0] == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("projection invariant holds on random states") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        Network net = Network::mlp({3, 5, 2}, rng.next_u64());
        init_scores(net);
        Tensor x = Tensor::zeros({6, 3});
        for (double& v : x.data) v = rng.uniform(0.0, 1.0);
        std::vector<int> y;
        for (int i = 0; i < 6; ++i) y.push_back(static_cast<int>(rng.below(2)));
        SparsitySpec spec = SparsitySpec::uniform(net, 0.5);
        const double gamma = rng.uniform(0.0005, 0.05);
        const double eta = rng.uniform(0.001, 1.0);
        perturb_scores(net, spec, RankRule::magnitude, x, nullptr, y,
                       LossSpec{LossKind::clean_ce, 0.0}, gamma, eta);
        for (const auto& layer : net.layers()) {
            if (!layer.prunable) continue;
            double zn = 0.0, sn = 0.0;
            for (double v : layer.z.data) zn += v * v;
            for (double v : layer.s.data) sn += v * v;
            CHECK(std::sqrt(zn) <= gamma * std::sqrt(sn) * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("weights are bit-identical across the whole mask search") {
    Moons m;
    for (PruneMode mode : {PruneMode::baseline, PruneMode::s2ap, PruneMode::awp}) {
        Network net = Network::mlp({2, 8, 2}, 21);
        init_scores(net);
        std::vector<std::vector<double>> w_before, b_before;
        for (const auto& layer : net.layers()) {
            w_before.push_back(layer.w.data);
            b_before.push_back(layer.bias.data);
        }
        run_prune(net, m.ds.x_train, m.ds.y_train, base_config(mode), small_attack());
        for (size_t l = 0; l < net.layer_count(); ++l) {
            CHECK(net.layers()[l].w.data == w_before[l]);
            CHECK(net.layers()[l].bias.data == b_before[l]);
        }
    }
}

TEST_CASE("restore exactness: s_after equals s_entry minus the normalized step") {
    Moons m;
    Network net = Network::mlp({2, 8, 2}, 22);
    init_scores(net);
    PruneConfig cfg = base_config(PruneMode::s2ap);
    cfg.warmup_epochs = 0;
    std::vector<IterationRecord> records;
    PruneObserver obs = [&](const IterationRecord& r) { records.push_back(r); };
    run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack(), {}, &obs);
    REQUIRE(!records.empty());
    for (const auto& r : records) {
        REQUIRE(r.s_entry.size() == r.s_after.size());
        for (size_t i = 0; i < r.s_entry.size(); ++i) {
            CHECK(std::abs(r.s_after[i] - (r.s_entry[i] - r.step[i])) <= 1e-12);
        }
        const double step_norm = l2_norm(r.step);
        if (step_norm > 0.0) CHECK(step_norm == doctest::Approx(cfg.eta).epsilon(1e-9));
    }
}

TEST_CASE("gamma to zero reproduces the baseline trajectory") {
    Moons m;
    auto run_with = [&](PruneMode mode, double gamma) {
        Network net = Network::mlp({2, 8, 2}, 23);
        init_scores(net);
        PruneConfig cfg = base_config(mode);
        cfg.gamma = gamma;
        cfg.warmup_epochs = 0;
        cfg.epochs = 10;  // 5 iters/epoch -> 50 iterations
        std::vector<std::vector<double>> trajectory;
        PruneObserver obs = [&](const IterationRecord& r) { trajectory.push_back(r.s_after); };
        run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack(), {}, &obs);
        return trajectory;
    };
    const auto base = run_with(PruneMode::baseline, 1.0);
    const auto tiny_s2ap = run_with(PruneMode::s2ap, 1e-12);
    const auto tiny_awp = run_with(PruneMode::awp, 1e-12);
    REQUIRE(base.size() == 50);
    REQUIRE(tiny_s2ap.size() == base.size());
    for (size_t it = 0; it < base.size(); ++it) {
        CHECK(max_abs_diff(base[it], tiny_s2ap[it]) <= 1e-9);
        CHECK(max_abs_diff(base[it], tiny_awp[it]) <= 1e-9);
    }
}

TEST_CASE("epochs equal to warmup reproduces the baseline mask bit-exactly") {
    Moons m;
    auto final_mask = [&](PruneMode mode) {
        Network net = Network::mlp({2, 8, 2}, 24);
        init_scores(net);
        PruneConfig cfg = base_config(mode);
        cfg.epochs = 3;
        cfg.warmup_epochs = 3;  // s2ap never activates
        PruneResult r = run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack());
        return r;
    };
    PruneResult a = final_mask(PruneMode::baseline);
    PruneResult b = final_mask(PruneMode::s2ap);
    REQUIRE(a.best_masks.size() == b.best_masks.size());
    for (size_t l = 0; l < a.best_masks.size(); ++l)
        CHECK(a.best_masks[l].data == b.best_masks[l].data);
    CHECK(a.best_scores == b.best_scores);
}

TEST_CASE("two-moons s2ap run: cardinality and best-loss tracking") {
    // 2->8->2 MLP, sparsity 0.5, 20 epochs with 5 warm-up, gamma 0.001.
    Dataset ds = gen_two_moons(100, 0.1, 9);
    Network net = Network::mlp({2, 8, 2}, 25);
    init_scores(net);
    PruneConfig cfg = base_config(PruneMode::s2ap);
    cfg.sparsity = 0.5;
    cfg.gamma = 0.001;
    cfg.epochs = 20;
    cfg.warmup_epochs = 5;
    PruneResult r = run_prune(net, ds.x_train, ds.y_train, cfg, small_attack());

    SparsitySpec spec = SparsitySpec::uniform(net, cfg.sparsity);
    for (size_t l = 0; l < net.layer_count(); ++l) {
        double ones = 0;
        for (double v : r.best_masks[l].data) ones += v;
        CHECK(ones == static_cast<double>(spec.retained[l]));
    }
    // Best tracked loss is <= every tracked candidate.
    for (double epoch_loss : r.epoch_mean_loss) CHECK(r.best_loss <= epoch_loss + 1e-15);
    // One mask snapshot per epoch plus the reference.
    CHECK(r.trace.size() == static_cast<size_t>(cfg.epochs) + 1);
}

TEST_CASE("iteration-level best tracking matches the recorded minimum") {
    Moons m;
    Network net = Network::mlp({2, 8, 2}, 26);
    init_scores(net);
    PruneConfig cfg = base_config(PruneMode::baseline);
    cfg.best_tracking = BestTracking::iteration;
    std::vector<double> losses;
    PruneObserver obs = [&](const IterationRecord& r) { losses.push_back(r.loss); };
    PruneResult r = run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack(), {}, &obs);
    REQUIRE(!losses.empty());
    CHECK(r.best_loss == *std::min_element(losses.begin(), losses.end()));
}

TEST_CASE("baseline single step is s minus eta times the normalized gradient") {
    Moons m;
    Network net = Network::mlp({2, 4, 2}, 27);
    init_scores(net);
    PruneConfig cfg = base_config(PruneMode::baseline);
    cfg.epochs = 1;
    cfg.warmup_epochs = 0;
    cfg.batch_size = static_cast<int>(m.ds.x_train.shape[0]);  // single iteration
    cfg.loss = LossSpec{LossKind::clean_ce, 0.0};

    std::vector<IterationRecord> records;
    PruneObserver obs = [&](const IterationRecord& r) { records.push_back(r); };
    run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack(), {}, &obs);
    REQUIRE(records.size() == 1);
    // Verify the update used the normalized STE gradient at the entry point:
    // recompute it from scratch through the public pieces.
    Network fresh = Network::mlp({2, 4, 2}, 27);
    init_scores(fresh);
    SparsitySpec spec = SparsitySpec::uniform(fresh, cfg.sparsity);
    std::vector<Tensor> masks = masks_from_scores(fresh, spec, RankRule::magnitude, ScorePoint::s);
    std::vector<Tensor> eff = effective_masked(fresh, masks);
    for (auto& e : eff) e.set_requires_grad(true);
    std::vector<Tensor> bias = bias_copies(fresh);
    batch_loss(fresh, eff, bias, m.ds.x_train, nullptr, m.ds.y_train, cfg.loss);
    std::vector<double> g;
    for (size_t l = 0; l < fresh.layer_count(); ++l)
        for (size_t i = 0; i < eff[l].grad.size(); ++i)
            g.push_back(eff[l].grad[i] * fresh.layers()[l].w.data[i]);
    const double gn = l2_norm(g);
    REQUIRE(gn > 0.0);
    for (size_t i = 0; i < g.size(); ++i) {
        const double expect = records[0].s_entry[i] - cfg.eta * g[i] / gn;
        CHECK(records[0].s_after[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("awp mode leaves nu cleared and weights untouched per iteration") {
    Moons m;
    Network net = Network::mlp({2, 8, 2}, 28);
    init_scores(net);
    PruneConfig cfg = base_config(PruneMode::awp);
    cfg.warmup_epochs = 0;
    run_prune(net, m.ds.x_train, m.ds.y_train, cfg, small_attack());
    for (const auto& layer : net.layers())
        for (double v : layer.nu.data) CHECK(v == 0.0);
}

TEST_CASE("zero score gradient leaves z unchanged and logs the event") {
    // All-zero weights make the STE chain factor vanish everywhere.
    Network net = Network::mlp({2, 3, 2}, 40);
    for (auto& layer : net.layers())
        std::fill(layer.w.data.begin(), layer.w.data.end(), 0.0);
    std::vector<std::string> warnings;
    init_scores(net, &warnings);
    CHECK(warnings.size() == 2);

    Dataset ds = gen_two_moons(20, 0.1, 2);
    SparsitySpec spec = SparsitySpec::uniform(net, 0.5);
    std::vector<std::string> events;
    AttackConfig attack = small_attack();
    const bool moved =
        perturb_scores(net, spec, RankRule::magnitude, ds.x_train, ds.y_train,
                       LossSpec{LossKind::pgd_at, 0.0}, attack, 0.01, 0.1, 3, &events);
    CHECK_FALSE(moved);
    REQUIRE(events.size() == 1);
    CHECK(events[0].find("zero gradient") != std::string::npos);
    for (const auto& layer : net.layers())
        for (double v : layer.z.data) CHECK(v == 0.0);
}

TEST_CASE("awp vs s2ap mask robustness reported side by side") {
    // Directional expectation only; logged, not asserted.
    Dataset ds = gen_two_moons(200, 0.1, 77);
    AttackConfig attack = small_attack();
    AttackConfig eval = attack;
    eval.steps = 20;
    auto mask_acc = [&](PruneMode mode) {
        Network net = Network::mlp({2, 16, 2}, 78);
        init_scores(net);
        PruneConfig cfg = base_config(mode);
        cfg.epochs = 8;
        cfg.warmup_epochs = 2;
        run_prune(net, ds.x_train, ds.y_train, cfg, attack);
        std::vector<Tensor> eff = effective_masked(net, layer_masks(net));
        return robust_accuracy(net, eff, ds.x_test, ds.y_test, eval, 1, 9);
    };
    const double awp = mask_acc(PruneMode::awp);
    const double s2ap = mask_acc(PruneMode::s2ap);
    const std::string note = s2ap >= awp ? "(s2ap >= awp)" : "(awp ahead on this desk run)";
    MESSAGE("mask robust accuracy: awp=" << awp << " s2ap=" << s2ap << " " << note);
    CHECK(awp >= 0.0);
    CHECK(s2ap >= 0.0);
}

TEST_CASE("prune config validation") {
    PruneConfig cfg = base_config(PruneMode::s2ap);
    cfg.validate();
    PruneConfig bad = cfg;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.gamma = 0.0;
    bad.mode = PruneMode::baseline;  // baseline does not need gamma
    bad.validate();
    bad = cfg;
    bad.warmup_epochs = bad.epochs + 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.warmup_epochs = bad.epochs;  // legal: s2ap never activates
    bad.validate();
    bad = cfg;
    bad.sparsity = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
