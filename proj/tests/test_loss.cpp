#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s2ap/loss.hpp"
#include "s2ap/rng.hpp"

using namespace s2ap;

namespace {

struct Fixture {
    Network net = Network::mlp({2, 6, 2}, 19);
    Tensor x;
    std::vector<int> y;

    Fixture() {
        Rng rng(2);
        x = Tensor::zeros({8, 2});
        for (double& v : x.data) v = rng.uniform(0.1, 0.9);
        for (int i = 0; i < 8; ++i) y.push_back(i % 2);
    }
};

}  // namespace

TEST_CASE("trades with beta zero equals clean cross-entropy") {
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 0.1;
    attack.alpha = 0.02;
    attack.steps = 5;
    const std::vector<Tensor> eff = effective_dense(f.net);
    const double trades =
        robust_loss(f.net, eff, f.x, f.y, LossSpec{LossKind::trades, 0.0}, attack, 3);
    const double clean =
        robust_loss(f.net, eff, f.x, f.y, LossSpec{LossKind::clean_ce, 0.0}, attack, 3);
    CHECK(std::abs(trades - clean) <= 1e-12);
}

TEST_CASE("trades under a zero-budget attack equals clean cross-entropy") {
    // KL(p || p) = 0, so an epsilon = 0 attack collapses the robust term.
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 0.0;
    attack.alpha = 0.02;
    attack.steps = 5;
    const std::vector<Tensor> eff = effective_dense(f.net);
    const double trades =
        robust_loss(f.net, eff, f.x, f.y, LossSpec{LossKind::trades, 6.0}, attack, 3);
    const double clean =
        robust_loss(f.net, eff, f.x, f.y, LossSpec{LossKind::clean_ce, 0.0}, attack, 3);
    CHECK(std::abs(trades - clean) <= 1e-12);
}

TEST_CASE("pgd_at stays above clean loss without random start (logged)") {
    Rng rng(4);
    int violations = 0;
    const int runs = 100;
    for (int trial = 0; trial < runs; ++trial) {
        Network net = Network::mlp({2, 4, 2}, rng.next_u64());
        Tensor x = Tensor::zeros({6, 2});
        for (double& v : x.data) v = rng.uniform(0.1, 0.9);
        std::vector<int> y;
        for (int i = 0; i < 6; ++i) y.push_back(static_cast<int>(rng.below(2)));
        AttackConfig attack;
        attack.epsilon = 0.06;
        attack.alpha = 0.015;
        attack.steps = 4;
        attack.random_start = false;
        const std::vector<Tensor> eff = effective_dense(net);
        const double adv =
            robust_loss(net, eff, x, y, LossSpec{LossKind::pgd_at, 0.0}, attack, trial);
        const double clean =
            robust_loss(net, eff, x, y, LossSpec{LossKind::clean_ce, 0.0}, attack, trial);
        if (adv < clean - 1e-9) ++violations;
    }
    MESSAGE("pgd_at < clean_ce violations: " << violations << " / " << runs);
    CHECK(violations == 0);
}

TEST_CASE("all loss kinds are non-negative and deterministic under a fixed seed") {
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 0.08;
    attack.alpha = 0.02;
    attack.steps = 5;
    const std::vector<Tensor> eff = effective_dense(f.net);
    for (LossKind kind : {LossKind::clean_ce, LossKind::pgd_at, LossKind::trades}) {
        const LossSpec spec{kind, 6.0};
        const double a = robust_loss(f.net, eff, f.x, f.y, spec, attack, 123);
        const double b = robust_loss(f.net, eff, f.x, f.y, spec, attack, 123);
        CHECK(a >= 0.0);
        CHECK(a == b);
    }
}

TEST_CASE("batch_loss validates inputs") {
    Fixture f;
    std::vector<Tensor> eff = effective_dense(f.net);
    std::vector<Tensor> bias = bias_copies(f.net);
    CHECK_THROWS_AS(batch_loss(f.net, eff, bias, f.x, nullptr, {}, LossSpec{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(batch_loss(f.net, eff, bias, f.x, nullptr, f.y,
                               LossSpec{LossKind::pgd_at, 0.0}),
                    std::invalid_argument);
    LossSpec bad;
    bad.beta = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("trades gradients flow through both the clean and adversarial paths") {
    Fixture f;
    AttackConfig attack;
    attack.epsilon = 0.08;
    attack.alpha = 0.02;
    attack.steps = 3;
    std::vector<Tensor> eff = effective_dense(f.net);
    Tensor x_adv = pgd_attack(f.net, eff, f.x, f.y, attack, AttackObjective::kl_from_clean, 9);
    for (auto& e : eff) e.set_requires_grad(true);
    std::vector<Tensor> bias = bias_copies(f.net);
    batch_loss(f.net, eff, bias, f.x, &x_adv, f.y, LossSpec{LossKind::trades, 6.0});
    double total = 0.0;
    for (const auto& e : eff)
        for (double g : e.grad) total += std::abs(g);
    CHECK(total > 0.0);
}
