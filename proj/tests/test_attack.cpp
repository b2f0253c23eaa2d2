#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "s2ap/attack.hpp"
#include "s2ap/loss.hpp"
#include "s2ap/rng.hpp"

using namespace s2ap;

namespace {

Network linear_net(const Tensor& w) {
    Network net = Network::mlp({w.shape[0], w.shape[1]}, 0);
    net.layers()[0].w = w;
    std::fill(net.layers()[0].bias.data.begin(), net.layers()[0].bias.data.end(), 0.0);
    return net;
}

}  // namespace

TEST_CASE("single-step PGD matches the hand-computed sign vector") {
    // Linear model f(x) = x W with CE loss; the input gradient for label y is
    // (softmax(xW) - onehot(y)) W^T, computed here by hand on 3 features.
    Tensor w({3, 2}, {0.6, -0.2, -0.4, 0.8, 0.1, 0.3});
    Network net = linear_net(w);
    Tensor x({1, 3}, {0.4, 0.6, 0.5});
    std::vector<int> y = {0};

    // Hand gradient.
    double z0 = 0, z1 = 0;
    for (int i = 0; i < 3; ++i) {
        z0 += x.data[i] * w.data[2 * i];
        z1 += x.data[i] * w.data[2 * i + 1];
    }
    const double m = std::max(z0, z1);
    const double p0 = std::exp(z0 - m) / (std::exp(z0 - m) + std::exp(z1 - m));
    const double p1 = 1.0 - p0;
    std::vector<double> grad(3);
    for (int i = 0; i < 3; ++i)
        grad[i] = (p0 - 1.0) * w.data[2 * i] + p1 * w.data[2 * i + 1];

    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.alpha = 0.05;
    cfg.steps = 1;
    cfg.random_start = false;
    Tensor x_adv = pgd_attack(net, effective_dense(net), x, y, cfg,
                              AttackObjective::cross_entropy, 0);
    for (int i = 0; i < 3; ++i) {
        const double sign = grad[i] > 0 ? 1.0 : (grad[i] < 0 ? -1.0 : 0.0);
        const double expect = std::min(std::max(x.data[i] + cfg.alpha * sign, 0.0), 1.0);
        CHECK(x_adv.data[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("epsilon zero returns the input unchanged") {
    Network net = linear_net(Tensor({2, 2}, {1.0, -1.0, 0.5, 0.5}));
    Tensor x({2, 2}, {0.1, 0.9, 0.4, 0.6});
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.alpha = 0.01;
    cfg.steps = 5;
    cfg.random_start = true;
    Tensor x_adv = pgd_attack(net, effective_dense(net), x, {0, 1}, cfg,
                              AttackObjective::cross_entropy, 7);
    CHECK(x_adv.data == x.data);
}

TEST_CASE("containment holds after every intermediate step") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Network net = Network::mlp({3, 4, 2}, rng.next_u64());
        Tensor x = Tensor::zeros({4, 3});
        for (double& v : x.data) v = rng.uniform(0.0, 1.0);
        std::vector<int> y = {0, 1, 0, 1};
        AttackConfig cfg;
        cfg.epsilon = rng.uniform(0.01, 0.2);
        cfg.alpha = cfg.epsilon / 2.0;
        cfg.steps = 4;
        cfg.random_start = true;

        int observed = 0;
        std::function<void(const Tensor&)> check = [&](const Tensor& step) {
            ++observed;
            for (size_t i = 0; i < step.data.size(); ++i) {
                CHECK(step.data[i] >= cfg.clamp_lo);
                CHECK(step.data[i] <= cfg.clamp_hi);
                CHECK(std::abs(step.data[i] - x.data[i]) <= cfg.epsilon + 1e-12);
            }
        };
        pgd_attack(net, effective_dense(net), x, y, cfg, AttackObjective::cross_entropy,
                   rng.next_u64(), &check);
        CHECK(observed == cfg.steps + 1);  // random start plus each step
    }
}

TEST_CASE("fixed seed reproduces the attack bit for bit") {
    Network net = Network::mlp({2, 8, 2}, 3);
    Tensor x({3, 2}, {0.2, 0.4, 0.6, 0.8, 0.5, 0.1});
    std::vector<int> y = {0, 1, 0};
    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.alpha = 0.02;
    cfg.steps = 10;
    cfg.random_start = true;
    Tensor a = pgd_attack(net, effective_dense(net), x, y, cfg, AttackObjective::cross_entropy, 42);
    Tensor b = pgd_attack(net, effective_dense(net), x, y, cfg, AttackObjective::cross_entropy, 42);
    CHECK(a.data == b.data);
    Tensor c = pgd_attack(net, effective_dense(net), x, y, cfg, AttackObjective::cross_entropy, 43);
    CHECK(a.data != c.data);
}

TEST_CASE("PGD without random start does not lower the loss (logged, not asserted)") {
    // Maximization should only raise the loss from the clean point up to PGD
    // noise; violations are counted and reported rather than failed on.
    Rng rng(11);
    int violations = 0;
    const int runs = 100;
    for (int trial = 0; trial < runs; ++trial) {
        Network net = Network::mlp({2, 6, 2}, rng.next_u64());
        Tensor x = Tensor::zeros({5, 2});
        for (double& v : x.data) v = rng.uniform(0.1, 0.9);
        std::vector<int> y;
        for (int i = 0; i < 5; ++i) y.push_back(static_cast<int>(rng.below(2)));
        AttackConfig cfg;
        cfg.epsilon = 0.05;
        cfg.alpha = 0.01;
        cfg.steps = 5;
        cfg.random_start = false;
        LossSpec spec{LossKind::pgd_at, 0.0};

        std::vector<Tensor> eff = effective_dense(net);
        Tensor x_adv =
            pgd_attack(net, eff, x, y, cfg, AttackObjective::cross_entropy, rng.next_u64());
        std::vector<Tensor> eff_a = eff, eff_b = eff;
        std::vector<Tensor> bias_a = bias_copies(net), bias_b = bias_copies(net);
        Tensor x_clean = x;
        const double adv = batch_loss(net, eff_a, bias_a, x, &x_adv, y, spec);
        const double clean = batch_loss(net, eff_b, bias_b, x, &x_clean, y, spec);
        if (adv < clean - 1e-9) ++violations;
    }
    MESSAGE("pgd monotonicity violations: " << violations << " / " << runs);
    CHECK(violations <= runs / 10);  // loose sanity bound; PGD is not strictly monotone
}

TEST_CASE("attack config validation") {
    AttackConfig ok;
    ok.validate();
    AttackConfig bad = ok;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.alpha = bad.epsilon * 2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = ok;
    bad.clamp_lo = 1.0;
    bad.clamp_hi = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    AttackConfig zero_eps = ok;
    zero_eps.epsilon = 0.0;  // legal: the attack degenerates to the identity
    zero_eps.validate();
}
