// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "mpoe/gating.hpp"
#include "test_util.hpp"

using namespace mpoe;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Gate whose logits equal the input directly (identity w_gate).
GateConfig identity_gate(std::size_t n, GateKind kind, std::size_t k) {
    GateConfig cfg;
    cfg.n_experts = n;
    cfg.k = k;
    cfg.kind = kind;
    cfg.w_gate = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) cfg.w_gate.data()[i * n + i] = 1.0;
    return cfg;
}

}  // namespace

TEST_CASE("keep_top_k masks everything outside the top k") {
    CHECK(keep_top_k({1, 3, 2}, 1) == std::vector<double>{-kInf, 3, -kInf});
    CHECK(keep_top_k({1, 3, 2}, 3) == std::vector<double>{1, 3, 2});
    CHECK(keep_top_k({5, 5, 0}, 1) == std::vector<double>{5, -kInf, -kInf});
    CHECK(keep_top_k({1, 3, 2}, 2) == std::vector<double>{-kInf, 3, 2});
    CHECK_THROWS_AS(keep_top_k({1, 2}, 0), ConfigError);
    CHECK_THROWS_AS(keep_top_k({1, 2}, 3), ConfigError);
}

TEST_CASE("noisy top-k with noise off reduces to masked softmax") {
    GateConfig cfg = identity_gate(3, GateKind::topk, 2);
    Rng rng(1);
    GateOutput out = noisy_topk_gate({0.1, 2.0, -1.0}, cfg, rng);

    // top-2 logits are indices 1 and 0; frozen from softmax(0.1, 2.0)
    CHECK(out.selected == std::vector<std::size_t>{0, 1});
    CHECK(out.weights[0] == doctest::Approx(0.13010847436299786).epsilon(1e-12));
    CHECK(out.weights[1] == doctest::Approx(0.86989152563700210).epsilon(1e-12));
    CHECK(out.weights[2] == 0.0);
    CHECK(out.weights[0] + out.weights[1] + out.weights[2] ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("noise off with k = n equals a plain softmax gate") {
    GateConfig cfg = identity_gate(4, GateKind::topk, 4);
    Rng rng(2);
    const std::vector<double> x{0.3, -0.7, 1.1, 0.0};
    GateOutput out = noisy_topk_gate(x, cfg, rng);
    const std::vector<double> want = softmax(x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.weights[i] - want[i]) <= 1e-12);
    CHECK(out.selected.size() == 4);

    GateConfig plain = identity_gate(4, GateKind::softmax, 1);
    GateOutput out2 = noisy_topk_gate(x, plain, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out2.weights[i] == out.weights[i]);
}

TEST_CASE("noisy gate is deterministic given the seed") {
    GateConfig cfg = identity_gate(5, GateKind::topk, 2);
    cfg.noise_enabled = true;
    Rng wrng(77);
    cfg.w_noise = Tensor::randn({5, 5}, wrng);
    const std::vector<double> x{0.5, -0.2, 0.9, 0.1, -1.5};

    Rng r1(42), r2(42);
    GateOutput a = noisy_topk_gate(x, cfg, r1);
    GateOutput b = noisy_topk_gate(x, cfg, r2);
    CHECK(a.selected == b.selected);
    CHECK(a.weights == b.weights);
}

TEST_CASE("noise enabled without noise weights is a config error") {
    GateConfig cfg = identity_gate(3, GateKind::topk, 2);
    cfg.noise_enabled = true;
    Rng rng(3);
    CHECK_THROWS_AS(noisy_topk_gate({1, 2, 3}, cfg, rng), ConfigError);
}

TEST_CASE("noisy top-k invariants over random inputs") {
    Rng rng(11);
    GateConfig cfg;
    cfg.n_experts = 6;
    cfg.k = 3;
    cfg.kind = GateKind::topk;
    cfg.w_gate = Tensor::randn({8, 6}, rng);
    cfg.noise_enabled = true;
    cfg.w_noise = Tensor::randn({8, 6}, rng);

    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.normal();
        GateOutput out = noisy_topk_gate(x, cfg, rng);
        double sum = 0.0;
        std::size_t nonzero = 0;
        for (double w : out.weights) {
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
            sum += w;
            if (w != 0.0) ++nonzero;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
        CHECK(nonzero <= cfg.k);
        CHECK(out.selected.size() == nonzero);
        for (std::size_t i = 1; i < out.selected.size(); ++i) {
            CHECK(out.selected[i - 1] < out.selected[i]);
        }
    }
}

TEST_CASE("switch gate picks the softmax argmax with its probability") {
    GateConfig cfg = identity_gate(3, GateKind::switch_top1, 1);
    GateOutput out = switch_gate({0.1, 2.0, -1.0}, cfg);
    CHECK(out.selected == std::vector<std::size_t>{1});
    // frozen from softmax(0.1, 2.0, -1.0)[1]
    CHECK(out.weights[1] == doctest::Approx(0.8337810128778361).epsilon(1e-12));
    CHECK(out.weights[0] == 0.0);
    CHECK(out.weights[2] == 0.0);
}

TEST_CASE("switch gate on a single expert gives weight 1") {
    GateConfig cfg = identity_gate(1, GateKind::switch_top1, 1);
    GateOutput out = switch_gate({0.7}, cfg);
    CHECK(out.selected == std::vector<std::size_t>{0});
    CHECK(out.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("switch selection is invariant to a constant logit shift") {
    Rng rng(13);
    GateConfig cfg = identity_gate(5, GateKind::switch_top1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(5), shifted(5);
        for (std::size_t i = 0; i < 5; ++i) {
            x[i] = rng.normal();
            shifted[i] = x[i] + 3.25;
        }
        CHECK(switch_gate(x, cfg).selected == switch_gate(shifted, cfg).selected);
    }
}

TEST_CASE("switch gate always selects exactly one expert") {
    Rng rng(17);
    GateConfig cfg;
    cfg.n_experts = 7;
    cfg.k = 1;
    cfg.kind = GateKind::switch_top1;
    cfg.w_gate = Tensor::randn({6, 7}, rng);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> x(6);
        for (double& v : x) v = rng.normal();
        GateOutput out = switch_gate(x, cfg);
        CHECK(out.selected.size() == 1);
        std::size_t nonzero = 0;
        for (double w : out.weights) nonzero += w != 0.0;
        CHECK(nonzero == 1);
    }
}

TEST_CASE("duplicate logits break ties toward the lower index") {
    GateConfig cfg = identity_gate(4, GateKind::switch_top1, 1);
    CHECK(switch_gate({2.0, 2.0, 2.0, 1.0}, cfg).selected == std::vector<std::size_t>{0});
    CHECK(switch_gate({1.0, 2.0, 2.0, 1.0}, cfg).selected == std::vector<std::size_t>{1});

    // keep_top_k consistency under permutation of duplicate-logit experts:
    // the surviving set is always the lowest-indexed duplicates.
    const auto kept = keep_top_k({2.0, 1.0, 2.0, 2.0}, 2);
    CHECK(kept == std::vector<double>{2.0, -kInf, 2.0, -kInf});
}
