// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mpoe/analysis.hpp"
#include "mpoe/reference.hpp"
#include "test_util.hpp"

using namespace mpoe;

namespace {

DenseMoeBank dense_pair(std::uint64_t seed) {
    Rng rng(seed);
    DenseMoeBank bank;
    bank.n_experts = 2;
    bank.d_model = 5;
    bank.d_ff = 7;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        const Shape shape = slot == kSlotW1 ? Shape{5, 7} : Shape{7, 5};
        Tensor w = Tensor::randn(shape, rng);
        bank.weights[slot] = {w, w};
        const std::size_t blen = slot == kSlotW1 ? 7 : 5;
        bank.biases[slot] = {Tensor::zeros({blen}), Tensor::zeros({blen})};
    }
    bank.gate.n_experts = 2;
    bank.gate.k = 1;
    bank.gate.w_gate = Tensor::randn({5, 2}, rng);
    return bank;
}

}  // namespace

TEST_CASE("identical experts have zero variation") {
    DenseMoeBank bank = dense_pair(1);
    const auto stats = expert_variation(bank, 0);
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].mean == 0.0);
    CHECK(stats[0].std_dev == 0.0);
    CHECK(stats[0].frac_lt_1e4 == 1.0);
    CHECK(stats[0].frac_mid == 0.0);
}

TEST_CASE("a constant shift shows up as its signed mean with zero spread") {
    DenseMoeBank bank = dense_pair(2);
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (double& v : bank.weights[slot][1].data()) v += 1e-3;
    }
    const auto stats = expert_variation(bank, 0);
    CHECK(stats[0].mean == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(stats[0].std_dev <= 1e-15);
    CHECK(stats[0].frac_lt_1e4 == 0.0);
    CHECK(stats[0].frac_mid == 1.0);
}

TEST_CASE("iid perturbations are recovered in the spread statistic") {
    Rng rng(3);
    DenseMoeBank bank = dense_pair(3);
    bank.n_experts = 2;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (double& v : bank.weights[slot][1].data()) v += 0.03 * rng.normal();
    }
    const auto stats = expert_variation(bank, 0);
    CHECK(stats[0].std_dev == doctest::Approx(0.03).epsilon(0.05));
    CHECK(std::abs(stats[0].mean) < 0.03);
}

TEST_CASE("variation fractions match a naive histogram oracle") {
    Rng rng(4);
    DenseMoeBank bank = dense_pair(4);
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (double& v : bank.weights[slot][1].data()) v += 0.005 * rng.normal();
    }
    const auto stats = expert_variation(bank, 0);

    std::size_t lo = 0, mid = 0, n = 0;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        const auto& a = bank.weights[slot][0].data();
        const auto& b = bank.weights[slot][1].data();
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = std::abs(b[i] - a[i]);
            if (d < 1e-4) ++lo;
            else if (d < 1.5e-2) ++mid;
            ++n;
        }
    }
    CHECK(stats[0].frac_lt_1e4 == double(lo) / double(n));
    CHECK(stats[0].frac_mid == double(mid) / double(n));
}

TEST_CASE("expert_variation needs two experts") {
    DenseMoeBank bank = dense_pair(5);
    bank.n_experts = 1;
    bank.weights[0].resize(1);
    bank.weights[1].resize(1);
    CHECK_THROWS_AS(expert_variation(bank, 0), ConfigError);
}

TEST_CASE("mmd threshold closed form and scaling") {
    // frozen from 2*sqrt(1/2500)*(1+sqrt(ln 20))
    CHECK(mmd_threshold(2500, 1.0, 0.05) == doctest::Approx(0.1092327353040914).epsilon(1e-14));
    CHECK_THROWS_AS(mmd_threshold(2500, 0.0, 0.05), ConfigError);

    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + std::size_t(rng.uniform_int(0, 10000));
        const double k_sup = 0.1 + rng.uniform() * 5.0;
        const double alpha = 0.001 + rng.uniform() * 0.9;
        const double want =
            2.0 * std::sqrt(k_sup / double(m)) * (1.0 + std::sqrt(std::log(1.0 / alpha)));
        CHECK(mpoe::test::rel_diff(mmd_threshold(m, k_sup, alpha), want) <= 1e-12);
        // quadrupling m halves the threshold
        CHECK(mpoe::test::rel_diff(mmd_threshold(4 * m, k_sup, alpha),
                                   0.5 * mmd_threshold(m, k_sup, alpha)) <= 1e-12);
    }
}

TEST_CASE("empirical mmd of a set against itself is zero") {
    Rng rng(7);
    Tensor x = Tensor::randn({20, 4}, rng);
    CHECK(empirical_mmd(x, x) <= 1e-12);
}

TEST_CASE("empirical mmd is symmetric and permutation invariant") {
    Rng rng(8);
    Tensor x = Tensor::randn({15, 3}, rng);
    Tensor y = Tensor::randn({12, 3}, rng);
    const double xy = empirical_mmd(x, y);
    const double yx = empirical_mmd(y, x);
    CHECK(mpoe::test::rel_diff(xy, yx) <= 1e-12);

    // shuffle rows of both sides
    Tensor xs = x, ys = y;
    std::vector<std::size_t> perm_x{14, 3, 7, 0, 1, 2, 4, 5, 6, 8, 9, 10, 11, 12, 13};
    for (std::size_t r = 0; r < 15; ++r) {
        std::copy_n(x.data().data() + perm_x[r] * 3, 3, xs.data().data() + r * 3);
    }
    const double shuffled = empirical_mmd(xs, y);
    CHECK(std::abs(shuffled - xy) <= 1e-12);
}

TEST_CASE("two tight clusters far beyond the bandwidth approach sqrt(2)") {
    Rng rng(9);
    Tensor x = Tensor::randn({30, 4}, rng, 0.01);
    Tensor y = Tensor::randn({30, 4}, rng, 0.01);
    for (std::size_t r = 0; r < 30; ++r) y.data()[r * 4] += 100.0;  // separation 100

    KernelConfig kernel;
    kernel.bandwidth = 1.0;  // fixed small bandwidth, separation >> bandwidth
    CHECK(empirical_mmd(x, y, kernel) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-3));
}

TEST_CASE("parallel mmd kernel sums match the serial reference") {
    Rng rng(10);
    Tensor x = Tensor::randn({40, 6}, rng);
    Tensor y = Tensor::randn({35, 6}, rng);
    KernelConfig kernel;
    kernel.bandwidth = 2.5;
    const double got = empirical_mmd(x, y, kernel);
    const double want_sq = reference::mmd_squared_rbf(x, y, 1.0 / (2.0 * 2.5));
    CHECK(mpoe::test::rel_diff(got * got, std::max(want_sq, 0.0)) <= 1e-10);
}

TEST_CASE("mmd rejects mismatched feature dims") {
    Tensor x = Tensor::zeros({4, 3});
    Tensor y = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(empirical_mmd(x, y), ShapeError);
}

TEST_CASE("redundancy report on a freshly initialized bank") {
    Rng rng(11);
    Tensor w1 = Tensor::randn({6, 8}, rng);
    Tensor w2 = Tensor::randn({8, 6}, rng);
    GateConfig gate;
    gate.n_experts = 3;
    gate.k = 2;
    gate.w_gate = Tensor::randn({6, 3}, rng);
    MpoeExpertBank bank = init_from_dense(
        w1, w2, plan_factorization(6, 8, 3), plan_factorization(8, 6, 3), 3, gate);

    Tensor probes = Tensor::randn({24, 6}, rng);
    RedundancyReport rep = redundancy_report(bank, probes);

    CHECK(rep.n_experts == 3);
    CHECK(rep.probes == 24);
    REQUIRE(rep.variation.size() == 2);
    for (const auto& v : rep.variation) {
        CHECK(v.mean == 0.0);
        CHECK(v.std_dev == 0.0);
        CHECK(v.frac_lt_1e4 == 1.0);
    }
    REQUIRE(rep.mmd_pairs.size() == 3);
    for (const auto& pair : rep.mmd_pairs) {
        CHECK(pair.empirical <= 1e-12);
        CHECK(pair.same_distribution);
        CHECK(pair.threshold == doctest::Approx(mmd_threshold(24, 1.0, 0.05)).epsilon(1e-14));
    }
    CHECK(rep.gamma == doctest::Approx(double(rep.params.shared) / double(rep.params.per_expert)));
    CHECK(rep.efficiency == doctest::Approx(efficiency_ratio(3, rep.gamma)).epsilon(1e-12));
    CHECK(!rep.threshold_note.empty());
}
