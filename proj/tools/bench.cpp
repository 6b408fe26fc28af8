// SPDX-License-Identifier: Apache-2.0
//
// Timing comparison of the OpenMP kernels against the serial reference
// implementations: matrix product, bond contraction, batched MoE forward,
// and the MMD kernel sums.

#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "mpoe/analysis.hpp"
#include "mpoe/moe_layer.hpp"
#include "mpoe/reference.hpp"
#include "mpoe/rng.hpp"

using namespace mpoe;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(1234);

    {
        const Tensor a = Tensor::randn({384, 384}, rng);
        const Tensor b = Tensor::randn({384, 384}, rng);
        const double serial = time_ms([&] { (void)reference::matmul(a, b); }, 5);
        const double parallel = time_ms([&] { (void)matmul(a, b); }, 5);
        report("matmul 384^3", serial, parallel);
    }

    {
        const Tensor a = Tensor::randn({8, 16, 3, 96}, rng);
        const Tensor b = Tensor::randn({96, 16, 3, 8}, rng);
        const double serial = time_ms([&] { (void)reference::contract(a, b, {3}, {0}); }, 5);
        const double parallel = time_ms([&] { (void)contract(a, b, {3}, {0}); }, 5);
        report("bond contraction", serial, parallel);
    }

    {
        Rng setup(77);
        const std::size_t d_model = 64, d_ff = 256, n = 8;
        Tensor w1 = Tensor::randn({d_model, d_ff}, setup, 0.1);
        Tensor w2 = Tensor::randn({d_ff, d_model}, setup, 0.1);
        GateConfig gate;
        gate.n_experts = n;
        gate.k = 2;
        gate.kind = GateKind::topk;
        gate.w_gate = Tensor::randn({d_model, n}, setup);
        const MpoeExpertBank bank = init_from_dense(
            w1, w2, plan_factorization(d_model, d_ff, 5), plan_factorization(d_ff, d_model, 5), n,
            gate);
        const DenseMoeBank dense = densify(bank);
        const Tensor x = Tensor::randn({512, d_model}, setup);

        const double serial = time_ms(
            [&] {
                Rng r(9);
                (void)reference::moe_forward(dense, x, r);
            },
            5);
        const double parallel = time_ms(
            [&] {
                Rng r(9);
                (void)forward(dense, x, r);
            },
            5);
        report("moe forward 512x64", serial, parallel);
    }

    {
        const Tensor x = Tensor::randn({600, 32}, rng);
        Tensor y = Tensor::randn({600, 32}, rng);
        for (std::size_t r = 0; r < y.extent(0); ++r) y.data()[r * 32] += 0.5;
        KernelConfig kernel;
        kernel.bandwidth = 2.0;
        const double gamma = 1.0 / (2.0 * *kernel.bandwidth);
        const double serial = time_ms([&] { (void)reference::mmd_squared_rbf(x, y, gamma); }, 3);
        const double parallel = time_ms([&] { (void)empirical_mmd(x, y, kernel); }, 3);
        report("mmd 600 samples", serial, parallel);
    }

    return 0;
}
