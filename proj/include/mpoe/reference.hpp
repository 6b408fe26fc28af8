// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mpoe/tensor.hpp"

namespace mpoe::reference {

// Serial reference kernels: straight loops, no OpenMP, no blocking.
// These are kept as independent oracles for the parallel kernels and as the
// baseline side of the benchmark. They intentionally mirror the definitions,
// not the optimized code paths.

/// Triple-loop matrix product, ijk order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Contraction by direct enumeration of every (free_a, free_b, contracted)
/// index tuple; the contracted indices advance in row-major order of the
/// axes_a / axes_b lists.
Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b);

/// Biased-estimator squared MMD via the full kernel double loops.
/// k(x,y) = exp(-gamma * |x-y|^2) over row vectors of x and y.
double mmd_squared_rbf(const Tensor& x, const Tensor& y, double gamma);

}  // namespace mpoe::reference
