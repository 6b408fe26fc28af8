// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mpoe/tensor.hpp"

namespace mpoe {

/// Factor lists {i_k}, {j_k} and optional bond caps defining one tensor-train
/// factorization of an (prod i_k) x (prod j_k) matrix.
struct FactorizationPlan {
    std::vector<std::size_t> row_factors;
    std::vector<std::size_t> col_factors;
    std::optional<std::vector<std::size_t>> bond_caps;  // length m-1 when present

    std::size_t num_tensors() const { return row_factors.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    void validate() const;
};

/// Ordered chain of m 4-order local tensors; the k-th has shape
/// [d_{k-1}, i_k, j_k, d_k] with d_0 = d_m = 1. The designated central tensor
/// sits at central_index (the largest one for balanced untruncated plans);
/// the rest are auxiliary. truncation_eps[k] is the Frobenius norm of what
/// the k-th chain SVD discarded.
struct MpoFactors {
    std::vector<Tensor> locals;
    std::vector<std::size_t> bond_dims;  // length m+1, bond_dims[0] == bond_dims[m] == 1
    std::size_t central_index = 0;       // 0-based
    std::vector<double> truncation_eps;  // length m-1

    std::size_t num_tensors() const { return locals.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
};

/// 0-based position of the central tensor for a chain of m locals:
/// the middle for odd m, right-of-middle for even m.
std::size_t central_index_for(std::size_t m);

/// Maximal (no-truncation) bond dimensions for a plan:
/// d_k = min(prod_{l<=k} i_l*j_l, prod_{l>k} i_l*j_l), k = 1..m-1.
std::vector<std::size_t> bond_dimensions(const FactorizationPlan& plan);

/// Deterministic automatic plan: each of I and J is split into m factors by
/// assigning its prime factors (largest first) round-robin over positions
/// ordered middle-out, so central factors come out largest. Positions with no
/// prime left stay 1.
FactorizationPlan plan_factorization(std::size_t rows, std::size_t cols, std::size_t m);

/// Chain SVD decomposition of a 2-order tensor. Step k reshapes the carried
/// matrix to [d_{k-1}*i_k*j_k, -1] (after an initial interleave of the row
/// and column index groups to (i_1,j_1,i_2,j_2,...)), truncates its SVD to
/// min(maximal bond, user cap), folds U into the k-th local tensor and
/// carries sigma*V^T forward. The last carried matrix becomes the final
/// local tensor.
MpoFactors decompose(const Tensor& w, const FactorizationPlan& plan);

/// Contract the chain back into an I x J matrix. Exact inverse of decompose
/// when no bond was truncated.
Tensor reconstruct(const MpoFactors& f);

/// Upper bound sqrt(sum eps_k^2) on the reconstruction error of a truncated
/// chain.
double truncation_bound(const std::vector<double>& eps);

enum class NormalizeMode { none, balance };

/// balance: rescale every local tensor to the common (geometric-mean)
/// Frobenius norm; the reconstructed product is unchanged. none: identity.
MpoFactors normalize(const MpoFactors& f, NormalizeMode mode);

struct MpoParamCounts {
    std::size_t central = 0;
    std::size_t auxiliary = 0;
    double gamma = 0.0;  // central / auxiliary; +inf when auxiliary == 0
};

MpoParamCounts count_params(const MpoFactors& f);

/// Bond dimensions read back from the locals' shapes (length m+1).
std::vector<std::size_t> bond_dims_of(const std::vector<Tensor>& locals);

/// Untruncated chain parameter counts derived from a plan alone.
MpoParamCounts plan_param_counts(const FactorizationPlan& plan);

/// Gradient of reconstruct with respect to each local tensor. The
/// reconstruction is multilinear in the locals, so d(loss)/d(local k) is the
/// contraction of grad_w (same shape as reconstruct's output) with every
/// other local; this is exact, no autodiff involved. When skip_index is set
/// that entry's contraction is not computed (its slot holds a scalar zero);
/// callers use this to drop the central-tensor work on fully masked steps.
std::vector<Tensor> chain_gradients(const std::vector<Tensor>& locals, const Tensor& grad_w,
                                    std::optional<std::size_t> skip_index = std::nullopt);

/// Structural validation: 4-order locals, matching adjacent bonds,
/// unit outer bonds. Throws ShapeError on violation.
void validate_factors(const MpoFactors& f);

}  // namespace mpoe
