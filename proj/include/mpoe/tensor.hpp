// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <vector>

#include "mpoe/errors.hpp"
#include "mpoe/rng.hpp"

namespace mpoe {

using Shape = std::vector<std::size_t>;

/// Dense multi-dimensional array of f64, row-major (last index fastest).
/// A zero-order tensor (empty shape) is a scalar with one element.
///
/// All free functions below are pure: they never mutate their inputs, so
/// Tensor values can be shared across threads. Mutable access to the flat
/// buffer exists only for parameter owners (optimizer updates).
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}

    static Tensor zeros(Shape shape);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);
    /// I.i.d. N(0, scale^2) entries drawn in row-major order.
    static Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0);

    const Shape& shape() const { return shape_; }
    std::size_t order() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double operator[](std::size_t flat) const { return data_[flat]; }
    double& operator[](std::size_t flat) { return data_[flat]; }

    /// Row-major multi-index access.
    double at(std::initializer_list<std::size_t> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Result of a (possibly truncated) singular value decomposition.
/// u is p x r with orthonormal columns, vt is r x q with orthonormal rows,
/// sigma is non-increasing. discarded_energy is the sum of squared singular
/// values dropped by rank truncation (0 for a full decomposition).
struct SvdResult {
    Tensor u;
    std::vector<double> sigma;
    Tensor vt;
    double discarded_energy = 0.0;
};

std::size_t shape_product(const Shape& shape);

/// Same flat data, new shape. Element count must match.
Tensor reshape(const Tensor& t, Shape new_shape);

/// View the first `split` axes as rows and the rest as columns
/// (row-major data unchanged). Requires 0 < split < order.
Tensor matricize(const Tensor& t, std::size_t split);

/// Permute axes: output axis p is input axis perm[p].
Tensor transpose(const Tensor& t, const std::vector<std::size_t>& perm);

/// Pairwise tensor contraction over the given axes. Result extents are the
/// free extents of `a` (in order) followed by the free extents of `b`.
/// Paired extents must match; paired axes are summed in row-major order of
/// (axes_a for a, axes_b for b), so results match the naive loop bit-for-bit
/// on small inputs.
Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b);

/// 2-order fast path: a (M x K) times b (K x N). OpenMP over rows of the
/// result; each row is accumulated serially so output is bit-reproducible
/// for any thread count.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Thin SVD of a 2-order tensor, optionally keeping only the top max_rank
/// triplets. Throws NumericError on non-finite input.
SvdResult svd(const Tensor& m, std::optional<std::size_t> max_rank = std::nullopt);

/// Number of singular values above 1e-12 * sigma_max; deterministic rank
/// for degenerate inputs.
std::size_t numerical_rank(const std::vector<double>& sigma);

double frobenius_norm(const Tensor& t);

/// Elementwise helpers used by the layer and optimizer code.
void add_scaled(Tensor& dst, const Tensor& src, double scale);
Tensor elementwise_sub(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mpoe
