// SPDX-License-Identifier: Apache-2.0
#include "mpoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace mpoe {

namespace {

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void check_finite(const Tensor& t, const char* where) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(where) + ": non-finite entry");
        }
    }
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size());
    std::size_t acc = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        strides[i] = acc;
        acc *= shape[i];
    }
    return strides;
}

}  // namespace

std::size_t shape_product(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor Tensor::zeros(Shape shape) {
    return from_data(std::move(shape), {});
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extent must be >= 1");
    }
    const std::size_t n = shape_product(shape);
    if (data.empty()) {
        data.assign(n, 0.0);
    } else if (data.size() != n) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data_[0] = value;
    return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double scale) {
    Tensor t = zeros(shape);
    for (double& v : t.data_) v = scale * rng.normal();
    return t;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index order mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= shape_[axis]) throw ShapeError("index out of range");
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return data_[flat];
}

Tensor reshape(const Tensor& t, Shape new_shape) {
    for (std::size_t e : new_shape) {
        if (e == 0) throw ShapeError("tensor extent must be >= 1");
    }
    if (shape_product(new_shape) != t.size()) {
        throw ShapeError("reshape: element count mismatch, " +
                         shape_to_string(t.shape()) + " -> " + shape_to_string(new_shape));
    }
    return Tensor::from_data(std::move(new_shape), t.data());
}

Tensor matricize(const Tensor& t, std::size_t split) {
    if (split == 0 || split >= t.order()) {
        throw ShapeError("matricize: split must satisfy 0 < split < order");
    }
    std::size_t rows = 1, cols = 1;
    for (std::size_t i = 0; i < split; ++i) rows *= t.extent(i);
    for (std::size_t i = split; i < t.order(); ++i) cols *= t.extent(i);
    return reshape(t, {rows, cols});
}

Tensor transpose(const Tensor& t, const std::vector<std::size_t>& perm) {
    const std::size_t r = t.order();
    if (perm.size() != r) throw ShapeError("transpose: permutation length mismatch");
    std::vector<bool> seen(r, false);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ShapeError("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = t.extent(perm[i]);
    Tensor out = Tensor::zeros(out_shape);
    if (r == 0) {
        out[0] = t[0];
        return out;
    }

    // Walk the input in row-major order; scatter each element to its slot in
    // the output. out_stride_of_in_axis[q] is the output stride of whichever
    // output axis reads input axis q.
    const auto out_strides = row_major_strides(out_shape);
    std::vector<std::size_t> out_stride_of_in_axis(r);
    for (std::size_t p = 0; p < r; ++p) out_stride_of_in_axis[perm[p]] = out_strides[p];

    std::vector<std::size_t> idx(r, 0);
    std::size_t out_flat = 0;
    const std::size_t n = t.size();
    for (std::size_t in_flat = 0; in_flat < n; ++in_flat) {
        out.data()[out_flat] = t[in_flat];
        // odometer increment over the input index
        for (std::size_t axis = r; axis-- > 0;) {
            idx[axis]++;
            out_flat += out_stride_of_in_axis[axis];
            if (idx[axis] < t.extent(axis)) break;
            idx[axis] = 0;
            out_flat -= out_stride_of_in_axis[axis] * t.extent(axis);
        }
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.order() != 2 || b.order() != 2) throw ShapeError("matmul: both operands must be 2-order");
    const std::size_t m = a.extent(0), k = a.extent(1);
    const std::size_t k2 = b.extent(0), n = b.extent(1);
    if (k != k2) throw ShapeError("matmul: inner extents differ");
    Tensor c = Tensor::zeros({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.data().data();

    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
    for (long i = 0; i < rows; ++i) {
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b) {
    if (axes_a.size() != axes_b.size()) throw ShapeError("contract: axis list length mismatch");
    const std::size_t ra = a.order(), rb = b.order();
    std::vector<bool> used_a(ra, false), used_b(rb, false);
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axes_a.size(); ++i) {
        const std::size_t ax = axes_a[i], bx = axes_b[i];
        if (ax >= ra || bx >= rb) throw ShapeError("contract: axis out of range");
        if (used_a[ax] || used_b[bx]) throw ShapeError("contract: repeated axis");
        if (a.extent(ax) != b.extent(bx)) {
            throw ShapeError("contract: paired extents differ on axes " +
                             std::to_string(ax) + "/" + std::to_string(bx));
        }
        used_a[ax] = used_b[bx] = true;
        inner *= a.extent(ax);
    }

    std::vector<std::size_t> free_a, free_b;
    Shape out_shape;
    for (std::size_t i = 0; i < ra; ++i) {
        if (!used_a[i]) { free_a.push_back(i); out_shape.push_back(a.extent(i)); }
    }
    for (std::size_t i = 0; i < rb; ++i) {
        if (!used_b[i]) { free_b.push_back(i); out_shape.push_back(b.extent(i)); }
    }

    // a -> (free..., contracted...) and b -> (contracted..., free...), then
    // one matrix product realizes the sum over paired indices.
    std::vector<std::size_t> perm_a = free_a;
    perm_a.insert(perm_a.end(), axes_a.begin(), axes_a.end());
    std::vector<std::size_t> perm_b = axes_b;
    perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());

    const Tensor am = reshape(transpose(a, perm_a), {a.size() / inner, inner});
    const Tensor bm = reshape(transpose(b, perm_b), {inner, b.size() / inner});
    return reshape(matmul(am, bm), std::move(out_shape));
}

SvdResult svd(const Tensor& m, std::optional<std::size_t> max_rank) {
    if (m.order() != 2) throw ShapeError("svd: input must be 2-order");
    check_finite(m, "svd");
    const std::size_t p = m.extent(0), q = m.extent(1);

    using RowMajorMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    RowMajorMap map(m.data().data(), static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
    Eigen::MatrixXd a = map;

    const std::size_t full = std::min(p, q);
    Eigen::MatrixXd u_full, v_full;
    Eigen::VectorXd s_full;
    if (full > 16) {
        Eigen::BDCSVD<Eigen::MatrixXd> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
        u_full = dec.matrixU();
        v_full = dec.matrixV();
        s_full = dec.singularValues();
    } else {
        Eigen::JacobiSVD<Eigen::MatrixXd> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
        u_full = dec.matrixU();
        v_full = dec.matrixV();
        s_full = dec.singularValues();
    }

    const std::size_t keep = std::min(full, max_rank.value_or(full));
    SvdResult out;
    out.sigma.assign(s_full.data(), s_full.data() + keep);
    out.discarded_energy = 0.0;
    for (std::size_t i = keep; i < full; ++i) {
        out.discarded_energy += s_full[static_cast<Eigen::Index>(i)] *
                                s_full[static_cast<Eigen::Index>(i)];
    }

    out.u = Tensor::zeros({p, keep});
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < keep; ++j) {
            out.u.data()[i * keep + j] =
                u_full(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    out.vt = Tensor::zeros({keep, q});
    for (std::size_t i = 0; i < keep; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            out.vt.data()[i * q + j] =
                v_full(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        }
    }
    return out;
}

std::size_t numerical_rank(const std::vector<double>& sigma) {
    if (sigma.empty()) return 0;
    const double cutoff = 1e-12 * sigma.front();
    std::size_t r = 0;
    for (double s : sigma) {
        if (s > cutoff && s > 0.0) ++r;
    }
    return r;
}

double frobenius_norm(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v * v;
    return std::sqrt(acc);
}

void add_scaled(Tensor& dst, const Tensor& src, double scale) {
    if (!dst.same_shape(src)) throw ShapeError("add_scaled: shape mismatch");
    double* d = dst.data().data();
    const double* s = src.data().data();
    const std::size_t n = dst.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += scale * s[i];
}

Tensor elementwise_sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("elementwise_sub: shape mismatch");
    Tensor out = a;
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mpoe
