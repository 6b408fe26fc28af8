// SPDX-License-Identifier: Apache-2.0
#include "mpoe/reference.hpp"

#include <cmath>

namespace mpoe::reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.order() != 2 || b.order() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("reference::matmul: shape mismatch");
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    return c;
}

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size());
    std::size_t acc = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        s[i] = acc;
        acc *= shape[i];
    }
    return s;
}

bool advance(std::vector<std::size_t>& idx, const std::vector<std::size_t>& extents) {
    for (std::size_t axis = idx.size(); axis-- > 0;) {
        if (++idx[axis] < extents[axis]) return true;
        idx[axis] = 0;
    }
    return false;
}

}  // namespace

Tensor contract(const Tensor& a, const Tensor& b,
                const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b) {
    const auto sa = strides_of(a.shape());
    const auto sb = strides_of(b.shape());

    std::vector<bool> used_a(a.order(), false), used_b(b.order(), false);
    std::vector<std::size_t> inner_extents;
    for (std::size_t i = 0; i < axes_a.size(); ++i) {
        if (a.extent(axes_a[i]) != b.extent(axes_b[i])) {
            throw ShapeError("reference::contract: paired extents differ");
        }
        used_a[axes_a[i]] = true;
        used_b[axes_b[i]] = true;
        inner_extents.push_back(a.extent(axes_a[i]));
    }

    std::vector<std::size_t> free_a, free_b;
    Shape out_shape;
    std::vector<std::size_t> free_extents;
    for (std::size_t i = 0; i < a.order(); ++i) {
        if (!used_a[i]) { free_a.push_back(i); out_shape.push_back(a.extent(i)); free_extents.push_back(a.extent(i)); }
    }
    for (std::size_t i = 0; i < b.order(); ++i) {
        if (!used_b[i]) { free_b.push_back(i); out_shape.push_back(b.extent(i)); free_extents.push_back(b.extent(i)); }
    }

    Tensor out = Tensor::zeros(out_shape);
    std::vector<std::size_t> fidx(free_extents.size(), 0);
    std::size_t out_flat = 0;
    do {
        std::size_t base_a = 0, base_b = 0;
        for (std::size_t i = 0; i < free_a.size(); ++i) base_a += fidx[i] * sa[free_a[i]];
        for (std::size_t i = 0; i < free_b.size(); ++i) {
            base_b += fidx[free_a.size() + i] * sb[free_b[i]];
        }

        double acc = 0.0;
        std::vector<std::size_t> cidx(inner_extents.size(), 0);
        if (inner_extents.empty()) {
            acc = a[base_a] * b[base_b];
        } else {
            do {
                std::size_t off_a = base_a, off_b = base_b;
                for (std::size_t i = 0; i < cidx.size(); ++i) {
                    off_a += cidx[i] * sa[axes_a[i]];
                    off_b += cidx[i] * sb[axes_b[i]];
                }
                acc += a[off_a] * b[off_b];
            } while (advance(cidx, inner_extents));
        }
        out[out_flat++] = acc;
    } while (advance(fidx, free_extents));
    return out;
}

double mmd_squared_rbf(const Tensor& x, const Tensor& y, double gamma) {
    const std::size_t m = x.extent(0), n = y.extent(0), d = x.extent(1);
    auto k = [&](const double* p, const double* q) {
        double dist = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = p[c] - q[c];
            dist += diff * diff;
        }
        return std::exp(-gamma * dist);
    };
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            kxx += k(x.data().data() + i * d, x.data().data() + j * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            kyy += k(y.data().data() + i * d, y.data().data() + j * d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            kxy += k(x.data().data() + i * d, y.data().data() + j * d);
    return kxx / double(m * m) + kyy / double(n * n) - 2.0 * kxy / double(m * n);
}

}  // namespace mpoe::reference
