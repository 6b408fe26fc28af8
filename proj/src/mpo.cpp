// SPDX-License-Identifier: Apache-2.0
#include "mpoe/mpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mpoe {

namespace {

std::size_t product(const std::vector<std::size_t>& v) {
    std::size_t p = 1;
    for (std::size_t e : v) p *= e;
    return p;
}

std::vector<std::size_t> prime_factors_desc(std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t p = 2; p * p <= n; ++p) {
        while (n % p == 0) {
            out.push_back(p);
            n /= p;
        }
    }
    if (n > 1) out.push_back(n);
    std::sort(out.rbegin(), out.rend());
    return out;
}

// Positions ordered middle-out: central first, then alternating right/left.
std::vector<std::size_t> middle_out_order(std::size_t m) {
    std::vector<std::size_t> order;
    const std::size_t c = m / 2;
    order.push_back(c);
    for (std::size_t step = 1; order.size() < m; ++step) {
        if (c + step < m) order.push_back(c + step);
        if (step <= c) order.push_back(c - step);
    }
    return order;
}

std::vector<std::size_t> split_into_factors(std::size_t n, std::size_t m) {
    std::vector<std::size_t> factors(m, 1);
    const auto order = middle_out_order(m);
    const auto primes = prime_factors_desc(n);
    for (std::size_t t = 0; t < primes.size(); ++t) {
        factors[order[t % m]] *= primes[t];
    }
    return factors;
}

// Interleave [i_1..i_m, j_1..j_m] -> (i_1, j_1, i_2, j_2, ...).
std::vector<std::size_t> interleave_perm(std::size_t m) {
    std::vector<std::size_t> perm(2 * m);
    for (std::size_t k = 0; k < m; ++k) {
        perm[2 * k] = k;
        perm[2 * k + 1] = m + k;
    }
    return perm;
}

std::vector<std::size_t> deinterleave_perm(std::size_t m) {
    std::vector<std::size_t> perm(2 * m);
    for (std::size_t k = 0; k < m; ++k) {
        perm[k] = 2 * k;
        perm[m + k] = 2 * k + 1;
    }
    return perm;
}

}  // namespace

std::size_t FactorizationPlan::rows() const { return product(row_factors); }
std::size_t FactorizationPlan::cols() const { return product(col_factors); }

void FactorizationPlan::validate() const {
    const std::size_t m = row_factors.size();
    if (m == 0) throw ShapeError("plan: needs at least one local tensor");
    if (col_factors.size() != m) throw ShapeError("plan: row/col factor counts differ");
    for (std::size_t e : row_factors) {
        if (e == 0) throw ShapeError("plan: row factor must be >= 1");
    }
    for (std::size_t e : col_factors) {
        if (e == 0) throw ShapeError("plan: col factor must be >= 1");
    }
    if (bond_caps) {
        if (bond_caps->size() + 1 != m) throw ShapeError("plan: bond_caps must have m-1 entries");
        for (std::size_t c : *bond_caps) {
            if (c == 0) throw ShapeError("plan: bond cap must be >= 1");
        }
    }
}

std::size_t MpoFactors::rows() const {
    std::size_t r = 1;
    for (const Tensor& t : locals) r *= t.extent(1);
    return r;
}

std::size_t MpoFactors::cols() const {
    std::size_t c = 1;
    for (const Tensor& t : locals) c *= t.extent(2);
    return c;
}

std::size_t central_index_for(std::size_t m) { return m / 2; }

std::vector<std::size_t> bond_dimensions(const FactorizationPlan& plan) {
    plan.validate();
    const std::size_t m = plan.num_tensors();
    std::vector<std::size_t> out;
    out.reserve(m == 0 ? 0 : m - 1);
    std::size_t left = 1;
    std::size_t right = 1;
    for (std::size_t k = 0; k < m; ++k) right *= plan.row_factors[k] * plan.col_factors[k];
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const std::size_t f = plan.row_factors[k] * plan.col_factors[k];
        left *= f;
        right /= f;
        out.push_back(std::min(left, right));
    }
    return out;
}

FactorizationPlan plan_factorization(std::size_t rows, std::size_t cols, std::size_t m) {
    if (m == 0) throw ShapeError("plan_factorization: m must be >= 1");
    if (rows == 0 || cols == 0) throw ShapeError("plan_factorization: dimensions must be >= 1");
    FactorizationPlan plan;
    plan.row_factors = split_into_factors(rows, m);
    plan.col_factors = split_into_factors(cols, m);
    return plan;
}

MpoFactors decompose(const Tensor& w, const FactorizationPlan& plan) {
    plan.validate();
    if (w.order() != 2 || w.extent(0) != plan.rows() || w.extent(1) != plan.cols()) {
        throw ShapeError("decompose: matrix shape does not match plan products");
    }
    const std::size_t m = plan.num_tensors();

    MpoFactors out;
    out.central_index = central_index_for(m);
    out.bond_dims.assign(m + 1, 1);
    out.truncation_eps.assign(m == 0 ? 0 : m - 1, 0.0);

    if (m == 1) {
        out.locals.push_back(reshape(w, {1, plan.row_factors[0], plan.col_factors[0], 1}));
        return out;
    }

    Shape grouped;
    grouped.insert(grouped.end(), plan.row_factors.begin(), plan.row_factors.end());
    grouped.insert(grouped.end(), plan.col_factors.begin(), plan.col_factors.end());
    Tensor carried = transpose(reshape(w, grouped), interleave_perm(m));

    const auto max_bonds = bond_dimensions(plan);
    std::size_t d_prev = 1;
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const std::size_t f = plan.row_factors[k] * plan.col_factors[k];
        const std::size_t step_rows = d_prev * f;
        const std::size_t step_cols = carried.size() / step_rows;
        std::size_t cap = max_bonds[k];
        if (plan.bond_caps) cap = std::min(cap, (*plan.bond_caps)[k]);
        cap = std::min(cap, std::min(step_rows, step_cols));

        const SvdResult s = svd(reshape(carried, {step_rows, step_cols}), cap);
        const std::size_t rank = s.sigma.size();
        out.locals.push_back(
            reshape(s.u, {d_prev, plan.row_factors[k], plan.col_factors[k], rank}));
        out.truncation_eps[k] = std::sqrt(s.discarded_energy);
        out.bond_dims[k + 1] = rank;

        // carry sigma * V^T forward
        Tensor next = s.vt;
        for (std::size_t r = 0; r < rank; ++r) {
            double* row = next.data().data() + r * step_cols;
            for (std::size_t c = 0; c < step_cols; ++c) row[c] *= s.sigma[r];
        }
        carried = std::move(next);
        d_prev = rank;
    }
    out.locals.push_back(
        reshape(carried, {d_prev, plan.row_factors[m - 1], plan.col_factors[m - 1], 1}));
    return out;
}

Tensor reconstruct(const MpoFactors& f) {
    validate_factors(f);
    const std::size_t m = f.num_tensors();
    const std::size_t rows = f.rows();
    const std::size_t cols = f.cols();

    // Chain the locals left to right; the running matrix keeps the merged
    // (i_1,j_1,...,i_k,j_k) group as rows and the open bond as columns.
    Tensor acc = reshape(f.locals[0], {f.locals[0].extent(1) * f.locals[0].extent(2),
                                       f.locals[0].extent(3)});
    for (std::size_t k = 1; k < m; ++k) {
        const Tensor& loc = f.locals[k];
        const std::size_t d_prev = loc.extent(0);
        const std::size_t fk = loc.extent(1) * loc.extent(2);
        const std::size_t d_next = loc.extent(3);
        acc = reshape(matmul(acc, reshape(loc, {d_prev, fk * d_next})),
                      {acc.extent(0) * fk, d_next});
    }

    Shape grouped;
    for (const Tensor& loc : f.locals) grouped.push_back(loc.extent(1));
    for (const Tensor& loc : f.locals) grouped.push_back(loc.extent(2));
    Shape interleaved(2 * m);
    for (std::size_t k = 0; k < m; ++k) {
        interleaved[2 * k] = grouped[k];
        interleaved[2 * k + 1] = grouped[m + k];
    }
    const Tensor regrouped = transpose(reshape(acc, interleaved), deinterleave_perm(m));
    return reshape(regrouped, {rows, cols});
}

double truncation_bound(const std::vector<double>& eps) {
    double acc = 0.0;
    for (double e : eps) acc += e * e;
    return std::sqrt(acc);
}

MpoFactors normalize(const MpoFactors& f, NormalizeMode mode) {
    if (mode == NormalizeMode::none) return f;
    validate_factors(f);

    std::vector<double> norms;
    norms.reserve(f.locals.size());
    double log_sum = 0.0;
    for (const Tensor& loc : f.locals) {
        const double n = frobenius_norm(loc);
        if (n == 0.0) throw NumericError("normalize: zero factor tensor has no scale");
        norms.push_back(n);
        log_sum += std::log(n);
    }
    const double target = std::exp(log_sum / static_cast<double>(f.locals.size()));

    MpoFactors out = f;
    for (std::size_t k = 0; k < out.locals.size(); ++k) {
        const double scale = target / norms[k];
        for (double& v : out.locals[k].data()) v *= scale;
    }
    return out;
}

MpoParamCounts count_params(const MpoFactors& f) {
    MpoParamCounts counts;
    for (std::size_t k = 0; k < f.locals.size(); ++k) {
        if (k == f.central_index) {
            counts.central += f.locals[k].size();
        } else {
            counts.auxiliary += f.locals[k].size();
        }
    }
    counts.gamma = counts.auxiliary == 0
                       ? std::numeric_limits<double>::infinity()
                       : static_cast<double>(counts.central) / static_cast<double>(counts.auxiliary);
    return counts;
}

std::vector<std::size_t> bond_dims_of(const std::vector<Tensor>& locals) {
    std::vector<std::size_t> dims;
    dims.reserve(locals.size() + 1);
    dims.push_back(locals.empty() ? 1 : locals.front().extent(0));
    for (const Tensor& loc : locals) dims.push_back(loc.extent(3));
    return dims;
}

MpoParamCounts plan_param_counts(const FactorizationPlan& plan) {
    plan.validate();
    const std::size_t m = plan.num_tensors();
    const auto bonds = bond_dimensions(plan);
    const std::size_t central = central_index_for(m);
    MpoParamCounts counts;
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t d_in = k == 0 ? 1 : bonds[k - 1];
        const std::size_t d_out = k + 1 == m ? 1 : bonds[k];
        const std::size_t n = d_in * plan.row_factors[k] * plan.col_factors[k] * d_out;
        if (k == central) {
            counts.central += n;
        } else {
            counts.auxiliary += n;
        }
    }
    counts.gamma = counts.auxiliary == 0
                       ? std::numeric_limits<double>::infinity()
                       : static_cast<double>(counts.central) / static_cast<double>(counts.auxiliary);
    return counts;
}

std::vector<Tensor> chain_gradients(const std::vector<Tensor>& locals, const Tensor& grad_w,
                                    std::optional<std::size_t> skip_index) {
    const std::size_t m = locals.size();
    if (m == 0) throw ShapeError("chain_gradients: empty chain");

    std::size_t rows = 1, cols = 1;
    Shape grouped;
    for (const Tensor& loc : locals) {
        rows *= loc.extent(1);
        grouped.push_back(loc.extent(1));
    }
    for (const Tensor& loc : locals) {
        cols *= loc.extent(2);
        grouped.push_back(loc.extent(2));
    }
    if (grad_w.order() != 2 || grad_w.extent(0) != rows || grad_w.extent(1) != cols) {
        throw ShapeError("chain_gradients: grad shape does not match the chain");
    }

    // Interleave grad_w's indices the same way decompose orders them.
    const Tensor g = transpose(reshape(grad_w, grouped), interleave_perm(m));

    // lefts[t]: product of locals[0..t-1], (prod_{s<t} f_s) x bond_t.
    // rights[t]: product of locals[t+1..m-1], bond_{t+1} x (prod_{s>t} f_s).
    std::vector<Tensor> lefts(m), rights(m);
    lefts[0] = Tensor::from_data({1, 1}, {1.0});
    for (std::size_t t = 0; t + 1 < m; ++t) {
        const Tensor& loc = locals[t];
        const std::size_t f = loc.extent(1) * loc.extent(2);
        const Tensor prod =
            matmul(lefts[t], reshape(loc, {loc.extent(0), f * loc.extent(3)}));
        lefts[t + 1] = reshape(prod, {lefts[t].extent(0) * f, loc.extent(3)});
    }
    rights[m - 1] = Tensor::from_data({1, 1}, {1.0});
    for (std::size_t t = m - 1; t > 0; --t) {
        const Tensor& loc = locals[t];
        const std::size_t f = loc.extent(1) * loc.extent(2);
        const Tensor prod =
            matmul(reshape(loc, {loc.extent(0) * f, loc.extent(3)}), rights[t]);
        rights[t - 1] = reshape(prod, {loc.extent(0), f * rights[t].extent(1)});
    }

    std::vector<Tensor> grads(m);
    for (std::size_t t = 0; t < m; ++t) {
        if (skip_index && *skip_index == t) continue;
        const Tensor& loc = locals[t];
        const std::size_t f = loc.extent(1) * loc.extent(2);
        const std::size_t left_rows = lefts[t].extent(0);
        const std::size_t right_cols = rights[t].extent(1);
        // dT[t] = lefts^T * G * rights^T with G viewed [left_rows, f, right_cols]
        const Tensor lt = transpose(lefts[t], {1, 0});
        const Tensor mid = matmul(lt, reshape(g, {left_rows, f * right_cols}));
        const Tensor rt = transpose(rights[t], {1, 0});
        const Tensor full = matmul(reshape(mid, {loc.extent(0) * f, right_cols}), rt);
        grads[t] = reshape(full, loc.shape());
    }
    return grads;
}

void validate_factors(const MpoFactors& f) {
    const std::size_t m = f.num_tensors();
    if (m == 0) throw ShapeError("factors: empty chain");
    for (const Tensor& loc : f.locals) {
        if (loc.order() != 4) throw ShapeError("factors: locals must be 4-order");
    }
    if (f.locals.front().extent(0) != 1 || f.locals.back().extent(3) != 1) {
        throw ShapeError("factors: outer bonds must be 1");
    }
    for (std::size_t k = 0; k + 1 < m; ++k) {
        if (f.locals[k].extent(3) != f.locals[k + 1].extent(0)) {
            throw ShapeError("factors: bond mismatch between locals " + std::to_string(k) +
                             " and " + std::to_string(k + 1));
        }
    }
    if (f.central_index >= m) throw ShapeError("factors: central index out of range");
}

}  // namespace mpoe
