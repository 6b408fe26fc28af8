// SPDX-License-Identifier: Apache-2.0
#include "mpoe/moe_layer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mpoe {

namespace {

std::vector<double> copy_row(const Tensor& x, std::size_t row) {
    const std::size_t d = x.extent(1);
    const double* p = x.data().data() + row * d;
    return std::vector<double>(p, p + d);
}

double combine_weight(const GateConfig& gate, const RowRoute& route, std::size_t expert) {
    if (gate.kind == GateKind::switch_top1) {
        return route.selected[0] == expert ? route.gate_probs[expert] : 0.0;
    }
    return route.gate_probs[expert];
}

RowRoute route_row(const GateConfig& gate, const std::vector<double>& xrow, Rng& rng) {
    RowRoute route;
    if (gate.kind == GateKind::switch_top1) {
        // keep the full softmax; backward needs every probability
        route.gate_probs = softmax(gate_logits(xrow, gate.w_gate));
        std::size_t best = 0;
        for (std::size_t i = 1; i < route.gate_probs.size(); ++i) {
            if (route.gate_probs[i] > route.gate_probs[best]) best = i;
        }
        route.selected = {best};
    } else {
        GateOutput out = noisy_topk_gate(xrow, gate, rng, &route.noise_draws);
        route.gate_probs = std::move(out.weights);
        route.selected = std::move(out.selected);
    }
    return route;
}

void add_bias_rows(Tensor& m, const Tensor& bias) {
    const std::size_t rows = m.extent(0), cols = m.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = m.data().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) p[c] += bias[c];
    }
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t d = x.extent(1);
    Tensor out = Tensor::zeros({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.data().data() + rows[i] * d, d, out.data().data() + i * d);
    }
    return out;
}

struct ExpertView {
    const Tensor* w1;
    const Tensor* w2;
    const Tensor* b1;
    const Tensor* b2;
};

ForwardResult forward_core(const std::vector<ExpertView>& experts, const GateConfig& gate,
                           const Tensor& x, Rng& rng, std::uint64_t bank_version) {
    if (x.order() != 2) throw ShapeError("forward: input must be batch x d_model");
    const std::size_t batch = x.extent(0);
    const std::size_t d_model = x.extent(1);
    if (d_model != gate.d_model()) throw ShapeError("forward: input width != gate d_model");
    const std::size_t n = experts.size();

    ForwardResult res;
    res.trace.bank_version = bank_version;
    res.trace.rows.reserve(batch);
    // gate draws happen row by row so a seed fixes the whole routing
    for (std::size_t r = 0; r < batch; ++r) {
        res.trace.rows.push_back(route_row(gate, copy_row(x, r), rng));
    }

    res.y = Tensor::zeros({batch, d_model});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < batch; ++r) {
            if (combine_weight(gate, res.trace.rows[r], i) != 0.0) rows.push_back(r);
        }
        if (rows.empty()) continue;

        Tensor h = matmul(gather_rows(x, rows), *experts[i].w1);
        add_bias_rows(h, *experts[i].b1);
        for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
        Tensor out = matmul(h, *experts[i].w2);
        add_bias_rows(out, *experts[i].b2);

        for (std::size_t idx = 0; idx < rows.size(); ++idx) {
            const std::size_t r = rows[idx];
            const double w = combine_weight(gate, res.trace.rows[r], i);
            double* dst = res.y.data().data() + r * d_model;
            const double* src = out.data().data() + idx * d_model;
            for (std::size_t c = 0; c < d_model; ++c) dst[c] += w * src[c];
        }
    }
    return res;
}

}  // namespace

MpoeExpertBank init_from_dense(const Tensor& w1, const Tensor& w2,
                               const FactorizationPlan& plan1, const FactorizationPlan& plan2,
                               std::size_t n_experts, GateConfig gate) {
    if (n_experts == 0) throw ConfigError("init_from_dense: need at least one expert");
    if (w1.order() != 2 || w2.order() != 2) throw ShapeError("init_from_dense: weights must be 2-order");
    if (w1.extent(1) != w2.extent(0) || w1.extent(0) != w2.extent(1)) {
        throw ShapeError("init_from_dense: w1 must be d_model x d_ff and w2 d_ff x d_model");
    }

    MpoeExpertBank bank;
    bank.n_experts = n_experts;
    bank.d_model = w1.extent(0);
    bank.d_ff = w1.extent(1);
    bank.plans = {plan1, plan2};
    bank.plans[kSlotW1].bond_caps.reset();  // init decomposition is never truncated
    bank.plans[kSlotW2].bond_caps.reset();
    bank.gate = std::move(gate);
    bank.gate.validate();
    if (bank.gate.n_experts != n_experts) throw ConfigError("init_from_dense: gate expert count mismatch");
    if (bank.gate.d_model() != bank.d_model) throw ConfigError("init_from_dense: gate d_model mismatch");

    const std::array<const Tensor*, kNumSlots> dense = {&w1, &w2};
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        MpoFactors f = decompose(*dense[slot], bank.plans[slot]);
        bank.central_index[slot] = f.central_index;
        bank.shared_central[slot] = f.locals[f.central_index];
        std::vector<Tensor> aux_chain;
        for (std::size_t k = 0; k < f.num_tensors(); ++k) {
            if (k != f.central_index) aux_chain.push_back(f.locals[k]);
        }
        bank.aux[slot].assign(n_experts, aux_chain);
        const std::size_t bias_len = slot == kSlotW1 ? bank.d_ff : bank.d_model;
        bank.biases[slot].assign(n_experts, Tensor::zeros({bias_len}));
    }
    return bank;
}

MpoFactors assemble_factors(const MpoeExpertBank& bank, std::size_t slot, std::size_t expert) {
    if (slot >= kNumSlots) throw ShapeError("assemble_factors: bad slot");
    if (expert >= bank.n_experts) throw ShapeError("assemble_factors: expert index out of range");
    MpoFactors f;
    f.central_index = bank.central_index[slot];
    const auto& aux_chain = bank.aux[slot][expert];
    f.locals.reserve(aux_chain.size() + 1);
    for (std::size_t k = 0, a = 0; k < aux_chain.size() + 1; ++k) {
        if (k == f.central_index) {
            f.locals.push_back(bank.shared_central[slot]);
        } else {
            f.locals.push_back(aux_chain[a++]);
        }
    }
    f.bond_dims = bond_dims_of(f.locals);
    f.truncation_eps.assign(f.locals.size() - 1, 0.0);
    validate_factors(f);
    return f;
}

Tensor expert_weight(const MpoeExpertBank& bank, std::size_t slot, std::size_t expert) {
    return reconstruct(assemble_factors(bank, slot, expert));
}

DenseMoeBank densify(const MpoeExpertBank& bank) {
    DenseMoeBank dense;
    dense.n_experts = bank.n_experts;
    dense.d_model = bank.d_model;
    dense.d_ff = bank.d_ff;
    dense.gate = bank.gate;
    dense.version = bank.version;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            dense.weights[slot].push_back(expert_weight(bank, slot, i));
            dense.biases[slot].push_back(bank.biases[slot][i]);
        }
    }
    return dense;
}

Tensor expert_forward(const MpoeExpertBank& bank, std::size_t expert, const Tensor& x) {
    Tensor h = matmul(x, expert_weight(bank, kSlotW1, expert));
    add_bias_rows(h, bank.biases[kSlotW1][expert]);
    for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
    Tensor out = matmul(h, expert_weight(bank, kSlotW2, expert));
    add_bias_rows(out, bank.biases[kSlotW2][expert]);
    return out;
}

ForwardResult forward(const MpoeExpertBank& bank, const Tensor& x, Rng& rng) {
    std::vector<Tensor> w1(bank.n_experts), w2(bank.n_experts);
    for (std::size_t i = 0; i < bank.n_experts; ++i) {
        w1[i] = expert_weight(bank, kSlotW1, i);
        w2[i] = expert_weight(bank, kSlotW2, i);
    }
    std::vector<ExpertView> views(bank.n_experts);
    for (std::size_t i = 0; i < bank.n_experts; ++i) {
        views[i] = {&w1[i], &w2[i], &bank.biases[kSlotW1][i], &bank.biases[kSlotW2][i]};
    }
    return forward_core(views, bank.gate, x, rng, bank.version);
}

ForwardResult forward(const DenseMoeBank& bank, const Tensor& x, Rng& rng) {
    std::vector<ExpertView> views(bank.n_experts);
    for (std::size_t i = 0; i < bank.n_experts; ++i) {
        views[i] = {&bank.weights[kSlotW1][i], &bank.weights[kSlotW2][i],
                    &bank.biases[kSlotW1][i], &bank.biases[kSlotW2][i]};
    }
    return forward_core(views, bank.gate, x, rng, bank.version);
}

namespace {

struct ExpertBackwardOut {
    Tensor dw1, dw2, db1, db2, dx_part;
    std::vector<double> gate_dots;  // dot(grad_y_row, expert_output_row)
};

// FFN backprop for one expert over its routed rows. Shared by the MPOE and
// dense reverse passes.
ExpertBackwardOut expert_backward_core(const ExpertView& view, const GateConfig& gate,
                                       const Tensor& x, const Tensor& grad_y,
                                       const RoutingTrace& trace,
                                       const std::vector<std::size_t>& rows,
                                       std::size_t expert) {
    const std::size_t d_model = x.extent(1);
    const std::size_t d_ff = view.w1->extent(1);
    ExpertBackwardOut out;

    const Tensor xg = gather_rows(x, rows);
    Tensor hpre = matmul(xg, *view.w1);
    add_bias_rows(hpre, *view.b1);
    Tensor h = hpre;
    for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
    Tensor y = matmul(h, *view.w2);
    add_bias_rows(y, *view.b2);

    Tensor dy = Tensor::zeros({rows.size(), d_model});
    out.gate_dots.resize(rows.size());
    for (std::size_t idx = 0; idx < rows.size(); ++idx) {
        const std::size_t r = rows[idx];
        const double w = combine_weight(gate, trace.rows[r], expert);
        const double* gy = grad_y.data().data() + r * d_model;
        const double* yrow = y.data().data() + idx * d_model;
        double* dyrow = dy.data().data() + idx * d_model;
        double dot = 0.0;
        for (std::size_t c = 0; c < d_model; ++c) {
            dyrow[c] = w * gy[c];
            dot += gy[c] * yrow[c];
        }
        out.gate_dots[idx] = dot;
    }

    out.db2 = Tensor::zeros({d_model});
    for (std::size_t idx = 0; idx < rows.size(); ++idx) {
        for (std::size_t c = 0; c < d_model; ++c) out.db2[c] += dy[idx * d_model + c];
    }
    out.dw2 = contract(h, dy, {0}, {0});
    Tensor dhpre = contract(dy, *view.w2, {1}, {1});
    for (std::size_t e = 0; e < dhpre.size(); ++e) {
        if (hpre[e] <= 0.0) dhpre[e] = 0.0;
    }
    out.db1 = Tensor::zeros({d_ff});
    for (std::size_t idx = 0; idx < rows.size(); ++idx) {
        for (std::size_t c = 0; c < d_ff; ++c) out.db1[c] += dhpre[idx * d_ff + c];
    }
    out.dw1 = contract(xg, dhpre, {0}, {0});
    out.dx_part = contract(dhpre, *view.w1, {1}, {1});
    return out;
}

// Gradient through the gate: softmax jacobian over each row's support, then
// into the gate weights and the input (including the softplus noise path).
void gate_backward(const GateConfig& gate, const Tensor& x, const RoutingTrace& trace,
                   const std::vector<std::vector<std::size_t>>& rows_of,
                   const std::vector<ExpertBackwardOut>& parts, Tensor& gate_w_grad,
                   Tensor& x_grad) {
    const std::size_t batch = x.extent(0);
    const std::size_t d_model = x.extent(1);
    const std::size_t n = gate.n_experts;

    std::vector<std::vector<std::size_t>> pos_of(n);  // row -> index into rows_of[i]
    for (std::size_t i = 0; i < n; ++i) {
        pos_of[i].assign(batch, 0);
        for (std::size_t idx = 0; idx < rows_of[i].size(); ++idx) pos_of[i][rows_of[i][idx]] = idx;
    }
    auto dot_of = [&](std::size_t expert, std::size_t row) {
        return parts[expert].gate_dots[pos_of[expert][row]];
    };

    for (std::size_t r = 0; r < batch; ++r) {
        const RowRoute& route = trace.rows[r];
        std::vector<double> dh(n, 0.0);
        if (gate.kind == GateKind::switch_top1) {
            const std::size_t sel = route.selected[0];
            const double dg = dot_of(sel, r);
            const double psel = route.gate_probs[sel];
            for (std::size_t j = 0; j < n; ++j) {
                dh[j] = dg * psel * ((j == sel ? 1.0 : 0.0) - route.gate_probs[j]);
            }
        } else {
            double weighted_sum = 0.0;
            for (std::size_t j : route.selected) {
                weighted_sum += route.gate_probs[j] * dot_of(j, r);
            }
            for (std::size_t j : route.selected) {
                dh[j] = route.gate_probs[j] * (dot_of(j, r) - weighted_sum);
            }
        }

        const std::vector<double> xrow = copy_row(x, r);
        std::vector<double> noise_logits;
        if (gate.noise_enabled && !route.noise_draws.empty()) {
            noise_logits = gate_logits(xrow, *gate.w_noise);
        }
        double* dxrow = x_grad.data().data() + r * d_model;
        for (std::size_t j = 0; j < n; ++j) {
            if (dh[j] == 0.0) continue;
            for (std::size_t d = 0; d < d_model; ++d) {
                gate_w_grad.data()[d * n + j] += xrow[d] * dh[j];
                double dhdx = gate.w_gate[d * n + j];
                if (!noise_logits.empty()) {
                    const double sig = 1.0 / (1.0 + std::exp(-noise_logits[j]));
                    dhdx += route.noise_draws[j] * sig * (*gate.w_noise)[d * n + j];
                }
                dxrow[d] += dh[j] * dhdx;
            }
        }
    }
}

std::vector<std::vector<std::size_t>> routed_rows(const RoutingTrace& trace, std::size_t n) {
    std::vector<std::vector<std::size_t>> rows_of(n);
    for (std::size_t r = 0; r < trace.rows.size(); ++r) {
        for (std::size_t i : trace.rows[r].selected) rows_of[i].push_back(r);
    }
    return rows_of;
}

void check_backward_args(const Tensor& x, const Tensor& grad_y, const RoutingTrace& trace) {
    if (!grad_y.same_shape(x)) throw ShapeError("backward: grad_y shape must match x");
    if (trace.rows.size() != x.extent(0)) throw ShapeError("backward: trace row count mismatch");
}

}  // namespace

BankGradients backward(const MpoeExpertBank& bank, const Tensor& x, const Tensor& grad_y,
                       const RoutingTrace& trace, bool need_central_grads) {
    if (trace.bank_version != bank.version) {
        throw std::logic_error("backward: stale trace, bank parameters changed since forward");
    }
    check_backward_args(x, grad_y, trace);
    const std::size_t d_model = x.extent(1);
    const std::size_t n = bank.n_experts;

    BankGradients g;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        g.shared_central[slot] = Tensor::zeros(bank.shared_central[slot].shape());
        g.aux[slot].resize(n);
        g.biases[slot].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (const Tensor& a : bank.aux[slot][i]) g.aux[slot][i].push_back(Tensor::zeros(a.shape()));
            g.biases[slot][i] = Tensor::zeros(bank.biases[slot][i].shape());
        }
    }
    g.gate_weights = Tensor::zeros(bank.gate.w_gate.shape());
    g.x = Tensor::zeros(x.shape());

    const auto rows_of = routed_rows(trace, n);
    std::vector<ExpertBackwardOut> parts(n);
    std::vector<std::array<std::vector<Tensor>, kNumSlots>> chain_parts(n);

    const long n_long = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long il = 0; il < n_long; ++il) {
        const std::size_t i = static_cast<std::size_t>(il);
        if (rows_of[i].empty()) continue;
        const Tensor w1 = expert_weight(bank, kSlotW1, i);
        const Tensor w2 = expert_weight(bank, kSlotW2, i);
        const ExpertView view{&w1, &w2, &bank.biases[kSlotW1][i], &bank.biases[kSlotW2][i]};
        parts[i] = expert_backward_core(view, bank.gate, x, grad_y, trace, rows_of[i], i);

        const auto skip1 = need_central_grads
                               ? std::optional<std::size_t>{}
                               : std::optional<std::size_t>{bank.central_index[kSlotW1]};
        const auto skip2 = need_central_grads
                               ? std::optional<std::size_t>{}
                               : std::optional<std::size_t>{bank.central_index[kSlotW2]};
        chain_parts[i][kSlotW1] =
            chain_gradients(assemble_factors(bank, kSlotW1, i).locals, parts[i].dw1, skip1);
        chain_parts[i][kSlotW2] =
            chain_gradients(assemble_factors(bank, kSlotW2, i).locals, parts[i].dw2, skip2);
    }

    // merge in expert-index order: deterministic shared-central accumulation
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rows = rows_of[i];
        if (rows.empty()) continue;
        for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
            const std::size_t central = bank.central_index[slot];
            for (std::size_t k = 0, a = 0; k < chain_parts[i][slot].size(); ++k) {
                if (k == central) {
                    if (need_central_grads) {
                        add_scaled(g.shared_central[slot], chain_parts[i][slot][k], 1.0);
                    }
                } else {
                    g.aux[slot][i][a++] = std::move(chain_parts[i][slot][k]);
                }
            }
        }
        g.biases[kSlotW1][i] = std::move(parts[i].db1);
        g.biases[kSlotW2][i] = std::move(parts[i].db2);
        for (std::size_t idx = 0; idx < rows.size(); ++idx) {
            double* dst = g.x.data().data() + rows[idx] * d_model;
            const double* src = parts[i].dx_part.data().data() + idx * d_model;
            for (std::size_t c = 0; c < d_model; ++c) dst[c] += src[c];
        }
    }

    gate_backward(bank.gate, x, trace, rows_of, parts, g.gate_weights, g.x);
    return g;
}

DenseBankGradients backward(const DenseMoeBank& bank, const Tensor& x, const Tensor& grad_y,
                            const RoutingTrace& trace) {
    if (trace.bank_version != bank.version) {
        throw std::logic_error("backward: stale trace, bank parameters changed since forward");
    }
    check_backward_args(x, grad_y, trace);
    const std::size_t d_model = x.extent(1);
    const std::size_t n = bank.n_experts;

    DenseBankGradients g;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (std::size_t i = 0; i < n; ++i) {
            g.weights[slot].push_back(Tensor::zeros(bank.weights[slot][i].shape()));
            g.biases[slot].push_back(Tensor::zeros(bank.biases[slot][i].shape()));
        }
    }
    g.gate_weights = Tensor::zeros(bank.gate.w_gate.shape());
    g.x = Tensor::zeros(x.shape());

    const auto rows_of = routed_rows(trace, n);
    std::vector<ExpertBackwardOut> parts(n);

    const long n_long = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long il = 0; il < n_long; ++il) {
        const std::size_t i = static_cast<std::size_t>(il);
        if (rows_of[i].empty()) continue;
        const ExpertView view{&bank.weights[kSlotW1][i], &bank.weights[kSlotW2][i],
                              &bank.biases[kSlotW1][i], &bank.biases[kSlotW2][i]};
        parts[i] = expert_backward_core(view, bank.gate, x, grad_y, trace, rows_of[i], i);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& rows = rows_of[i];
        if (rows.empty()) continue;
        g.weights[kSlotW1][i] = std::move(parts[i].dw1);
        g.weights[kSlotW2][i] = std::move(parts[i].dw2);
        g.biases[kSlotW1][i] = std::move(parts[i].db1);
        g.biases[kSlotW2][i] = std::move(parts[i].db2);
        for (std::size_t idx = 0; idx < rows.size(); ++idx) {
            double* dst = g.x.data().data() + rows[idx] * d_model;
            const double* src = parts[i].dx_part.data().data() + idx * d_model;
            for (std::size_t c = 0; c < d_model; ++c) dst[c] += src[c];
        }
    }

    gate_backward(bank.gate, x, trace, rows_of, parts, g.gate_weights, g.x);
    return g;
}

double efficiency_ratio(std::size_t n_experts, double gamma) {
    if (n_experts == 0) throw ConfigError("efficiency_ratio: n must be >= 1");
    if (!(gamma > 0.0)) throw ConfigError("efficiency_ratio: gamma must be positive");
    const double n = static_cast<double>(n_experts);
    return (n + gamma) / (n * (gamma + 1.0));
}

BankParamCounts bank_param_counts(const MpoeExpertBank& bank) {
    BankParamCounts counts;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        counts.shared += bank.shared_central[slot].size();
        for (const Tensor& a : bank.aux[slot][0]) counts.per_expert += a.size();
        for (const Tensor& b : bank.biases[slot]) counts.bias_params += b.size();
    }
    counts.total = counts.shared + bank.n_experts * counts.per_expert;
    counts.dense_equivalent_total = bank.n_experts * (counts.shared + counts.per_expert);
    counts.gate_params = bank.gate.w_gate.size() +
                         (bank.gate.w_noise ? bank.gate.w_noise->size() : 0);
    return counts;
}

BankParamCounts bank_param_counts(const DenseMoeBank& bank) {
    BankParamCounts counts;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (const Tensor& w : bank.weights[slot]) counts.per_expert += w.size();
        for (const Tensor& b : bank.biases[slot]) counts.bias_params += b.size();
    }
    counts.per_expert /= bank.n_experts;
    counts.total = bank.n_experts * counts.per_expert;
    counts.dense_equivalent_total = counts.total;
    counts.gate_params = bank.gate.w_gate.size() +
                         (bank.gate.w_noise ? bank.gate.w_noise->size() : 0);
    return counts;
}

ScaleAccounting transformer_scale_accounting(double base_total, std::size_t n_layers,
                                             std::size_t n_experts,
                                             const FactorizationPlan& plan1,
                                             const FactorizationPlan& plan2) {
    const double layers = static_cast<double>(n_layers);
    const double experts = static_cast<double>(n_experts);
    const double dense_ffn = static_cast<double>(plan1.rows()) * plan1.cols() +
                             static_cast<double>(plan2.rows()) * plan2.cols();
    const MpoParamCounts c1 = plan_param_counts(plan1);
    const MpoParamCounts c2 = plan_param_counts(plan2);
    const double shared = static_cast<double>(c1.central + c2.central);
    const double aux = static_cast<double>(c1.auxiliary + c2.auxiliary);

    ScaleAccounting acc;
    acc.base_total = base_total;
    acc.moe_total = base_total + layers * experts * dense_ffn;
    acc.mpoe_total = base_total - layers * dense_ffn + layers * (shared + experts * aux);
    return acc;
}

}  // namespace mpoe

namespace mpoe::reference {

ForwardResult moe_forward(const DenseMoeBank& bank, const Tensor& x, Rng& rng) {
    const std::size_t batch = x.extent(0);
    const std::size_t d_model = x.extent(1);
    const std::size_t d_ff = bank.d_ff;

    ForwardResult res;
    res.trace.bank_version = bank.version;
    res.y = Tensor::zeros({batch, d_model});
    for (std::size_t r = 0; r < batch; ++r) {
        std::vector<double> xrow(x.data().data() + r * d_model,
                                 x.data().data() + (r + 1) * d_model);
        RowRoute route;
        if (bank.gate.kind == GateKind::switch_top1) {
            route.gate_probs = softmax(gate_logits(xrow, bank.gate.w_gate));
            std::size_t best = 0;
            for (std::size_t i = 1; i < route.gate_probs.size(); ++i) {
                if (route.gate_probs[i] > route.gate_probs[best]) best = i;
            }
            route.selected = {best};
        } else {
            GateOutput out = noisy_topk_gate(xrow, bank.gate, rng, &route.noise_draws);
            route.gate_probs = std::move(out.weights);
            route.selected = std::move(out.selected);
        }

        for (std::size_t i : route.selected) {
            const double w = route.gate_probs[i];
            const Tensor& w1 = bank.weights[kSlotW1][i];
            const Tensor& w2 = bank.weights[kSlotW2][i];
            std::vector<double> h(d_ff, 0.0);
            for (std::size_t c = 0; c < d_ff; ++c) {
                double acc = bank.biases[kSlotW1][i][c];
                for (std::size_t d = 0; d < d_model; ++d) acc += xrow[d] * w1[d * d_ff + c];
                h[c] = acc > 0.0 ? acc : 0.0;
            }
            for (std::size_t c = 0; c < d_model; ++c) {
                double acc = bank.biases[kSlotW2][i][c];
                for (std::size_t d = 0; d < d_ff; ++d) acc += h[d] * w2[d * d_model + c];
                res.y.data()[r * d_model + c] += w * acc;
            }
        }
        res.trace.rows.push_back(std::move(route));
    }
    return res;
}

}  // namespace mpoe::reference
