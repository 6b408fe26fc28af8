// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one structural or numeric criterion per check, each with
// its tolerance pinned in code. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mpoe/analysis.hpp"
#include "mpoe/moe_layer.hpp"
#include "mpoe/mpo.hpp"
#include "mpoe/optimizer.hpp"
#include "mpoe/synthetic.hpp"

using namespace mpoe;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

FactorizationPlan plan_of(std::vector<std::size_t> i, std::vector<std::size_t> j) {
    FactorizationPlan p;
    p.row_factors = std::move(i);
    p.col_factors = std::move(j);
    return p;
}

double rel_fro_err(const Tensor& got, const Tensor& want) {
    return frobenius_norm(elementwise_sub(got, want)) / frobenius_norm(want);
}

MpoeExpertBank gradcheck_bank() {
    Rng rng(600);
    Tensor w1 = Tensor::randn({6, 8}, rng, 0.4);
    Tensor w2 = Tensor::randn({8, 6}, rng, 0.35);
    GateConfig gate;
    gate.n_experts = 2;
    gate.k = 2;
    gate.kind = GateKind::topk;
    gate.w_gate = Tensor::randn({6, 2}, rng, 0.5);
    MpoeExpertBank bank = init_from_dense(w1, w2, plan_factorization(6, 8, 3),
                                          plan_factorization(8, 6, 3), 2, gate);
    // move off the symmetric replicated-init point
    Rng nudge(601);
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (auto& chain : bank.aux[slot])
            for (Tensor& t : chain)
                for (double& v : t.data()) v += 0.05 * nudge.normal();
        for (Tensor& b : bank.biases[slot])
            for (double& v : b.data()) v += 0.05 * nudge.normal();
    }
    bank.version++;
    return bank;
}

// ---- criteria ------------------------------------------------------------

bool c1_shape_table(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(101);
    const Tensor w = Tensor::randn({768, 3072}, rng);
    const MpoFactors f = decompose(w, plan_of({3, 4, 4, 4, 4}, {4, 4, 8, 6, 4}));
    const std::vector<Shape> want = {{1, 3, 4, 12}, {12, 4, 4, 192}, {192, 4, 8, 384},
                                     {384, 4, 6, 16}, {16, 4, 4, 1}};
    bool ok = f.num_tensors() == 5;
    for (std::size_t k = 0; ok && k < 5; ++k) ok = f.locals[k].shape() == want[k];
    ok = ok && f.bond_dims == std::vector<std::size_t>{1, 12, 192, 384, 16, 1};

    const Tensor wt = Tensor::randn({3072, 768}, rng);
    const MpoFactors ft = decompose(wt, plan_of({4, 4, 8, 6, 4}, {3, 4, 4, 4, 4}));
    const std::vector<Shape> want_t = {{1, 4, 3, 12}, {12, 4, 4, 192}, {192, 8, 4, 384},
                                       {384, 6, 4, 16}, {16, 4, 4, 1}};
    ok = ok && ft.num_tensors() == 5;
    for (std::size_t k = 0; ok && k < 5; ++k) ok = ft.locals[k].shape() == want_t[k];
    ok = ok && ft.bond_dims == std::vector<std::size_t>{1, 12, 192, 384, 16, 1};

    const double secs = seconds_since(t0);
    ok = ok && secs < 5.0;
    std::ostringstream os;
    os << "both orientations, " << secs << " s (< 5 s)";
    detail = os.str();
    return ok;
}

bool c2_gamma_counts(std::string& detail) {
    Rng rng(102);
    const Tensor w = Tensor::randn({768, 3072}, rng);
    const MpoParamCounts c = count_params(decompose(w, plan_of({3, 4, 4, 4, 4}, {4, 4, 8, 6, 4})));
    const bool ok = c.central == 2359296 && c.auxiliary == 184720 && c.gamma >= 12.5 &&
                    c.gamma <= 13.0;
    std::ostringstream os;
    os << "central=" << c.central << " auxiliary=" << c.auxiliary << " gamma=" << c.gamma;
    detail = os.str();
    return ok;
}

bool c3_efficiency_ratio(std::string& detail) {
    bool ok = std::abs(efficiency_ratio(8, 12.0) - 20.0 / 104.0) <= 1e-12;
    double worst = 0.0;
    for (std::size_t n : {std::size_t(2), std::size_t(8), std::size_t(16)}) {
        Rng rng(103 + n);
        Tensor w1 = Tensor::randn({16, 24}, rng);
        Tensor w2 = Tensor::randn({24, 16}, rng);
        GateConfig gate;
        gate.n_experts = n;
        gate.k = 1;
        gate.w_gate = Tensor::randn({16, n}, rng);
        const MpoeExpertBank bank = init_from_dense(
            w1, w2, plan_factorization(16, 24, 5), plan_factorization(24, 16, 5), n, gate);
        const BankParamCounts c = bank_param_counts(bank);
        const double gamma = double(c.shared) / double(c.per_expert);
        const double got = double(c.total) / double(c.dense_equivalent_total);
        const double err = std::abs(got - efficiency_ratio(n, gamma));
        worst = std::max(worst, err);
        ok = ok && err <= 1e-9;
    }
    std::ostringstream os;
    os << "eff(8,12)=20/104 exact; bank ratio max |err|=" << worst << " (<= 1e-9)";
    detail = os.str();
    return ok;
}

bool c4_scale_accounting(std::string& detail) {
    const auto t0 = Clock::now();
    const FactorizationPlan p1 = plan_of({3, 4, 4, 4, 4}, {4, 4, 8, 6, 4});
    const FactorizationPlan p2 = plan_of({4, 4, 8, 6, 4}, {3, 4, 4, 4, 4});
    const ScaleAccounting acc = transformer_scale_accounting(124.4e6, 12, 8, p1, p2);
    const double moe_err = std::abs(acc.moe_total - 578e6) / 578e6;
    const double mpoe_err = std::abs(acc.mpoe_total - 157.4e6) / 157.4e6;
    const double secs = seconds_since(t0);
    const bool ok = moe_err < 0.05 && mpoe_err < 0.05 && secs < 1.0;
    std::ostringstream os;
    os << "moe=" << acc.moe_total / 1e6 << "M (err " << moe_err * 100 << "%), mpoe="
       << acc.mpoe_total / 1e6 << "M (err " << mpoe_err * 100 << "%), " << secs << " s";
    detail = os.str();
    return ok;
}

bool c5_exact_reconstruction(std::string& detail) {
    Rng rng(105);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 2 + std::size_t(rng.uniform_int(0, 62));
        const std::size_t cols = 2 + std::size_t(rng.uniform_int(0, 62));
        const std::size_t m = std::vector<std::size_t>{3, 5, 7}[rng.uniform_int(0, 2)];
        const Tensor w = Tensor::randn({rows, cols}, rng);
        const double err = rel_fro_err(reconstruct(decompose(w, plan_factorization(rows, cols, m))), w);
        worst = std::max(worst, err);
        if (err >= 1e-10) {
            detail = "violated at trial " + std::to_string(trial);
            return false;
        }
    }
    std::ostringstream os;
    os << "50 trials, worst rel err " << worst << " (< 1e-10)";
    detail = os.str();
    return true;
}

bool c6_truncation_bound(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(106);
    double worst_margin = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        FactorizationPlan plan;
        std::vector<std::size_t> full;
        std::size_t rows = 0, cols = 0;
        for (;;) {  // need a plan with at least one bond that can truncate
            rows = 4 + std::size_t(rng.uniform_int(0, 60));
            cols = 4 + std::size_t(rng.uniform_int(0, 60));
            const std::size_t m = 2 + std::size_t(rng.uniform_int(0, 2));
            plan = plan_factorization(rows, cols, m);
            full = bond_dimensions(plan);
            bool can_cut = false;
            for (std::size_t d : full) can_cut = can_cut || d >= 2;
            if (can_cut) break;
        }
        std::vector<std::size_t> caps;
        bool any_cut = false;
        for (std::size_t d : full) {
            const std::size_t cap = 1 + std::size_t(rng.uniform_int(0, d - 1));
            caps.push_back(cap);
            any_cut = any_cut || cap < d;
        }
        if (!any_cut) {
            for (std::size_t k = 0; k < full.size(); ++k) {
                if (full[k] >= 2) {
                    caps[k] = full[k] - 1;
                    break;
                }
            }
        }
        plan.bond_caps = caps;
        const Tensor w = Tensor::randn({rows, cols}, rng);
        const MpoFactors f = decompose(w, plan);
        const double realized = frobenius_norm(elementwise_sub(w, reconstruct(f)));
        const double bound = truncation_bound(f.truncation_eps);
        if (realized > bound * (1.0 + 1e-8)) {
            detail = "violated at trial " + std::to_string(trial);
            return false;
        }
        if (bound > 0.0) worst_margin = std::max(worst_margin, realized / bound);
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "200 trials, max realized/bound " << worst_margin << ", " << secs << " s (< 60 s)";
    detail = os.str();
    return secs < 60.0;
}

bool c7_gradient_check(std::string& detail) {
    MpoeExpertBank bank = gradcheck_bank();
    Rng rng(107);
    const Tensor x = Tensor::randn({5, 6}, rng);
    const Tensor probe = Tensor::randn({5, 6}, rng);
    const double h = 1e-5;

    auto loss = [&](const MpoeExpertBank& b) {
        Rng fwd(42);
        const ForwardResult res = forward(b, x, fwd);
        double acc = 0.0;
        for (std::size_t i = 0; i < res.y.size(); ++i) acc += res.y[i] * probe[i];
        return acc;
    };

    Rng fwd(42);
    const ForwardResult res = forward(bank, x, fwd);
    const BankGradients g = backward(bank, x, probe, res.trace);

    double max_rel = 0.0;
    auto check_param = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + h;
        const double hi = loss(bank);
        param = keep - h;
        const double lo = loss(bank);
        param = keep;
        const double fd = (hi - lo) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    };

    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        Tensor& c = bank.shared_central[slot];
        for (std::size_t e = 0; e < c.size(); ++e) check_param(c.data()[e], g.shared_central[slot][e]);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t a = 0; a < bank.aux[slot][i].size(); ++a) {
                Tensor& t = bank.aux[slot][i][a];
                for (std::size_t e = 0; e < t.size(); ++e) {
                    check_param(t.data()[e], g.aux[slot][i][a][e]);
                }
            }
            Tensor& b = bank.biases[slot][i];
            for (std::size_t e = 0; e < b.size(); ++e) check_param(b.data()[e], g.biases[slot][i][e]);
        }
    }
    Tensor& wg = bank.gate.w_gate;
    for (std::size_t e = 0; e < wg.size(); ++e) check_param(wg.data()[e], g.gate_weights[e]);

    std::ostringstream os;
    os << "all parameter groups, max rel err " << max_rel << " (< 1e-5)";
    detail = os.str();
    return max_rel < 1e-5;
}

bool c8_forward_equivalence(std::string& detail) {
    Rng rng(108);
    Tensor w1 = Tensor::randn({10, 14}, rng, 0.3);
    Tensor w2 = Tensor::randn({14, 10}, rng, 0.3);
    GateConfig gate;
    gate.n_experts = 4;
    gate.k = 2;
    gate.kind = GateKind::topk;
    gate.w_gate = Tensor::randn({10, 4}, rng, 0.5);
    MpoeExpertBank bank = init_from_dense(w1, w2, plan_factorization(10, 14, 3),
                                          plan_factorization(14, 10, 3), 4, gate);
    Rng nudge(1080);
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (auto& chain : bank.aux[slot])
            for (Tensor& t : chain)
                for (double& v : t.data()) v += 0.03 * nudge.normal();
    }
    bank.version++;
    const DenseMoeBank dense = densify(bank);

    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = Tensor::randn({12, 10}, rng);
        Rng ra(500 + trial), rb(500 + trial);
        const ForwardResult a = forward(bank, x, ra);
        const ForwardResult b = forward(dense, x, rb);
        worst = std::max(worst, rel_fro_err(a.y, b.y));
    }
    std::ostringstream os;
    os << "20 batches, worst rel diff " << worst << " (<= 1e-8)";
    detail = os.str();
    return worst <= 1e-8;
}

bool c9_gradient_mask(std::string& detail) {
    Rng data_rng(109);
    auto make_bank = [&](std::uint64_t seed) {
        Rng rng(seed);
        Tensor w1 = Tensor::randn({6, 8}, rng, 0.4);
        Tensor w2 = Tensor::randn({8, 6}, rng, 0.4);
        GateConfig gate;
        gate.n_experts = 2;
        gate.k = 2;
        gate.kind = GateKind::topk;
        gate.w_gate = Tensor::randn({6, 2}, rng, 0.5);
        return init_from_dense(w1, w2, plan_factorization(6, 8, 3), plan_factorization(8, 6, 3),
                               2, gate);
    };
    auto one_grad = [&](const MpoeExpertBank& bank, std::uint64_t seed) {
        Rng rng(seed);
        const Tensor x = Tensor::randn({6, 6}, rng);
        const Tensor gy = Tensor::randn({6, 6}, rng);
        Rng fwd(seed + 1);
        const ForwardResult res = forward(bank, x, fwd);
        return backward(bank, x, gy, res.trace);
    };

    // p_b = 1: centrals bitwise frozen over 1000 steps, auxiliaries move
    MpoeExpertBank frozen = make_bank(1);
    const std::array<Tensor, 2> central0 = frozen.shared_central;
    const Tensor aux0 = frozen.aux[kSlotW1][0][0];
    {
        MaskedUpdateConfig cfg;
        cfg.learning_rate = 0.001;  // random gradients; keep the walk bounded
        cfg.mask_prob = 1.0;
        cfg.seed = 11;
        TrainState state(frozen, cfg);
        for (int step = 0; step < 1000; ++step) masked_step(state, one_grad(frozen, 2000 + step));
        if (!std::isfinite(frobenius_norm(frozen.aux[kSlotW1][0][0]))) {
            detail = "p_b=1 run left finite range";
            return false;
        }
        if (frozen.shared_central[0].data() != central0[0].data() ||
            frozen.shared_central[1].data() != central0[1].data()) {
            detail = "p_b=1 central moved";
            return false;
        }
        if (max_abs_diff(frozen.aux[kSlotW1][0][0], aux0) == 0.0) {
            detail = "p_b=1 auxiliaries did not move";
            return false;
        }
    }

    // p_b = 0.9 scalar over 10000 steps: update fraction in [0.09, 0.11]
    double frac = 0.0;
    {
        MpoeExpertBank bank = make_bank(2);
        MaskedUpdateConfig cfg;
        cfg.mask_prob = 0.9;
        cfg.seed = 12;
        TrainState state(bank, cfg);
        for (int step = 0; step < 10000; ++step) {
            const StepMask mask = draw_step_mask(state);
            state.step++;
            if (!mask.central_fully_masked()) state.central_update_steps++;
        }
        frac = double(state.central_update_steps) / 10000.0;
        if (frac < 0.09 || frac > 0.11) {
            detail = "p_b=0.9 update fraction " + std::to_string(frac);
            return false;
        }
    }

    // p_b = 0: bitwise equal to unmasked SGD
    {
        MpoeExpertBank masked = make_bank(3);
        MpoeExpertBank plain = make_bank(3);
        MaskedUpdateConfig cfg;
        cfg.learning_rate = 0.001;
        cfg.mask_prob = 0.0;
        cfg.seed = 13;
        TrainState state(masked, cfg);
        for (int step = 0; step < 100; ++step) {
            masked_step(state, one_grad(masked, 3000 + step));
            const BankGradients g = one_grad(plain, 3000 + step);
            for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
                add_scaled(plain.shared_central[slot], g.shared_central[slot], -0.001);
                for (std::size_t i = 0; i < 2; ++i) {
                    for (std::size_t a = 0; a < plain.aux[slot][i].size(); ++a) {
                        add_scaled(plain.aux[slot][i][a], g.aux[slot][i][a], -0.001);
                    }
                    add_scaled(plain.biases[slot][i], g.biases[slot][i], -0.001);
                }
            }
            add_scaled(plain.gate.w_gate, g.gate_weights, -0.001);
            plain.version++;
        }
        if (!std::isfinite(frobenius_norm(masked.shared_central[0]))) {
            detail = "p_b=0 run left finite range";
            return false;
        }
        for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
            if (masked.shared_central[slot].data() != plain.shared_central[slot].data()) {
                detail = "p_b=0 differs from plain SGD";
                return false;
            }
            for (std::size_t i = 0; i < 2; ++i) {
                for (std::size_t a = 0; a < masked.aux[slot][i].size(); ++a) {
                    if (masked.aux[slot][i][a].data() != plain.aux[slot][i][a].data()) {
                        detail = "p_b=0 differs from plain SGD (aux)";
                        return false;
                    }
                }
            }
        }
        if (masked.gate.w_gate.data() != plain.gate.w_gate.data()) {
            detail = "p_b=0 differs from plain SGD (gate)";
            return false;
        }
    }

    std::ostringstream os;
    os << "freeze ok, update fraction " << frac << ", p_b=0 bitwise equal";
    detail = os.str();
    return true;
}

bool c10_gating(std::string& detail) {
    Rng rng(110);
    GateConfig sw;
    sw.n_experts = 5;
    sw.k = 1;
    sw.kind = GateKind::switch_top1;
    sw.w_gate = Tensor::randn({8, 5}, rng);
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.normal();
        const GateOutput out = switch_gate(x, sw);
        std::size_t nonzero = 0;
        for (double w : out.weights) nonzero += w != 0.0;
        if (out.selected.size() != 1 || nonzero != 1) {
            detail = "switch selected " + std::to_string(out.selected.size());
            return false;
        }
    }

    GateConfig tk;
    tk.n_experts = 6;
    tk.k = 3;
    tk.kind = GateKind::topk;
    tk.w_gate = Tensor::randn({8, 6}, rng);
    tk.noise_enabled = true;
    tk.w_noise = Tensor::randn({8, 6}, rng);
    double worst_sum = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.normal();
        const GateOutput out = noisy_topk_gate(x, tk, rng);
        double sum = 0.0;
        std::size_t nonzero = 0;
        for (double w : out.weights) {
            sum += w;
            nonzero += w != 0.0;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        if (std::abs(sum - 1.0) > 1e-9 || nonzero > 3) {
            detail = "top-k sum/support violated";
            return false;
        }
    }

    GateConfig full;
    full.n_experts = 6;
    full.k = 6;
    full.kind = GateKind::topk;
    full.w_gate = Tensor::randn({8, 6}, rng);
    double worst_softmax = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = rng.normal();
        const GateOutput out = noisy_topk_gate(x, full, rng);
        const std::vector<double> want = softmax(gate_logits(x, full.w_gate));
        for (std::size_t i = 0; i < 6; ++i) {
            worst_softmax = std::max(worst_softmax, std::abs(out.weights[i] - want[i]));
        }
    }
    std::ostringstream os;
    os << "switch one-hot ok; top-k worst |sum-1| " << worst_sum << "; k=n vs softmax worst |d| "
       << worst_softmax << " (<= 1e-12)";
    detail = os.str();
    return worst_softmax <= 1e-12;
}

bool c11_toy_training(std::string& detail) {
    const auto t0 = Clock::now();
    const ExperimentConfig cfg = ExperimentConfig::defaults();  // n=4, 16x32, 2000 steps
    const TrainResult a = train_mpoe(cfg);
    const TrainResult b = train_mpoe(cfg);
    const DenseTrainResult dense = train_dense_baseline(cfg);
    const double secs = seconds_since(t0);

    bool ok = true;
    std::string why;
    if (a.final_loss > 0.5 * a.initial_loss) {
        ok = false;
        why = "loss did not halve";
    }
    if (curve_to_csv(a.curve) != curve_to_csv(b.curve) || a.final_loss != b.final_loss) {
        ok = false;
        why = "not deterministic";
    }
    // stand-in for "comparable quality with fewer parameters": the shared
    // bank must not be worse than the dense baseline by more than 20%
    if (a.final_loss > 1.2 * dense.final_loss) {
        ok = false;
        why = "worse than dense baseline by more than 20%";
    }
    if (secs >= 120.0) {
        ok = false;
        why = "too slow";
    }
    std::ostringstream os;
    os << "init " << a.initial_loss << " -> final " << a.final_loss << " (ratio "
       << a.final_loss / a.initial_loss << "), dense " << dense.final_loss << ", " << secs
       << " s (< 120 s)";
    detail = os.str() + (why.empty() ? "" : "; " + why);
    return ok;
}

bool c12_factorization_sweep(std::string& detail) {
    const ExperimentConfig cfg = ExperimentConfig::defaults();
    const std::vector<SweepRow> rows = sweep_factorization(cfg, {3, 5, 7, 9});
    bool ok = rows.size() == 4;
    for (std::size_t i = 1; ok && i < rows.size(); ++i) {
        ok = rows[i].mpo_params > rows[i - 1].mpo_params;  // strictly increasing
    }
    double worst_rest = 0.0, best_rest = 1e300;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        worst_rest = std::max(worst_rest, rows[i].final_loss);
        best_rest = std::min(best_rest, rows[i].final_loss);
    }
    if (ok) ok = rows[0].final_loss > worst_rest;      // m=3 is the worst of the sweep
    if (ok) ok = worst_rest / best_rest <= 1.10;       // m in {5,7,9} within 10%
    std::ostringstream os;
    os << "losses m=3:" << rows[0].final_loss << " m=5:" << rows[1].final_loss
       << " m=7:" << rows[2].final_loss << " m=9:" << rows[3].final_loss << "; params "
       << rows[0].mpo_params << "<" << rows[1].mpo_params << "<" << rows[2].mpo_params << "<"
       << rows[3].mpo_params;
    detail = os.str();
    return ok;
}

bool c13_mmd(std::string& detail) {
    const double want = 2.0 * std::sqrt(1.0 / 2500.0) * (1.0 + std::sqrt(std::log(20.0)));
    const double got = mmd_threshold(2500, 1.0, 0.05);
    bool ok = std::abs(got - want) <= 1e-12 && std::abs(got - 0.1092327353) < 1e-9;

    Rng rng(113);
    const Tensor x = Tensor::randn({50, 6}, rng);
    ok = ok && empirical_mmd(x, x) <= 1e-12;

    // identically distributed expert outputs at init fall below the threshold
    Tensor w1 = Tensor::randn({6, 8}, rng, 0.4);
    Tensor w2 = Tensor::randn({8, 6}, rng, 0.4);
    GateConfig gate;
    gate.n_experts = 3;
    gate.k = 1;
    gate.w_gate = Tensor::randn({6, 3}, rng);
    const MpoeExpertBank bank = init_from_dense(
        w1, w2, plan_factorization(6, 8, 3), plan_factorization(8, 6, 3), 3, gate);
    const RedundancyReport rep = redundancy_report(bank, Tensor::randn({64, 6}, rng));
    for (const MmdReport& pair : rep.mmd_pairs) {
        ok = ok && pair.same_distribution && pair.empirical < pair.threshold;
    }
    const bool documented = rep.threshold_note.find("0.178") != std::string::npos;
    ok = ok && documented;

    std::ostringstream os;
    os << "threshold " << got << " (formula exact), mmd(X,X)=0, init experts same-dist, "
       << "0.178 discrepancy documented in report";
    detail = os.str();
    return ok;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<bool(std::string&)> fn;
    };
    const std::vector<Criterion> criteria = {
        {1, "reference factorization shapes (768x3072 and transpose)", c1_shape_table},
        {2, "gamma parameter counts", c2_gamma_counts},
        {3, "efficiency ratio closed form and bank cross-check", c3_efficiency_ratio},
        {4, "model-scale parameter accounting", c4_scale_accounting},
        {5, "exact reconstruction without truncation", c5_exact_reconstruction},
        {6, "truncation error within the chain bound", c6_truncation_bound},
        {7, "analytic gradients vs finite differences", c7_gradient_check},
        {8, "forward equivalence with the dense bank", c8_forward_equivalence},
        {9, "gradient mask semantics", c9_gradient_mask},
        {10, "gating contracts", c10_gating},
        {11, "toy training halves the loss and tracks the dense baseline", c11_toy_training},
        {12, "factorization-length sweep pattern", c12_factorization_sweep},
        {13, "mmd threshold and same-distribution check", c13_mmd},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = c.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%2d] %s  %s (%s)\n", c.id, ok ? "PASS" : "FAIL", c.name, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    std::printf("RESULT: %zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
