// SPDX-License-Identifier: Apache-2.0
#include "mpoe/synthetic.hpp"

#include <cmath>
#include <sstream>

#include "mpoe/optimizer.hpp"

namespace mpoe {

namespace {

// Relative size of the per-expert deviation from the shared teacher base.
constexpr double kTeacherExpertSpread = 0.3;

GateKind gate_kind_of(const std::string& kind) {
    if (kind == "softmax") return GateKind::softmax;
    if (kind == "switch") return GateKind::switch_top1;
    return GateKind::topk;
}

Tensor batch_slice(const Tensor& data, std::size_t start, std::size_t count) {
    const std::size_t n = data.extent(0);
    const std::size_t d = data.extent(1);
    Tensor out = Tensor::zeros({count, d});
    for (std::size_t r = 0; r < count; ++r) {
        const std::size_t src = (start + r) % n;
        std::copy_n(data.data().data() + src * d, d, out.data().data() + r * d);
    }
    return out;
}

double step_lr(const OptimizerConfig& opt, std::int64_t step) {
    if (opt.lr) return *opt.lr;
    return warmup_lr(step + 1, opt.warmup->d_model, opt.warmup->warmup_steps);
}

}  // namespace

SyntheticTask build_synthetic_task(const TaskConfig& cfg) {
    Rng rng(cfg.seed);
    SyntheticTask task;

    DenseMoeBank& teacher = task.teacher;
    teacher.n_experts = cfg.teacher_experts;
    teacher.d_model = cfg.d_model;
    teacher.d_ff = cfg.d_ff;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        const Shape wshape = slot == kSlotW1 ? Shape{cfg.d_model, cfg.d_ff}
                                             : Shape{cfg.d_ff, cfg.d_model};
        const double scale = 1.0 / std::sqrt(static_cast<double>(wshape[0]));
        const Tensor base = Tensor::randn(wshape, rng, scale);
        const std::size_t bias_len = slot == kSlotW1 ? cfg.d_ff : cfg.d_model;
        for (std::size_t i = 0; i < cfg.teacher_experts; ++i) {
            Tensor w = base;
            for (double& v : w.data()) v += kTeacherExpertSpread * scale * rng.normal();
            teacher.weights[slot].push_back(std::move(w));
            teacher.biases[slot].push_back(Tensor::randn({bias_len}, rng, 0.1));
        }
    }
    teacher.gate.n_experts = cfg.teacher_experts;
    teacher.gate.k = std::min<std::size_t>(2, cfg.teacher_experts);
    teacher.gate.kind = GateKind::topk;
    teacher.gate.w_gate = Tensor::randn({cfg.d_model, cfg.teacher_experts}, rng);

    task.inputs = Tensor::randn({cfg.n_samples, cfg.d_model}, rng);
    Rng teacher_rng(cfg.seed + 1);  // unused by the noise-free teacher gate
    task.targets = forward(teacher, task.inputs, teacher_rng).y;
    for (double& v : task.targets.data()) v += cfg.noise_std * rng.normal();
    return task;
}

double mse(const Tensor& y, const Tensor& target) {
    if (!y.same_shape(target)) throw ShapeError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y.size());
}

Tensor mse_grad(const Tensor& y, const Tensor& target) {
    Tensor g = elementwise_sub(y, target);
    const double scale = 2.0 / static_cast<double>(y.size());
    for (double& v : g.data()) v *= scale;
    return g;
}

std::string curve_to_csv(const std::vector<TrainCurveRow>& curve) {
    std::ostringstream os;
    os << "step,loss,lr,central_updated\n";
    os.precision(17);
    for (const auto& row : curve) {
        os << row.step << ',' << row.loss << ',' << row.lr << ',' << row.central_updated << '\n';
    }
    return os.str();
}

std::pair<FactorizationPlan, FactorizationPlan> resolve_plans(const ExperimentConfig& cfg) {
    if (cfg.model.plan_w1 && cfg.model.plan_w2) {
        return {*cfg.model.plan_w1, *cfg.model.plan_w2};
    }
    return {plan_factorization(cfg.task.d_model, cfg.task.d_ff, cfg.model.m),
            plan_factorization(cfg.task.d_ff, cfg.task.d_model, cfg.model.m)};
}

GateConfig build_student_gate(const ExperimentConfig& cfg, Rng& rng) {
    GateConfig gate;
    gate.n_experts = cfg.model.n_experts;
    gate.k = cfg.model.gate.k;
    gate.kind = gate_kind_of(cfg.model.gate.kind);
    gate.w_gate = Tensor::randn({cfg.task.d_model, cfg.model.n_experts}, rng,
                                1.0 / std::sqrt(static_cast<double>(cfg.task.d_model)));
    if (cfg.model.gate.noise) {
        gate.noise_enabled = true;
        gate.w_noise = Tensor::randn({cfg.task.d_model, cfg.model.n_experts}, rng,
                                     1.0 / std::sqrt(static_cast<double>(cfg.task.d_model)));
    }
    return gate;
}

TrainResult train_mpoe(const ExperimentConfig& cfg) {
    cfg.validate();
    const SyntheticTask task = build_synthetic_task(cfg.task);

    Rng init_rng(cfg.optimizer.seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.task.d_model));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.task.d_ff));
    const Tensor w1 = Tensor::randn({cfg.task.d_model, cfg.task.d_ff}, init_rng, s1);
    const Tensor w2 = Tensor::randn({cfg.task.d_ff, cfg.task.d_model}, init_rng, s2);
    const auto [plan1, plan2] = resolve_plans(cfg);
    GateConfig gate = build_student_gate(cfg, init_rng);

    TrainResult result;
    result.bank = init_from_dense(w1, w2, plan1, plan2, cfg.model.n_experts, std::move(gate));
    result.init_bank = result.bank;
    MpoeExpertBank& bank = result.bank;

    MaskedUpdateConfig opt_cfg;
    opt_cfg.learning_rate = 1.0;  // overwritten per step
    opt_cfg.mask_prob = cfg.optimizer.p_b;
    opt_cfg.granularity = cfg.optimizer.granularity;
    opt_cfg.momentum = cfg.optimizer.momentum;
    opt_cfg.seed = cfg.optimizer.seed + 1;
    TrainState state(bank, opt_cfg);

    Rng gate_rng(cfg.optimizer.seed + 2);
    {
        Rng eval_rng(cfg.optimizer.seed + 3);
        result.initial_loss = mse(forward(bank, task.inputs, eval_rng).y, task.targets);
    }

    const std::size_t total = cfg.total_steps();
    const std::size_t batch = cfg.optimizer.batch_size;
    result.curve.reserve(total);
    for (std::size_t step = 0; step < total; ++step) {
        const Tensor xb = batch_slice(task.inputs, step * batch, batch);
        const Tensor tb = batch_slice(task.targets, step * batch, batch);
        const double lr = step_lr(cfg.optimizer, static_cast<std::int64_t>(step));

        const ForwardResult fwd = forward(bank, xb, gate_rng);
        const double loss = mse(fwd.y, tb);

        const StepMask mask = draw_step_mask(state);
        const BankGradients grads =
            backward(bank, xb, mse_grad(fwd.y, tb), fwd.trace, !mask.central_fully_masked());
        state.cfg.learning_rate = lr;
        apply_masked_step(state, grads, mask);

        result.curve.push_back({static_cast<std::int64_t>(step), loss, lr,
                                state.last_central_updated ? 1 : 0});
    }

    {
        Rng eval_rng(cfg.optimizer.seed + 3);
        result.final_loss = mse(forward(bank, task.inputs, eval_rng).y, task.targets);
    }
    result.steps = state.step;
    result.central_update_steps = state.central_update_steps;
    result.central_frozen_from_init = state.central_update_steps == 0;
    return result;
}

DenseTrainResult train_dense_baseline(const ExperimentConfig& cfg) {
    cfg.validate();
    const SyntheticTask task = build_synthetic_task(cfg.task);

    // identical student init: the same dense matrices the MPOE bank encodes
    Rng init_rng(cfg.optimizer.seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.task.d_model));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.task.d_ff));
    const Tensor w1 = Tensor::randn({cfg.task.d_model, cfg.task.d_ff}, init_rng, s1);
    const Tensor w2 = Tensor::randn({cfg.task.d_ff, cfg.task.d_model}, init_rng, s2);

    DenseTrainResult result;
    DenseMoeBank& bank = result.bank;
    bank.n_experts = cfg.model.n_experts;
    bank.d_model = cfg.task.d_model;
    bank.d_ff = cfg.task.d_ff;
    for (std::size_t i = 0; i < cfg.model.n_experts; ++i) {
        bank.weights[kSlotW1].push_back(w1);
        bank.weights[kSlotW2].push_back(w2);
        bank.biases[kSlotW1].push_back(Tensor::zeros({cfg.task.d_ff}));
        bank.biases[kSlotW2].push_back(Tensor::zeros({cfg.task.d_model}));
    }
    bank.gate = build_student_gate(cfg, init_rng);

    Rng gate_rng(cfg.optimizer.seed + 2);
    {
        Rng eval_rng(cfg.optimizer.seed + 3);
        result.initial_loss = mse(forward(bank, task.inputs, eval_rng).y, task.targets);
    }

    const std::size_t total = cfg.total_steps();
    const std::size_t batch = cfg.optimizer.batch_size;
    for (std::size_t step = 0; step < total; ++step) {
        const Tensor xb = batch_slice(task.inputs, step * batch, batch);
        const Tensor tb = batch_slice(task.targets, step * batch, batch);
        const double lr = step_lr(cfg.optimizer, static_cast<std::int64_t>(step));

        const ForwardResult fwd = forward(bank, xb, gate_rng);
        const DenseBankGradients grads = backward(bank, xb, mse_grad(fwd.y, tb), fwd.trace);
        sgd_step(bank, grads, lr);
    }

    {
        Rng eval_rng(cfg.optimizer.seed + 3);
        result.final_loss = mse(forward(bank, task.inputs, eval_rng).y, task.targets);
    }
    return result;
}

std::vector<SweepRow> sweep_factorization(const ExperimentConfig& base,
                                          const std::vector<std::size_t>& m_list) {
    std::vector<SweepRow> rows;
    for (std::size_t m : m_list) {
        ExperimentConfig cfg = base;
        cfg.model.m = m;
        cfg.model.plan_w1.reset();
        cfg.model.plan_w2.reset();
        cfg.validate();  // rejects m < 2

        const TrainResult result = train_mpoe(cfg);
        const auto [plan1, plan2] = resolve_plans(cfg);
        const MpoParamCounts c1 = plan_param_counts(plan1);
        const MpoParamCounts c2 = plan_param_counts(plan2);

        SweepRow row;
        row.m = m;
        row.mpo_params = c1.central + c1.auxiliary + c2.central + c2.auxiliary;
        const BankParamCounts bc = bank_param_counts(result.bank);
        row.bank_params = bc.total;
        row.final_loss = result.final_loss;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "m,mpo_params,bank_params,final_loss\n";
    os.precision(17);
    for (const auto& row : rows) {
        os << row.m << ',' << row.mpo_params << ',' << row.bank_params << ',' << row.final_loss
           << '\n';
    }
    return os.str();
}

}  // namespace mpoe
