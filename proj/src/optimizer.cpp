// SPDX-License-Identifier: Apache-2.0
#include "mpoe/optimizer.hpp"

#include <cmath>

namespace mpoe {

namespace {

// theta -= lr * g, optionally through a momentum buffer v = mu*v + g.
void sgd_update(Tensor& param, const Tensor& grad, Tensor* velocity, double lr, double mu) {
    if (velocity && mu != 0.0) {
        double* v = velocity->data().data();
        const double* g = grad.data().data();
        double* p = param.data().data();
        for (std::size_t i = 0; i < param.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            p[i] -= lr * v[i];
        }
    } else {
        double* p = param.data().data();
        const double* g = grad.data().data();
        for (std::size_t i = 0; i < param.size(); ++i) p[i] -= lr * g[i];
    }
}

void ensure_velocity(TrainState& state) {
    if (state.velocity_ready || state.cfg.momentum == 0.0) return;
    const MpoeExpertBank& bank = *state.bank;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        state.vel_central[slot] = Tensor::zeros(bank.shared_central[slot].shape());
        state.vel_aux[slot].resize(bank.n_experts);
        state.vel_biases[slot].resize(bank.n_experts);
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            state.vel_aux[slot][i].clear();
            for (const Tensor& a : bank.aux[slot][i]) {
                state.vel_aux[slot][i].push_back(Tensor::zeros(a.shape()));
            }
            state.vel_biases[slot][i] = Tensor::zeros(bank.biases[slot][i].shape());
        }
    }
    state.vel_gate = Tensor::zeros(bank.gate.w_gate.shape());
    state.velocity_ready = true;
}

}  // namespace

void MaskedUpdateConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning_rate must be > 0");
    if (mask_prob < 0.0 || mask_prob > 1.0) throw ConfigError("optimizer: mask_prob must be in [0,1]");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must be in [0,1)");
}

TrainState::TrainState(MpoeExpertBank& bank_ref, MaskedUpdateConfig config)
    : bank(&bank_ref), cfg(config), mask_rng(config.seed) {
    cfg.validate();
}

int generate_mask(double mask_prob, Rng& rng) { return rng.bernoulli(mask_prob); }

Tensor generate_mask(double mask_prob, const Shape& shape, Rng& rng) {
    Tensor mask = Tensor::zeros(shape);
    for (double& v : mask.data()) v = static_cast<double>(rng.bernoulli(mask_prob));
    return mask;
}

bool StepMask::central_fully_masked() const {
    if (granularity == MaskGranularity::per_step_scalar) return scalar_b == 1;
    for (const Tensor& t : element) {
        for (double v : t.data()) {
            if (v == 0.0) return false;
        }
    }
    return true;
}

StepMask draw_step_mask(TrainState& state) {
    StepMask mask;
    mask.granularity = state.cfg.granularity;
    if (state.cfg.granularity == MaskGranularity::per_step_scalar) {
        mask.scalar_b = generate_mask(state.cfg.mask_prob, state.mask_rng);
    } else {
        for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
            mask.element[slot] = generate_mask(
                state.cfg.mask_prob, state.bank->shared_central[slot].shape(), state.mask_rng);
        }
    }
    return mask;
}

void apply_masked_step(TrainState& state, const BankGradients& grads, const StepMask& mask) {
    MpoeExpertBank& bank = *state.bank;
    const double lr = state.cfg.learning_rate;
    const double mu = state.cfg.momentum;
    ensure_velocity(state);
    const bool with_vel = state.cfg.momentum != 0.0;

    bool central_moved = false;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        Tensor& central = bank.shared_central[slot];
        if (mask.granularity == MaskGranularity::per_step_scalar) {
            // a masked scalar step leaves the central tensor (and its
            // momentum) untouched: frozen means frozen
            if (mask.scalar_b == 0) {
                sgd_update(central, grads.shared_central[slot],
                           with_vel ? &state.vel_central[slot] : nullptr, lr, mu);
                central_moved = true;
            }
        } else {
            Tensor masked_grad = grads.shared_central[slot];
            const Tensor& b = mask.element[slot];
            for (std::size_t e = 0; e < masked_grad.size(); ++e) {
                masked_grad.data()[e] *= 1.0 - b[e];
                if (b[e] == 0.0) central_moved = true;
            }
            sgd_update(central, masked_grad, with_vel ? &state.vel_central[slot] : nullptr, lr, mu);
        }

        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            for (std::size_t a = 0; a < bank.aux[slot][i].size(); ++a) {
                sgd_update(bank.aux[slot][i][a], grads.aux[slot][i][a],
                           with_vel ? &state.vel_aux[slot][i][a] : nullptr, lr, mu);
            }
            sgd_update(bank.biases[slot][i], grads.biases[slot][i],
                       with_vel ? &state.vel_biases[slot][i] : nullptr, lr, mu);
        }
    }
    sgd_update(bank.gate.w_gate, grads.gate_weights, with_vel ? &state.vel_gate : nullptr, lr, mu);

    state.step++;
    state.last_central_updated = central_moved;
    if (central_moved) state.central_update_steps++;
    bank.version++;
}

void masked_step(TrainState& state, const BankGradients& grads) {
    apply_masked_step(state, grads, draw_step_mask(state));
}

void sgd_step(DenseMoeBank& bank, const DenseBankGradients& grads, double lr) {
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            add_scaled(bank.weights[slot][i], grads.weights[slot][i], -lr);
            add_scaled(bank.biases[slot][i], grads.biases[slot][i], -lr);
        }
    }
    add_scaled(bank.gate.w_gate, grads.gate_weights, -lr);
    bank.version++;
}

double warmup_lr(std::int64_t step, std::size_t d_model, std::int64_t warmup_steps) {
    if (step < 1) throw ConfigError("warmup_lr: step must be >= 1");
    if (warmup_steps < 1) throw ConfigError("warmup_lr: warmup_steps must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

}  // namespace mpoe
