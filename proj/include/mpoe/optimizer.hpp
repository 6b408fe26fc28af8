// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mpoe/moe_layer.hpp"
#include "mpoe/rng.hpp"

namespace mpoe {

enum class MaskGranularity { per_step_scalar, per_element };

/// Gradient-mask update settings. mask_prob is the probability that a
/// central-tensor update is discarded; with per_step_scalar a single
/// Bernoulli draw masks the whole step's central update, with per_element
/// every central entry gets its own draw.
struct MaskedUpdateConfig {
    double learning_rate = 0.01;
    double mask_prob = 0.0;
    MaskGranularity granularity = MaskGranularity::per_step_scalar;
    std::uint64_t seed = 0;
    double momentum = 0.0;  // 0 = plain SGD

    void validate() const;
};

/// Mutable training state: step counter, mask stream, momentum buffers, and
/// the running count of steps on which the central tensors actually moved.
/// Single writer; steps are strictly sequential.
struct TrainState {
    TrainState(MpoeExpertBank& bank_ref, MaskedUpdateConfig config);

    MpoeExpertBank* bank;
    MaskedUpdateConfig cfg;
    std::int64_t step = 0;
    std::int64_t central_update_steps = 0;
    bool last_central_updated = false;
    Rng mask_rng;

    // momentum buffers (allocated on demand, mirror the parameter groups)
    bool velocity_ready = false;
    std::array<Tensor, kNumSlots> vel_central;
    std::array<std::vector<std::vector<Tensor>>, kNumSlots> vel_aux;
    std::array<std::vector<Tensor>, kNumSlots> vel_biases;
    Tensor vel_gate;
};

/// One Bernoulli(p) draw: 1 = masked. p=0 and p=1 never consume randomness.
int generate_mask(double mask_prob, Rng& rng);

/// Elementwise Bernoulli(p) mask tensor, drawn in row-major order.
Tensor generate_mask(double mask_prob, const Shape& shape, Rng& rng);

/// Masks for one update step, drawn from the state's stream: one scalar in
/// per_step_scalar mode, one tensor per central slot (slot order) otherwise.
struct StepMask {
    MaskGranularity granularity = MaskGranularity::per_step_scalar;
    int scalar_b = 0;
    std::array<Tensor, kNumSlots> element;

    /// True when the entire central update of this step is dropped, so the
    /// central gradient contraction can be skipped altogether.
    bool central_fully_masked() const;
};

StepMask draw_step_mask(TrainState& state);

/// Apply one update with a pre-drawn mask: central tensors move by
/// -lr * g .* (1 - b), every other group (auxiliaries, biases, gate weights)
/// by the plain -lr * g; bumps the bank version and the step/stat counters.
void apply_masked_step(TrainState& state, const BankGradients& grads, const StepMask& mask);

/// draw_step_mask + apply_masked_step in one call.
void masked_step(TrainState& state, const BankGradients& grads);

/// Inverse-square-root schedule with linear warmup:
/// d_model^-0.5 * min(step^-0.5, step * warmup_steps^-1.5), step >= 1.
double warmup_lr(std::int64_t step, std::size_t d_model, std::int64_t warmup_steps);

/// Plain SGD step for the dense baseline bank (no masking anywhere).
void sgd_step(DenseMoeBank& bank, const DenseBankGradients& grads, double lr);

}  // namespace mpoe
