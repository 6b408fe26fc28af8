// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mpoe/gating.hpp"
#include "mpoe/mpo.hpp"
#include "mpoe/tensor.hpp"

namespace mpoe {

/// The two weight slots of an FFN expert: w1 (d_model x d_ff) and
/// w2 (d_ff x d_model).
inline constexpr std::size_t kSlotW1 = 0;
inline constexpr std::size_t kSlotW2 = 1;
inline constexpr std::size_t kNumSlots = 2;

/// Expert bank with one shared central tensor per weight slot and
/// expert-specific auxiliary tensors. Expert i's slot weight is the chain
/// reconstruction of (auxiliaries of i with the shared central inserted at
/// the central position). Biases stay dense and per-expert.
struct MpoeExpertBank {
    std::size_t n_experts = 0;
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::array<FactorizationPlan, kNumSlots> plans;
    std::array<std::size_t, kNumSlots> central_index{};
    std::array<Tensor, kNumSlots> shared_central;
    // aux[slot][expert]: the m-1 non-central locals in chain order.
    std::array<std::vector<std::vector<Tensor>>, kNumSlots> aux;
    // biases[slot][expert]: length d_ff for slot w1, d_model for slot w2.
    std::array<std::vector<Tensor>, kNumSlots> biases;
    GateConfig gate;
    // Bumped on every parameter update; traces remember the version they saw.
    std::uint64_t version = 0;
};

/// Plain MoE baseline: every expert owns full dense weight matrices.
struct DenseMoeBank {
    std::size_t n_experts = 0;
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::array<std::vector<Tensor>, kNumSlots> weights;
    std::array<std::vector<Tensor>, kNumSlots> biases;
    GateConfig gate;
    std::uint64_t version = 0;
};

/// Per-row routing record. gate_probs is dense (length n): the masked
/// softmax for top-k gates, the full softmax for switch routing.
struct RowRoute {
    std::vector<double> gate_probs;
    std::vector<std::size_t> selected;
    std::vector<double> noise_draws;  // empty when gate noise is off
};

struct RoutingTrace {
    std::vector<RowRoute> rows;
    std::uint64_t bank_version = 0;
};

struct ForwardResult {
    Tensor y;
    RoutingTrace trace;
};

/// Gradients for every parameter group of an MpoeExpertBank plus the input.
struct BankGradients {
    std::array<Tensor, kNumSlots> shared_central;
    std::array<std::vector<std::vector<Tensor>>, kNumSlots> aux;
    std::array<std::vector<Tensor>, kNumSlots> biases;
    Tensor gate_weights;
    Tensor x;
};

/// Gradients for the dense baseline bank.
struct DenseBankGradients {
    std::array<std::vector<Tensor>, kNumSlots> weights;
    std::array<std::vector<Tensor>, kNumSlots> biases;
    Tensor gate_weights;
    Tensor x;
};

/// Decompose both slot matrices (no truncation, no normalization), share each
/// central tensor, replicate the auxiliary set once per expert, zero biases.
MpoeExpertBank init_from_dense(const Tensor& w1, const Tensor& w2,
                               const FactorizationPlan& plan1, const FactorizationPlan& plan2,
                               std::size_t n_experts, GateConfig gate);

/// Chain of expert i's slot: auxiliaries with the shared central inserted.
MpoFactors assemble_factors(const MpoeExpertBank& bank, std::size_t slot, std::size_t expert);

/// Reconstructed dense weight matrix of one expert's slot.
Tensor expert_weight(const MpoeExpertBank& bank, std::size_t slot, std::size_t expert);

/// Dense baseline bank holding the reconstructed weights (and copies of the
/// biases and gate) of an MPOE bank.
DenseMoeBank densify(const MpoeExpertBank& bank);

/// One expert's FFN applied to every row of x, bypassing the gate.
Tensor expert_forward(const MpoeExpertBank& bank, std::size_t expert, const Tensor& x);

ForwardResult forward(const MpoeExpertBank& bank, const Tensor& x, Rng& rng);
ForwardResult forward(const DenseMoeBank& bank, const Tensor& x, Rng& rng);

/// Reverse pass for the trace produced by the matching forward. Expert-weight
/// gradients are pushed through the chain contraction (the weight is
/// multilinear in its locals); the shared-central gradient accumulates over
/// experts in index order so results are bit-reproducible under any thread
/// count. Throws std::logic_error if the bank changed since the forward.
/// With need_central_grads=false the shared-central contractions are skipped
/// and those gradients stay zero (used when a scalar mask drops the whole
/// central update anyway).
BankGradients backward(const MpoeExpertBank& bank, const Tensor& x, const Tensor& grad_y,
                       const RoutingTrace& trace, bool need_central_grads = true);

/// Reverse pass for the dense baseline: per-expert FFN backprop plus the gate
/// path, no chain mapping.
DenseBankGradients backward(const DenseMoeBank& bank, const Tensor& x, const Tensor& grad_y,
                            const RoutingTrace& trace);

/// (n + gamma) / (n * (gamma + 1)): MPOE-to-MoE expert parameter ratio.
double efficiency_ratio(std::size_t n_experts, double gamma);

struct BankParamCounts {
    std::size_t shared = 0;        // central tensors across slots
    std::size_t per_expert = 0;    // auxiliary tensors per expert across slots
    std::size_t total = 0;         // shared + n * per_expert (chain parameters)
    std::size_t dense_equivalent_total = 0;  // n * (shared + per_expert)
    std::size_t bias_params = 0;
    std::size_t gate_params = 0;
};

BankParamCounts bank_param_counts(const MpoeExpertBank& bank);
BankParamCounts bank_param_counts(const DenseMoeBank& bank);

/// Whole-model parameter arithmetic for an n_layers transformer whose FFN
/// slots follow the given plans. moe_total adds n dense experts per layer on
/// top of the base; mpoe_total replaces each layer's FFN with a shared-central
/// bank of n experts. Weight matrices only; bias terms are ignored.
struct ScaleAccounting {
    double base_total = 0.0;
    double moe_total = 0.0;
    double mpoe_total = 0.0;
};

ScaleAccounting transformer_scale_accounting(double base_total, std::size_t n_layers,
                                             std::size_t n_experts,
                                             const FactorizationPlan& plan1,
                                             const FactorizationPlan& plan2);

}  // namespace mpoe

namespace mpoe::reference {

/// Serial per-row forward: same math as mpoe::forward but one row and one
/// expert at a time with naive loops. Oracle for the batched kernels.
ForwardResult moe_forward(const DenseMoeBank& bank, const Tensor& x, Rng& rng);

}  // namespace mpoe::reference
