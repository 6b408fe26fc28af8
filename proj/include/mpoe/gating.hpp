// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "mpoe/rng.hpp"
#include "mpoe/tensor.hpp"

namespace mpoe {

enum class GateKind { softmax, topk, switch_top1 };

/// Gating network parameters. w_gate is d_model x n_experts; w_noise (same
/// shape) is only consulted when noise_enabled.
struct GateConfig {
    std::size_t n_experts = 1;
    std::size_t k = 1;
    GateKind kind = GateKind::topk;
    Tensor w_gate;
    std::optional<Tensor> w_noise;
    bool noise_enabled = false;

    std::size_t d_model() const { return w_gate.extent(0); }
    void validate() const;
};

/// Dense length-n weight vector plus the sorted support. For top-k gates the
/// weights sum to 1; for switch routing the single nonzero entry carries the
/// winner's (un-renormalized) softmax probability.
struct GateOutput {
    std::vector<double> weights;
    std::vector<std::size_t> selected;
};

/// Numerically stable softmax; -inf entries map to exactly 0.
std::vector<double> softmax(const std::vector<double>& v);

/// Entries outside the top k are set to -inf. Ties keep the lower index.
std::vector<double> keep_top_k(const std::vector<double>& v, std::size_t k);

/// Noisy top-k gate: H(x)_i = (x.W_g)_i + nu_i * softplus((x.W_noise)_i) with
/// nu ~ N(0,1) when noise is enabled, else H(x) = x.W_g; the output weights
/// are softmax(keep_top_k(H(x), k)). Deterministic for a given rng state.
/// When noise_draws is non-null the nu vector used is stored there (empty if
/// noise is off).
GateOutput noisy_topk_gate(const std::vector<double>& x, const GateConfig& cfg, Rng& rng,
                           std::vector<double>* noise_draws = nullptr);

/// Switch routing: exactly one expert (the softmax argmax; ties keep the
/// lower index) with weight equal to its softmax probability.
GateOutput switch_gate(const std::vector<double>& x, const GateConfig& cfg);

/// Logits x.W_g for one input row.
std::vector<double> gate_logits(const std::vector<double>& x, const Tensor& w);

double softplus(double v);

}  // namespace mpoe
