// SPDX-License-Identifier: Apache-2.0
#include "mpoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mpoe {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void GateConfig::validate() const {
    if (n_experts == 0) throw ConfigError("gate: n_experts must be >= 1");
    if (k == 0 || k > n_experts) throw ConfigError("gate: k must be in [1, n_experts]");
    if (w_gate.order() != 2 || w_gate.extent(1) != n_experts) {
        throw ConfigError("gate: w_gate must be d_model x n_experts");
    }
    if (noise_enabled) {
        if (!w_noise) throw ConfigError("gate: noise enabled but w_noise missing");
        if (!w_noise->same_shape(w_gate)) throw ConfigError("gate: w_noise shape mismatch");
    }
}

double softplus(double v) {
    // log(1 + e^v) without overflow for large v
    if (v > 30.0) return v;
    return std::log1p(std::exp(v));
}

std::vector<double> softmax(const std::vector<double>& v) {
    double hi = kNegInf;
    for (double x : v) hi = std::max(hi, x);
    std::vector<double> out(v.size(), 0.0);
    if (hi == kNegInf) return out;
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == kNegInf) continue;
        out[i] = std::exp(v[i] - hi);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

std::vector<double> keep_top_k(const std::vector<double>& v, std::size_t k) {
    if (k == 0 || k > v.size()) throw ConfigError("keep_top_k: k out of range");
    if (k == v.size()) return v;
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    std::vector<double> out(v.size(), kNegInf);
    for (std::size_t r = 0; r < k; ++r) out[idx[r]] = v[idx[r]];
    return out;
}

std::vector<double> gate_logits(const std::vector<double>& x, const Tensor& w) {
    const std::size_t d = w.extent(0), n = w.extent(1);
    if (x.size() != d) throw ShapeError("gate: input length does not match w rows");
    std::vector<double> logits(n, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        const double xv = x[r];
        const double* row = w.data().data() + r * n;
        for (std::size_t c = 0; c < n; ++c) logits[c] += xv * row[c];
    }
    return logits;
}

GateOutput noisy_topk_gate(const std::vector<double>& x, const GateConfig& cfg, Rng& rng,
                           std::vector<double>* noise_draws) {
    cfg.validate();
    std::vector<double> h = gate_logits(x, cfg.w_gate);
    if (noise_draws) noise_draws->clear();
    if (cfg.noise_enabled) {
        const std::vector<double> noise_logits = gate_logits(x, *cfg.w_noise);
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double nu = rng.normal();
            if (noise_draws) noise_draws->push_back(nu);
            h[i] += nu * softplus(noise_logits[i]);
        }
    }
    const std::size_t k = cfg.kind == GateKind::softmax ? cfg.n_experts : cfg.k;
    GateOutput out;
    out.weights = softmax(keep_top_k(h, k));
    for (std::size_t i = 0; i < out.weights.size(); ++i) {
        if (out.weights[i] > 0.0) out.selected.push_back(i);
    }
    return out;
}

GateOutput switch_gate(const std::vector<double>& x, const GateConfig& cfg) {
    cfg.validate();
    const std::vector<double> probs = softmax(gate_logits(x, cfg.w_gate));
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[best]) best = i;
    }
    GateOutput out;
    out.weights.assign(cfg.n_experts, 0.0);
    out.weights[best] = probs[best];
    out.selected = {best};
    return out;
}

}  // namespace mpoe
