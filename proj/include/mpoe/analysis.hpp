// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mpoe/moe_layer.hpp"
#include "mpoe/tensor.hpp"

namespace mpoe {

/// Elementwise difference statistics between one expert's flattened weights
/// (both slots) and a reference expert's. mean is signed; the fractions bin
/// |diff| into [0, 1e-4) and [1e-4, 1.5e-2).
struct VariationStats {
    std::size_t reference_expert = 0;
    std::size_t other_expert = 0;
    double mean = 0.0;
    double std_dev = 0.0;
    double frac_lt_1e4 = 0.0;
    double frac_mid = 0.0;
};

std::vector<VariationStats> expert_variation(const MpoeExpertBank& bank, std::size_t reference);
std::vector<VariationStats> expert_variation(const DenseMoeBank& bank, std::size_t reference);

/// Two-sample test threshold 2*sqrt(K/m)*(1 + sqrt(ln(1/alpha))) for a kernel
/// bounded by K and m samples per side at level alpha.
double mmd_threshold(std::size_t m, double k_sup, double alpha);

/// Kernel for the MMD estimator. rbf uses k(x,y) = exp(-|x-y|^2 / (2*s2))
/// with s2 = bandwidth if given, else the median pairwise squared distance of
/// the pooled samples (median heuristic); sup value is 1. linear is plain dot
/// products.
struct KernelConfig {
    enum class Type { rbf, linear };
    Type type = Type::rbf;
    std::optional<double> bandwidth;

    std::string describe() const;
};

/// Biased MMD estimate sqrt(mean kxx + mean kyy - 2 mean kxy), clamped at 0.
/// Rows of x and y are samples; feature dimensions must match.
double empirical_mmd(const Tensor& x, const Tensor& y, const KernelConfig& kernel = {});

struct MmdReport {
    std::size_t expert_a = 0;
    std::size_t expert_b = 0;
    double threshold = 0.0;
    double empirical = 0.0;
    bool same_distribution = false;
    std::size_t m = 0;
    double alpha = 0.0;
    std::string kernel;
};

/// Parameter-redundancy diagnostics for a bank: pairwise variation stats,
/// MMD of expert outputs over the probe inputs, parameter counts, gamma and
/// the efficiency ratio. Serialization of this struct lives with the rest of
/// the file formats.
struct RedundancyReport {
    std::size_t n_experts = 0;
    std::size_t probes = 0;
    double alpha = 0.05;
    BankParamCounts params;
    std::array<MpoParamCounts, kNumSlots> slot_counts;
    double gamma = 0.0;       // params.shared / params.per_expert
    double efficiency = 0.0;  // efficiency_ratio(n, gamma)
    std::vector<VariationStats> variation;  // vs expert 0
    std::vector<MmdReport> mmd_pairs;       // all i < j expert-output pairs
    std::string threshold_note;
    // filled by the trainer when the report follows a run
    std::int64_t training_steps = -1;
    std::int64_t central_update_steps = -1;
    bool central_frozen_from_init = false;
};

RedundancyReport redundancy_report(const MpoeExpertBank& bank, const Tensor& probe_inputs,
                                   double alpha = 0.05);

}  // namespace mpoe
