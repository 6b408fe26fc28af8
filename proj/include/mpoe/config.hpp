// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "mpoe/mpo.hpp"
#include "mpoe/optimizer.hpp"

namespace mpoe {

/// Synthetic teacher-student task settings. All randomness flows from the
/// explicit seed.
struct TaskConfig {
    std::size_t teacher_experts = 4;
    std::size_t d_model = 16;
    std::size_t d_ff = 32;
    std::size_t n_samples = 256;
    double noise_std = 0.01;
    std::uint64_t seed = 1;
};

struct GateSpec {
    std::string kind = "topk";  // softmax | topk | switch
    std::size_t k = 2;
    bool noise = false;
};

struct ModelConfig {
    std::size_t n_experts = 4;
    std::size_t m = 5;
    // absent -> auto plans from (d_model, d_ff, m)
    std::optional<FactorizationPlan> plan_w1;
    std::optional<FactorizationPlan> plan_w2;
    GateSpec gate;
};

struct WarmupSpec {
    std::size_t d_model = 512;
    std::int64_t warmup_steps = 500;
};

struct OptimizerConfig {
    std::optional<double> lr = 0.05;     // exactly one of lr / warmup
    std::optional<WarmupSpec> warmup;
    double p_b = 0.2;
    MaskGranularity granularity = MaskGranularity::per_step_scalar;
    double momentum = 0.0;
    std::size_t epochs = 250;
    std::size_t batch_size = 32;
    std::uint64_t seed = 2;
};

struct OutputsConfig {
    std::string report_path = "report.json";
    std::string checkpoint_path = "checkpoint";
};

struct ExperimentConfig {
    TaskConfig task;
    ModelConfig model;
    OptimizerConfig optimizer;
    OutputsConfig outputs;

    static ExperimentConfig defaults();
    void validate() const;
    std::size_t total_steps() const {
        return optimizer.epochs * (task.n_samples / optimizer.batch_size);
    }
};

/// Strict parser: unknown keys anywhere in the document are rejected, seeds
/// must be present explicitly. Throws ConfigError.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace mpoe
