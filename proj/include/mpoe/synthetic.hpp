// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mpoe/config.hpp"
#include "mpoe/moe_layer.hpp"

namespace mpoe {

/// Teacher-student regression task. The teacher is a frozen dense MoE whose
/// expert weights share a random base matrix per slot plus expert-specific
/// perturbations (mirroring the redundancy MoE experts show in practice);
/// inputs are standard normal, targets are the teacher's outputs plus
/// Gaussian noise. Everything is a pure function of the task seed.
struct SyntheticTask {
    DenseMoeBank teacher;
    Tensor inputs;
    Tensor targets;
};

SyntheticTask build_synthetic_task(const TaskConfig& cfg);

double mse(const Tensor& y, const Tensor& target);
Tensor mse_grad(const Tensor& y, const Tensor& target);

struct TrainCurveRow {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    int central_updated = 0;
};

std::string curve_to_csv(const std::vector<TrainCurveRow>& curve);

struct TrainResult {
    std::vector<TrainCurveRow> curve;
    double initial_loss = 0.0;  // full-dataset MSE before training
    double final_loss = 0.0;    // full-dataset MSE after the last step
    std::int64_t steps = 0;
    std::int64_t central_update_steps = 0;
    bool central_frozen_from_init = false;
    MpoeExpertBank bank;
    MpoeExpertBank init_bank;
};

/// Masked-SGD training of an MPOE bank on the synthetic task. Student init,
/// mask stream, and gate noise all derive from optimizer.seed; data from
/// task.seed.
TrainResult train_mpoe(const ExperimentConfig& cfg);

struct DenseTrainResult {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    DenseMoeBank bank;
};

/// Plain-SGD dense MoE trained on the identical task with the identical
/// student init (replicated dense weights) and seeds; the baseline for the
/// parameter-quality comparison.
DenseTrainResult train_dense_baseline(const ExperimentConfig& cfg);

struct SweepRow {
    std::size_t m = 0;
    std::size_t mpo_params = 0;    // untruncated chain element count, both slots
    std::size_t bank_params = 0;   // shared + n * aux, both slots
    double final_loss = 0.0;
};

/// Re-run training with auto plans for each m in m_list; other settings from
/// the base config. m < 2 entries are rejected.
std::vector<SweepRow> sweep_factorization(const ExperimentConfig& base,
                                          const std::vector<std::size_t>& m_list);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

/// The two plans a config resolves to (explicit or auto).
std::pair<FactorizationPlan, FactorizationPlan> resolve_plans(const ExperimentConfig& cfg);

GateConfig build_student_gate(const ExperimentConfig& cfg, Rng& rng);

}  // namespace mpoe
