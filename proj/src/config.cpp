// SPDX-License-Identifier: Apache-2.0
#include "mpoe/config.hpp"

#include <fstream>
#include <set>

namespace mpoe {

namespace {

void check_keys(const nlohmann::json& j, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
        }
    }
}

template <typename T>
T require(const nlohmann::json& j, const std::string& where, const std::string& key) {
    if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& where, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

FactorizationPlan parse_plan(const nlohmann::json& j, const std::string& where) {
    check_keys(j, where, {"i", "j"});
    FactorizationPlan plan;
    plan.row_factors = require<std::vector<std::size_t>>(j, where, "i");
    plan.col_factors = require<std::vector<std::size_t>>(j, where, "j");
    plan.validate();
    return plan;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

void ExperimentConfig::validate() const {
    if (task.teacher_experts == 0) throw ConfigError("task: teacher_experts must be >= 1");
    if (task.d_model == 0 || task.d_ff == 0) throw ConfigError("task: dimensions must be >= 1");
    if (task.n_samples == 0) throw ConfigError("task: n_samples must be >= 1");
    if (task.noise_std < 0.0) throw ConfigError("task: noise_std must be >= 0");

    if (model.n_experts == 0) throw ConfigError("model: n_experts must be >= 1");
    if (model.m < 2) throw ConfigError("model: m must be >= 2 (a single local tensor cannot share)");
    if (model.gate.kind != "softmax" && model.gate.kind != "topk" && model.gate.kind != "switch") {
        throw ConfigError("model.gate: kind must be softmax | topk | switch");
    }
    if (model.gate.k == 0 || model.gate.k > model.n_experts) {
        throw ConfigError("model.gate: k must be in [1, n_experts]");
    }
    if (model.plan_w1) {
        if (model.plan_w1->rows() != task.d_model || model.plan_w1->cols() != task.d_ff) {
            throw ConfigError("model.plans.w1 does not factor d_model x d_ff");
        }
    }
    if (model.plan_w2) {
        if (model.plan_w2->rows() != task.d_ff || model.plan_w2->cols() != task.d_model) {
            throw ConfigError("model.plans.w2 does not factor d_ff x d_model");
        }
    }

    if (optimizer.lr.has_value() == optimizer.warmup.has_value()) {
        throw ConfigError("optimizer: exactly one of lr / warmup must be set");
    }
    if (optimizer.lr && *optimizer.lr <= 0.0) throw ConfigError("optimizer: lr must be > 0");
    if (optimizer.p_b < 0.0 || optimizer.p_b > 1.0) throw ConfigError("optimizer: p_b in [0,1]");
    if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
        throw ConfigError("optimizer: momentum must be in [0,1)");
    }
    if (optimizer.epochs == 0) throw ConfigError("optimizer: epochs must be >= 1");
    if (optimizer.batch_size == 0 || optimizer.batch_size > task.n_samples) {
        throw ConfigError("optimizer: batch_size must be in [1, n_samples]");
    }
    if (outputs.report_path.empty() || outputs.checkpoint_path.empty()) {
        throw ConfigError("outputs: report_path and checkpoint_path are required");
    }
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    check_keys(j, "config", {"task", "model", "optimizer", "outputs"});
    ExperimentConfig cfg;

    const nlohmann::json& jt = j.contains("task") ? j.at("task") : nlohmann::json::object();
    check_keys(jt, "task", {"teacher_experts", "d_model", "d_ff", "n_samples", "noise_std", "seed"});
    cfg.task.teacher_experts = get_or(jt, "task", "teacher_experts", cfg.task.teacher_experts);
    cfg.task.d_model = get_or(jt, "task", "d_model", cfg.task.d_model);
    cfg.task.d_ff = get_or(jt, "task", "d_ff", cfg.task.d_ff);
    cfg.task.n_samples = get_or(jt, "task", "n_samples", cfg.task.n_samples);
    cfg.task.noise_std = get_or(jt, "task", "noise_std", cfg.task.noise_std);
    cfg.task.seed = require<std::uint64_t>(jt, "task", "seed");

    const nlohmann::json& jm = j.contains("model") ? j.at("model") : nlohmann::json::object();
    check_keys(jm, "model", {"n_experts", "m", "plans", "gate"});
    cfg.model.n_experts = get_or(jm, "model", "n_experts", cfg.model.n_experts);
    cfg.model.m = get_or(jm, "model", "m", cfg.model.m);
    if (jm.contains("plans") && !jm.at("plans").is_string()) {
        const auto& jp = jm.at("plans");
        check_keys(jp, "model.plans", {"w1", "w2"});
        cfg.model.plan_w1 = parse_plan(jp.at("w1"), "model.plans.w1");
        cfg.model.plan_w2 = parse_plan(jp.at("w2"), "model.plans.w2");
    } else if (jm.contains("plans") && jm.at("plans").get<std::string>() != "auto") {
        throw ConfigError("model.plans: expected \"auto\" or {w1, w2}");
    }
    if (jm.contains("gate")) {
        const auto& jg = jm.at("gate");
        check_keys(jg, "model.gate", {"kind", "k", "noise"});
        cfg.model.gate.kind = get_or<std::string>(jg, "model.gate", "kind", cfg.model.gate.kind);
        cfg.model.gate.k = get_or(jg, "model.gate", "k", cfg.model.gate.k);
        cfg.model.gate.noise = get_or(jg, "model.gate", "noise", cfg.model.gate.noise);
    }

    const nlohmann::json& jo = j.contains("optimizer") ? j.at("optimizer") : nlohmann::json::object();
    check_keys(jo, "optimizer",
               {"lr", "warmup", "p_b", "granularity", "momentum", "epochs", "batch_size", "seed"});
    if (jo.contains("lr") && jo.contains("warmup")) {
        throw ConfigError("optimizer: lr and warmup are mutually exclusive");
    }
    if (jo.contains("warmup")) {
        const auto& jw = jo.at("warmup");
        check_keys(jw, "optimizer.warmup", {"d_model", "warmup_steps"});
        WarmupSpec warm;
        warm.d_model = require<std::size_t>(jw, "optimizer.warmup", "d_model");
        warm.warmup_steps = require<std::int64_t>(jw, "optimizer.warmup", "warmup_steps");
        cfg.optimizer.warmup = warm;
        cfg.optimizer.lr.reset();
    } else {
        cfg.optimizer.lr = get_or(jo, "optimizer", "lr", *cfg.optimizer.lr);
    }
    cfg.optimizer.p_b = get_or(jo, "optimizer", "p_b", cfg.optimizer.p_b);
    const std::string gran =
        get_or<std::string>(jo, "optimizer", "granularity", "per_step_scalar");
    if (gran == "per_step_scalar") {
        cfg.optimizer.granularity = MaskGranularity::per_step_scalar;
    } else if (gran == "per_element") {
        cfg.optimizer.granularity = MaskGranularity::per_element;
    } else {
        throw ConfigError("optimizer: granularity must be per_step_scalar | per_element");
    }
    cfg.optimizer.momentum = get_or(jo, "optimizer", "momentum", cfg.optimizer.momentum);
    cfg.optimizer.epochs = get_or(jo, "optimizer", "epochs", cfg.optimizer.epochs);
    cfg.optimizer.batch_size = get_or(jo, "optimizer", "batch_size", cfg.optimizer.batch_size);
    cfg.optimizer.seed = require<std::uint64_t>(jo, "optimizer", "seed");

    const nlohmann::json& jout = j.contains("outputs") ? j.at("outputs") : nlohmann::json::object();
    check_keys(jout, "outputs", {"report_path", "checkpoint_path"});
    cfg.outputs.report_path = get_or<std::string>(jout, "outputs", "report_path", cfg.outputs.report_path);
    cfg.outputs.checkpoint_path =
        get_or<std::string>(jout, "outputs", "checkpoint_path", cfg.outputs.checkpoint_path);

    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_experiment_config(j);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["task"] = {{"teacher_experts", cfg.task.teacher_experts},
                 {"d_model", cfg.task.d_model},
                 {"d_ff", cfg.task.d_ff},
                 {"n_samples", cfg.task.n_samples},
                 {"noise_std", cfg.task.noise_std},
                 {"seed", cfg.task.seed}};
    j["model"] = {{"n_experts", cfg.model.n_experts},
                  {"m", cfg.model.m},
                  {"gate",
                   {{"kind", cfg.model.gate.kind},
                    {"k", cfg.model.gate.k},
                    {"noise", cfg.model.gate.noise}}}};
    if (cfg.model.plan_w1 && cfg.model.plan_w2) {
        j["model"]["plans"] = {{"w1",
                                {{"i", cfg.model.plan_w1->row_factors},
                                 {"j", cfg.model.plan_w1->col_factors}}},
                               {"w2",
                                {{"i", cfg.model.plan_w2->row_factors},
                                 {"j", cfg.model.plan_w2->col_factors}}}};
    } else {
        j["model"]["plans"] = "auto";
    }
    j["optimizer"] = {{"p_b", cfg.optimizer.p_b},
                      {"granularity", cfg.optimizer.granularity == MaskGranularity::per_element
                                          ? "per_element"
                                          : "per_step_scalar"},
                      {"momentum", cfg.optimizer.momentum},
                      {"epochs", cfg.optimizer.epochs},
                      {"batch_size", cfg.optimizer.batch_size},
                      {"seed", cfg.optimizer.seed}};
    if (cfg.optimizer.lr) {
        j["optimizer"]["lr"] = *cfg.optimizer.lr;
    } else {
        j["optimizer"]["warmup"] = {{"d_model", cfg.optimizer.warmup->d_model},
                                    {"warmup_steps", cfg.optimizer.warmup->warmup_steps}};
    }
    j["outputs"] = {{"report_path", cfg.outputs.report_path},
                    {"checkpoint_path", cfg.outputs.checkpoint_path}};
    return j;
}

}  // namespace mpoe
