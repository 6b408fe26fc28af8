// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: MPO decomposition of stored tensors, the
// truncation-bound property run, synthetic training with the gradient mask,
// the factorization sweep, and redundancy analysis of checkpoints.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpoe/analysis.hpp"
#include "mpoe/config.hpp"
#include "mpoe/io.hpp"
#include "mpoe/mpo.hpp"
#include "mpoe/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mpoe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

std::vector<std::size_t> parse_size_list(const std::string& s, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            const long v = std::stol(item);
            if (v < 1) throw std::invalid_argument("non-positive");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": bad entry '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
    return out;
}

// "i=3,4,4,4,4;j=4,4,8,6,4"
FactorizationPlan parse_plan_flag(const std::string& s) {
    FactorizationPlan plan;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.rfind("i=", 0) == 0) {
            plan.row_factors = parse_size_list(part.substr(2), "--plan i");
        } else if (part.rfind("j=", 0) == 0) {
            plan.col_factors = parse_size_list(part.substr(2), "--plan j");
        } else {
            throw ConfigError("--plan: expected \"i=..;j=..\"");
        }
    }
    if (plan.row_factors.empty() || plan.col_factors.empty()) {
        throw ConfigError("--plan: both i= and j= are required");
    }
    return plan;
}

int cmd_decompose(const std::string& input, int m_flag, const std::string& plan_flag,
                  const std::string& caps_flag, const std::string& normalize_flag,
                  const std::string& dtype_flag, const std::string& out_dir) {
    const Tensor w = read_tensor_file(input);
    if (w.order() != 2) throw ShapeError("decompose: input tensor must be 2-order");

    FactorizationPlan plan;
    if (!plan_flag.empty()) {
        plan = parse_plan_flag(plan_flag);
    } else {
        if (m_flag < 1) throw ConfigError("decompose: --m or --plan is required");
        plan = plan_factorization(w.extent(0), w.extent(1), static_cast<std::size_t>(m_flag));
    }
    if (!caps_flag.empty()) plan.bond_caps = parse_size_list(caps_flag, "--caps");

    NormalizeMode mode = NormalizeMode::none;
    if (normalize_flag == "balance") {
        mode = NormalizeMode::balance;
    } else if (normalize_flag != "none") {
        throw ConfigError("decompose: --normalize must be none|balance");
    }
    const bool as_f32 = dtype_flag == "f32";
    if (!as_f32 && dtype_flag != "f64") throw ConfigError("decompose: --dtype must be f64|f32");

    MpoFactors f = normalize(decompose(w, plan), mode);
    const Tensor rebuilt = reconstruct(f);
    const double err = frobenius_norm(elementwise_sub(w, rebuilt));
    const MpoParamCounts counts = count_params(f);

    fs::create_directories(out_dir);
    nlohmann::json manifest;
    manifest["plan"]["i"] = plan.row_factors;
    manifest["plan"]["j"] = plan.col_factors;
    if (plan.bond_caps) manifest["plan"]["caps"] = *plan.bond_caps;
    manifest["bond_dims"] =
        std::vector<std::size_t>(f.bond_dims.begin() + 1, f.bond_dims.end() - 1);
    manifest["eps"] = f.truncation_eps;
    manifest["bound"] = truncation_bound(f.truncation_eps);
    manifest["central_index"] = f.central_index;
    manifest["param_counts"]["central"] = counts.central;
    manifest["param_counts"]["auxiliary"] = counts.auxiliary;
    manifest["param_counts"]["gamma"] =
        std::isfinite(counts.gamma) ? nlohmann::json(counts.gamma) : nlohmann::json("inf");
    manifest["reconstruction_error"] = err;
    manifest["input_norm"] = frobenius_norm(w);
    manifest["normalize"] = normalize_flag;

    std::vector<std::string> files;
    for (std::size_t k = 0; k < f.num_tensors(); ++k) {
        const std::string name = "local_" + std::to_string(k) + ".mpot";
        write_tensor_file(fs::path(out_dir) / name, f.locals[k], as_f32);
        files.push_back(name);
    }
    manifest["files"] = files;
    write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

    std::cout << manifest.dump(2) << std::endl;
    return kExitOk;
}

int cmd_verify_bound(int trials, int max_dim, std::uint64_t seed) {
    if (trials < 1 || max_dim < 4) throw ConfigError("verify-bound: need --trials >= 1, --max-dim >= 4");
    std::printf("%-6s %-12s %-10s %-14s %-14s %s\n", "trial", "seed", "shape", "error", "bound",
                "ok");
    bool all_ok = true;
    std::uint64_t bad_seed = 0;
    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(trial);
        Rng rng(trial_seed);

        std::size_t rows = 0, cols = 0, m = 0;
        FactorizationPlan plan;
        std::vector<std::size_t> full;
        for (;;) {  // need at least one bond that can truncate
            rows = 4 + static_cast<std::size_t>(rng.uniform_int(0, max_dim - 4));
            cols = 4 + static_cast<std::size_t>(rng.uniform_int(0, max_dim - 4));
            m = 2 + static_cast<std::size_t>(rng.uniform_int(0, 2));
            plan = plan_factorization(rows, cols, m);
            full = bond_dimensions(plan);
            bool can_cut = false;
            for (std::size_t d : full) can_cut = can_cut || d >= 2;
            if (can_cut) break;
        }
        std::vector<std::size_t> caps;
        bool any_cut = false;
        for (std::size_t d : full) {
            std::size_t cap = 1 + static_cast<std::size_t>(rng.uniform_int(0, d - 1));
            caps.push_back(cap);
            any_cut = any_cut || cap < d;
        }
        if (!any_cut) {  // force a strict truncation somewhere
            for (std::size_t k = 0; k < full.size(); ++k) {
                if (full[k] >= 2) {
                    caps[k] = full[k] - 1;
                    break;
                }
            }
        }
        plan.bond_caps = caps;

        const Tensor w = Tensor::randn({rows, cols}, rng);
        const MpoFactors f = decompose(w, plan);
        const double err = frobenius_norm(elementwise_sub(w, reconstruct(f)));
        const double bound = truncation_bound(f.truncation_eps);
        const bool ok = err <= bound * (1.0 + 1e-8);
        std::printf("%-6d %-12llu %zux%zu/m=%zu %-14.6e %-14.6e %s\n", trial,
                    static_cast<unsigned long long>(trial_seed), rows, cols, m, err, bound,
                    ok ? "yes" : "NO");
        if (!ok && all_ok) {
            all_ok = false;
            bad_seed = trial_seed;
        }
    }
    if (!all_ok) {
        std::printf("bound violated; counterexample seed %llu\n",
                    static_cast<unsigned long long>(bad_seed));
        return kExitViolation;
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const TrainResult result = train_mpoe(cfg);

    const fs::path ckpt_dir = cfg.outputs.checkpoint_path;
    CheckpointMeta meta;
    meta.steps = result.steps;
    meta.central_update_steps = result.central_update_steps;
    meta.central_frozen_from_init = result.central_frozen_from_init;
    save_checkpoint(ckpt_dir, result.bank, meta);
    write_text_file(ckpt_dir / "loss.csv", curve_to_csv(result.curve));

    Rng probe_rng(cfg.task.seed + 17);
    const std::size_t n_probes = std::min<std::size_t>(cfg.task.n_samples, 256);
    const Tensor probes = Tensor::randn({n_probes, cfg.task.d_model}, probe_rng);
    RedundancyReport report = redundancy_report(result.bank, probes);
    report.training_steps = result.steps;
    report.central_update_steps = result.central_update_steps;
    report.central_frozen_from_init = result.central_frozen_from_init;
    write_text_file(cfg.outputs.report_path, to_json(report).dump(2) + "\n");

    std::printf("steps=%lld initial_loss=%.6e final_loss=%.6e central_update_steps=%lld\n",
                static_cast<long long>(result.steps), result.initial_loss, result.final_loss,
                static_cast<long long>(result.central_update_steps));
    std::printf("checkpoint=%s report=%s\n", ckpt_dir.string().c_str(),
                cfg.outputs.report_path.c_str());
    return kExitOk;
}

int cmd_sweep_m(const std::string& config_path, const std::string& m_list_flag,
                const std::string& out_path) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const std::vector<std::size_t> m_list = parse_size_list(m_list_flag, "--m-list");
    const std::vector<SweepRow> rows = sweep_factorization(cfg, m_list);
    const std::string csv = sweep_to_csv(rows);
    std::cout << csv;
    if (!out_path.empty()) write_text_file(out_path, csv);
    return kExitOk;
}

int cmd_analyze(const std::string& ckpt_dir, int probes, std::uint64_t seed,
                const std::string& out_path) {
    if (probes < 2) throw ConfigError("analyze: --probes must be >= 2");
    const LoadedCheckpoint loaded = load_checkpoint(ckpt_dir);

    Rng rng(seed);
    const Tensor probe_inputs =
        Tensor::randn({static_cast<std::size_t>(probes), loaded.bank.d_model}, rng);
    RedundancyReport report = redundancy_report(loaded.bank, probe_inputs);
    report.training_steps = loaded.meta.steps;
    report.central_update_steps = loaded.meta.central_update_steps;
    report.central_frozen_from_init = loaded.meta.central_frozen_from_init;

    const std::string text = to_json(report).dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text_file(out_path, text);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MPO-factorized mixture-of-experts toolkit"};
    app.require_subcommand(1);

    // decompose
    auto* dec = app.add_subcommand("decompose", "MPO-decompose a stored matrix");
    std::string dec_input, dec_plan, dec_caps, dec_out;
    std::string dec_normalize = "none", dec_dtype = "f64";
    int dec_m = 0;
    dec->add_option("--input", dec_input, "input tensor file (2-order)")->required();
    dec->add_option("--m", dec_m, "number of local tensors (auto plan)");
    dec->add_option("--plan", dec_plan, "explicit plan \"i=..;j=..\"");
    dec->add_option("--caps", dec_caps, "bond caps, comma separated (m-1 entries)");
    dec->add_option("--normalize", dec_normalize, "none|balance");
    dec->add_option("--dtype", dec_dtype, "payload type for written tensors: f64|f32");
    dec->add_option("--out", dec_out, "output directory")->required();

    // verify-bound
    auto* ver = app.add_subcommand("verify-bound", "randomized truncation-bound check");
    int ver_trials = 200, ver_max_dim = 64;
    std::uint64_t ver_seed = 7;
    ver->add_option("--trials", ver_trials, "number of random trials");
    ver->add_option("--max-dim", ver_max_dim, "maximum matrix dimension");
    ver->add_option("--seed", ver_seed, "base seed");

    // train
    auto* trn = app.add_subcommand("train", "train an expert bank on the synthetic task");
    std::string trn_config;
    trn->add_option("--config", trn_config, "experiment config JSON")->required();

    // sweep-m
    auto* swp = app.add_subcommand("sweep-m", "factorization-length sweep");
    std::string swp_config, swp_mlist = "3,5,7,9", swp_out;
    swp->add_option("--config", swp_config, "experiment config JSON")->required();
    swp->add_option("--m-list", swp_mlist, "comma separated chain lengths");
    swp->add_option("--out", swp_out, "also write the table to this CSV file");

    // analyze
    auto* ana = app.add_subcommand("analyze", "redundancy report for a checkpoint");
    std::string ana_ckpt, ana_out;
    int ana_probes = 256;
    std::uint64_t ana_seed = 1;
    ana->add_option("--checkpoint", ana_ckpt, "checkpoint directory")->required();
    ana->add_option("--probes", ana_probes, "number of probe inputs");
    ana->add_option("--seed", ana_seed, "probe seed");
    ana->add_option("--out", ana_out, "also write the report to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (dec->parsed()) {
            return cmd_decompose(dec_input, dec_m, dec_plan, dec_caps, dec_normalize, dec_dtype,
                                 dec_out);
        }
        if (ver->parsed()) return cmd_verify_bound(ver_trials, ver_max_dim, ver_seed);
        if (trn->parsed()) return cmd_train(trn_config);
        if (swp->parsed()) return cmd_sweep_m(swp_config, swp_mlist, swp_out);
        if (ana->parsed()) return cmd_analyze(ana_ckpt, ana_probes, ana_seed, ana_out);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << std::endl;
        return kExitIo;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    }
    return kExitUsage;
}
