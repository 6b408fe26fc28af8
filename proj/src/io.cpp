// SPDX-License-Identifier: Apache-2.0
#include "mpoe/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace mpoe {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'O', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

GateKind gate_kind_from_string(const std::string& s) {
    if (s == "softmax") return GateKind::softmax;
    if (s == "topk") return GateKind::topk;
    if (s == "switch") return GateKind::switch_top1;
    throw IoError("manifest: unknown gate kind '" + s + "'");
}

std::string gate_kind_to_string(GateKind kind) {
    switch (kind) {
        case GateKind::softmax: return "softmax";
        case GateKind::topk: return "topk";
        case GateKind::switch_top1: return "switch";
    }
    throw IoError("manifest: bad gate kind value");
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const Tensor& t, bool as_f32) {
    std::string buf;
    buf.reserve(4 + 4 + 2 + 8 * t.order() + t.size() * (as_f32 ? 4 : 8));
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    buf.push_back(as_f32 ? char(1) : char(0));
    if (t.order() > 255) throw IoError("tensor order exceeds the format limit");
    buf.push_back(static_cast<char>(t.order()));
    for (std::size_t e : t.shape()) put_u64(buf, e);
    if (as_f32) {
        for (double v : t.data()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            put_u32(buf, bits);
        }
    } else {
        for (double v : t.data()) put_u64(buf, std::bit_cast<std::uint64_t>(v));
    }
    atomic_write(path, buf);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t len = bytes.size();

    if (len < 10 || std::memcmp(p, kMagic, 4) != 0) {
        throw IoError("not a tensor file (bad magic): " + path.string());
    }
    const std::uint32_t version = get_u32(p + 4);
    if (version != kVersion) {
        throw IoError("unsupported tensor file version " + std::to_string(version));
    }
    const unsigned dtype = p[8];
    if (dtype > 1) throw IoError("unknown dtype code " + std::to_string(dtype));
    const unsigned ndim = p[9];
    const std::size_t header = 10 + 8 * std::size_t(ndim);
    if (len < header) throw IoError("truncated tensor header: " + path.string());

    Shape shape(ndim);
    std::size_t count = 1;
    for (unsigned i = 0; i < ndim; ++i) {
        shape[i] = static_cast<std::size_t>(get_u64(p + 10 + 8 * i));
        if (shape[i] == 0) throw IoError("zero extent in tensor file");
        count *= shape[i];
    }
    const std::size_t elem = dtype == 0 ? 8 : 4;
    if (len != header + count * elem) {
        throw IoError("payload length mismatch in " + path.string());
    }

    std::vector<double> data(count);
    const unsigned char* payload = p + header;
    if (dtype == 0) {
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = std::bit_cast<double>(get_u64(payload + 8 * i));
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            data[i] = static_cast<double>(std::bit_cast<float>(get_u32(payload + 4 * i)));
        }
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    atomic_write(path, content);
}

void save_checkpoint(const std::filesystem::path& dir, const MpoeExpertBank& bank,
                     const CheckpointMeta& meta) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["n_experts"] = bank.n_experts;
    manifest["d_model"] = bank.d_model;
    manifest["d_ff"] = bank.d_ff;
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        nlohmann::json js;
        js["row_factors"] = bank.plans[slot].row_factors;
        js["col_factors"] = bank.plans[slot].col_factors;
        js["central_index"] = bank.central_index[slot];
        manifest["plans"].push_back(js);
    }
    manifest["gate"]["kind"] = gate_kind_to_string(bank.gate.kind);
    manifest["gate"]["k"] = bank.gate.k;
    manifest["gate"]["noise"] = bank.gate.noise_enabled;
    manifest["training"]["steps"] = meta.steps;
    manifest["training"]["central_update_steps"] = meta.central_update_steps;
    manifest["training"]["central_frozen_from_init"] = meta.central_frozen_from_init;

    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        const std::string tag = slot == kSlotW1 ? "w1" : "w2";
        write_tensor_file(dir / ("central_" + tag + ".mpot"), bank.shared_central[slot]);
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            for (std::size_t a = 0; a < bank.aux[slot][i].size(); ++a) {
                write_tensor_file(dir / (tag + "_e" + std::to_string(i) + "_a" +
                                         std::to_string(a) + ".mpot"),
                                  bank.aux[slot][i][a]);
            }
            write_tensor_file(dir / (tag + "_e" + std::to_string(i) + "_bias.mpot"),
                              bank.biases[slot][i]);
        }
    }
    write_tensor_file(dir / "gate_w.mpot", bank.gate.w_gate);
    if (bank.gate.w_noise) write_tensor_file(dir / "gate_noise_w.mpot", *bank.gate.w_noise);

    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("missing checkpoint manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }

    LoadedCheckpoint loaded;
    MpoeExpertBank& bank = loaded.bank;
    try {
        if (manifest.at("format_version").get<int>() != 1) {
            throw IoError("unsupported checkpoint format version");
        }
        bank.n_experts = manifest.at("n_experts").get<std::size_t>();
        bank.d_model = manifest.at("d_model").get<std::size_t>();
        bank.d_ff = manifest.at("d_ff").get<std::size_t>();
        for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
            const auto& js = manifest.at("plans").at(slot);
            bank.plans[slot].row_factors = js.at("row_factors").get<std::vector<std::size_t>>();
            bank.plans[slot].col_factors = js.at("col_factors").get<std::vector<std::size_t>>();
            bank.central_index[slot] = js.at("central_index").get<std::size_t>();
        }
        bank.gate.kind = gate_kind_from_string(manifest.at("gate").at("kind").get<std::string>());
        bank.gate.k = manifest.at("gate").at("k").get<std::size_t>();
        bank.gate.noise_enabled = manifest.at("gate").at("noise").get<bool>();
        bank.gate.n_experts = bank.n_experts;
        const auto& training = manifest.at("training");
        loaded.meta.steps = training.at("steps").get<std::int64_t>();
        loaded.meta.central_update_steps = training.at("central_update_steps").get<std::int64_t>();
        loaded.meta.central_frozen_from_init = training.at("central_frozen_from_init").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }

    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        const std::string tag = slot == kSlotW1 ? "w1" : "w2";
        bank.shared_central[slot] = read_tensor_file(dir / ("central_" + tag + ".mpot"));
        const std::size_t n_aux = bank.plans[slot].num_tensors() - 1;
        bank.aux[slot].resize(bank.n_experts);
        bank.biases[slot].resize(bank.n_experts);
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            bank.aux[slot][i].clear();
            for (std::size_t a = 0; a < n_aux; ++a) {
                bank.aux[slot][i].push_back(read_tensor_file(
                    dir / (tag + "_e" + std::to_string(i) + "_a" + std::to_string(a) + ".mpot")));
            }
            bank.biases[slot][i] =
                read_tensor_file(dir / (tag + "_e" + std::to_string(i) + "_bias.mpot"));
        }
    }
    bank.gate.w_gate = read_tensor_file(dir / "gate_w.mpot");
    if (std::filesystem::exists(dir / "gate_noise_w.mpot")) {
        bank.gate.w_noise = read_tensor_file(dir / "gate_noise_w.mpot");
    }
    bank.gate.validate();
    // sanity: assembled chains must be structurally valid
    for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
        for (std::size_t i = 0; i < bank.n_experts; ++i) {
            assemble_factors(bank, slot, i);
        }
    }
    return loaded;
}

nlohmann::json to_json(const VariationStats& v) {
    return {{"reference_expert", v.reference_expert}, {"other_expert", v.other_expert},
            {"mean", v.mean},                         {"std_dev", v.std_dev},
            {"frac_lt_1e4", v.frac_lt_1e4},           {"frac_mid", v.frac_mid}};
}

nlohmann::json to_json(const MmdReport& m) {
    return {{"expert_a", m.expert_a},
            {"expert_b", m.expert_b},
            {"threshold", m.threshold},
            {"empirical", m.empirical},
            {"same_distribution", m.same_distribution},
            {"m", m.m},
            {"alpha", m.alpha},
            {"kernel", m.kernel}};
}

nlohmann::json to_json(const BankParamCounts& c) {
    return {{"shared", c.shared},
            {"per_expert", c.per_expert},
            {"total", c.total},
            {"dense_equivalent_total", c.dense_equivalent_total},
            {"bias_params", c.bias_params},
            {"gate_params", c.gate_params}};
}

nlohmann::json to_json(const MpoParamCounts& c) {
    nlohmann::json j{{"central", c.central}, {"auxiliary", c.auxiliary}};
    j["gamma"] = std::isfinite(c.gamma) ? nlohmann::json(c.gamma) : nlohmann::json("inf");
    return j;
}

nlohmann::json to_json(const RedundancyReport& rep) {
    nlohmann::json j;
    j["n_experts"] = rep.n_experts;
    j["probes"] = rep.probes;
    j["alpha"] = rep.alpha;
    j["param_counts"] = to_json(rep.params);
    j["slot_counts"] = {to_json(rep.slot_counts[0]), to_json(rep.slot_counts[1])};
    j["gamma"] = rep.gamma;
    j["efficiency_ratio"] = rep.efficiency;
    j["variation"] = nlohmann::json::array();
    for (const auto& v : rep.variation) j["variation"].push_back(to_json(v));
    j["mmd"] = nlohmann::json::array();
    for (const auto& m : rep.mmd_pairs) j["mmd"].push_back(to_json(m));
    j["threshold_note"] = rep.threshold_note;
    j["training"] = {{"steps", rep.training_steps},
                     {"central_update_steps", rep.central_update_steps},
                     {"central_frozen_from_init", rep.central_frozen_from_init}};
    return j;
}

RedundancyReport redundancy_report_from_json(const nlohmann::json& j) {
    RedundancyReport rep;
    try {
        rep.n_experts = j.at("n_experts").get<std::size_t>();
        rep.probes = j.at("probes").get<std::size_t>();
        rep.alpha = j.at("alpha").get<double>();
        const auto& pc = j.at("param_counts");
        rep.params.shared = pc.at("shared").get<std::size_t>();
        rep.params.per_expert = pc.at("per_expert").get<std::size_t>();
        rep.params.total = pc.at("total").get<std::size_t>();
        rep.params.dense_equivalent_total = pc.at("dense_equivalent_total").get<std::size_t>();
        rep.params.bias_params = pc.at("bias_params").get<std::size_t>();
        rep.params.gate_params = pc.at("gate_params").get<std::size_t>();
        for (std::size_t slot = 0; slot < kNumSlots; ++slot) {
            const auto& sc = j.at("slot_counts").at(slot);
            rep.slot_counts[slot].central = sc.at("central").get<std::size_t>();
            rep.slot_counts[slot].auxiliary = sc.at("auxiliary").get<std::size_t>();
            rep.slot_counts[slot].gamma =
                sc.at("gamma").is_string() ? std::numeric_limits<double>::infinity()
                                           : sc.at("gamma").get<double>();
        }
        rep.gamma = j.at("gamma").get<double>();
        rep.efficiency = j.at("efficiency_ratio").get<double>();
        for (const auto& vj : j.at("variation")) {
            VariationStats v;
            v.reference_expert = vj.at("reference_expert").get<std::size_t>();
            v.other_expert = vj.at("other_expert").get<std::size_t>();
            v.mean = vj.at("mean").get<double>();
            v.std_dev = vj.at("std_dev").get<double>();
            v.frac_lt_1e4 = vj.at("frac_lt_1e4").get<double>();
            v.frac_mid = vj.at("frac_mid").get<double>();
            rep.variation.push_back(v);
        }
        for (const auto& mj : j.at("mmd")) {
            MmdReport m;
            m.expert_a = mj.at("expert_a").get<std::size_t>();
            m.expert_b = mj.at("expert_b").get<std::size_t>();
            m.threshold = mj.at("threshold").get<double>();
            m.empirical = mj.at("empirical").get<double>();
            m.same_distribution = mj.at("same_distribution").get<bool>();
            m.m = mj.at("m").get<std::size_t>();
            m.alpha = mj.at("alpha").get<double>();
            m.kernel = mj.at("kernel").get<std::string>();
            rep.mmd_pairs.push_back(m);
        }
        rep.threshold_note = j.at("threshold_note").get<std::string>();
        const auto& t = j.at("training");
        rep.training_steps = t.at("steps").get<std::int64_t>();
        rep.central_update_steps = t.at("central_update_steps").get<std::int64_t>();
        rep.central_frozen_from_init = t.at("central_frozen_from_init").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad redundancy report: " + std::string(e.what()));
    }
    return rep;
}

}  // namespace mpoe
