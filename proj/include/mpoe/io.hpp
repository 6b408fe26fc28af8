// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mpoe/analysis.hpp"
#include "mpoe/moe_layer.hpp"
#include "mpoe/tensor.hpp"

namespace mpoe {

/// Binary tensor container:
///   magic "MPOT" | version u32 LE (=1) | dtype u8 (0=f64, 1=f32) | ndim u8 |
///   extents ndim x u64 LE | payload row-major little-endian floats.
/// f32 payloads are promoted to f64 on read. Unknown versions are rejected.
/// Writes go through a temp file and rename, so readers never see a partial
/// file.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t, bool as_f32 = false);
Tensor read_tensor_file(const std::filesystem::path& path);

/// Atomic text write (temp + rename).
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Training metadata carried by a checkpoint.
struct CheckpointMeta {
    std::int64_t steps = -1;
    std::int64_t central_update_steps = -1;
    bool central_frozen_from_init = false;
};

/// A checkpoint is a directory: manifest.json plus one TensorFile per
/// parameter tensor.
void save_checkpoint(const std::filesystem::path& dir, const MpoeExpertBank& bank,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
    MpoeExpertBank bank;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json to_json(const VariationStats& v);
nlohmann::json to_json(const MmdReport& m);
nlohmann::json to_json(const BankParamCounts& c);
nlohmann::json to_json(const MpoParamCounts& c);
nlohmann::json to_json(const RedundancyReport& rep);
RedundancyReport redundancy_report_from_json(const nlohmann::json& j);

}  // namespace mpoe
