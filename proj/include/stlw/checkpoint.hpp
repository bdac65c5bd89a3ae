#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "stlw/model.hpp"
#include "stlw/pruning.hpp"

namespace stlw {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string stage = "init";
  int epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  /// Parameter counts of the unpruned ancestor, for compression reporting.
  std::optional<ParamCount> baseline;
  std::optional<PrunePlan> plan;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

/// Layout, all integers little-endian:
///   "STLW" | u32 version | u64 metadata length | metadata JSON |
///   u32 record count | records
/// with each record u32 name length | name | u32 rank | u64 extents[rank] |
/// f32 data[numel].
std::string serialize_checkpoint(const Model& m, const CheckpointMeta& meta);
Checkpoint parse_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling, then renames over `path`.
void save_checkpoint(const Model& m, const CheckpointMeta& meta, const std::filesystem::path& path);
/// Throws LoadError naming the field that failed to parse.
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace stlw
