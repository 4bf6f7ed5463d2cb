#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "affect/model.hpp"

namespace affect {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

inline constexpr char kCheckpointMagic[4] = {'A', 'F', 'C', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary tensor file: "AFC1", u32 version, u32 tensor count; per tensor u16
/// name length, name, u32 rows, u32 cols, rows·cols LE float32. A JSON sidecar
/// `<path>.json` carries {"model": config, ...metadata}.
void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Reads the sidecar config (or uses `expected` when given and the sidecar is
/// absent) and loads every tensor. A config that differs from `expected`, a
/// missing or extra tensor, or a shape mismatch raises ShapeError.
ModelParams<float> load_checkpoint(const std::string& path,
                                   const std::optional<ModelConfig>& expected = std::nullopt);

nlohmann::json load_checkpoint_metadata(const std::string& path);

std::string checkpoint_sidecar_path(const std::string& path);

}  // namespace affect
