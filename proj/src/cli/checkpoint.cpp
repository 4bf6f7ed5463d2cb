#include "affect/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "affect/binary_io.hpp"
#include "affect/errors.hpp"

namespace affect {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_patches", c.n_patches},   {"in_channels", c.in_channels},
                     {"hidden_channels", c.hidden_channels},
                     {"d_model", c.d_model},       {"heads", c.heads},
                     {"ffn_hidden", c.ffn_hidden}, {"n_blocks", c.n_blocks},
                     {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  // Missing keys keep their defaults so partial config files work.
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("n_patches", c.n_patches);
  get("in_channels", c.in_channels);
  get("hidden_channels", c.hidden_channels);
  get("d_model", c.d_model);
  get("heads", c.heads);
  get("ffn_hidden", c.ffn_hidden);
  get("n_blocks", c.n_blocks);
  get("layer_norm_eps", c.layer_norm_eps);
}

std::string checkpoint_sidecar_path(const std::string& path) { return path + ".json"; }

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const nlohmann::json& metadata) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
    const auto named = params.named_parameters();
    out.write(kCheckpointMagic, 4);
    binary::write_u32(out, kCheckpointVersion);
    binary::write_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
      binary::write_string16(out, name);
      binary::write_u32(out, static_cast<std::uint32_t>(t.rows()));
      binary::write_u32(out, static_cast<std::uint32_t>(t.cols()));
      binary::write_floats(out, t.values());
    }
    if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
  }
  nlohmann::json meta = metadata;
  meta["model"] = params.config;
  std::ofstream side(checkpoint_sidecar_path(path), std::ios::trunc);
  side << meta.dump(2) << '\n';
  if (!side) throw FormatError("failed writing checkpoint sidecar for '" + path + "'");
}

nlohmann::json load_checkpoint_metadata(const std::string& path) {
  std::ifstream in(checkpoint_sidecar_path(path));
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(checkpoint_sidecar_path(path) + ": " + e.what());
  }
}

ModelParams<float> load_checkpoint(const std::string& path,
                                   const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");

  const auto meta = load_checkpoint_metadata(path);
  ModelConfig config;
  if (meta.contains("model")) {
    config = meta.at("model").get<ModelConfig>();
    if (expected && !(*expected == config)) {
      throw ShapeError(path + ": checkpoint architecture " + meta.at("model").dump() +
                       " does not match the configured model " + nlohmann::json(*expected).dump());
    }
  } else if (expected) {
    config = *expected;
  }
  auto params = ModelParams<float>::init(config, 0);

  binary::Reader r(in, path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError(path + ": bad magic, not an AFC1 checkpoint");
  }
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  std::map<std::string, Tensor<float>> slots;
  for (auto& [name, t] : params.named_parameters()) slots.emplace(name, t);

  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.string16("tensor name");
    const auto rows = r.u32(name + " rows");
    const auto cols = r.u32(name + " cols");
    auto it = slots.find(name);
    if (it == slots.end()) throw ShapeError(path + ": unexpected tensor '" + name + "'");
    auto& t = it->second;
    if (t.rows() != rows || t.cols() != cols) {
      throw ShapeError(path + ": tensor '" + name + "' is " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", model expects " + to_string(t.shape()));
    }
    r.floats(t.mutable_values(), name + " values");
    slots.erase(it);
  }
  if (!slots.empty()) {
    throw ShapeError(path + ": missing tensor '" + slots.begin()->first + "'");
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after the last tensor");
  return params;
}

}  // namespace affect
