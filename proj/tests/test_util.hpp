#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "affect/labels.hpp"
#include "affect/model.hpp"

namespace affect::testing {

/// Width-reduced architecture with the full query layout.
inline ModelConfig small_config(std::size_t blocks = 2) {
  ModelConfig c;
  c.n_patches = 8;
  c.in_channels = 12;
  c.hidden_channels = 16;
  c.d_model = 16;
  c.heads = 2;
  c.ffn_hidden = 32;
  c.n_blocks = blocks;
  return c;
}

template <typename T>
Tensor<T> random_features(std::mt19937_64& rng, const ModelConfig& c, std::size_t batch,
                          bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<T> v(batch * c.n_patches * c.in_channels);
  for (auto& e : v) e = static_cast<T>(n(rng));
  return Tensor<T>::from({batch * c.n_patches, c.in_channels}, std::move(v), requires_grad);
}

/// Labels with every task valid, drawn uniformly.
inline std::vector<LabelRecord> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> va(-1.0f, 1.0f);
  std::uniform_int_distribution<int> cls(0, kNumExpr - 1), bit(0, 1);
  std::vector<LabelRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out[i];
    r.id = "v" + std::to_string(i % 3) + "/" + std::to_string(i);
    r.valence = va(rng);
    r.arousal = va(rng);
    r.expression = cls(rng);
    for (auto& a : r.au) a = bit(rng);
  }
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("affect_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace affect::testing
