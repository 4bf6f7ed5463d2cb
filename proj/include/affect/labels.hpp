#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "affect/constants.hpp"

namespace affect {

inline constexpr float kInvalidVa = -5.0f;
inline constexpr int kInvalidExpr = -1;
inline constexpr int kInvalidAu = -1;

enum class LabelSource : std::uint8_t { annotated, pseudo };

constexpr std::array<int, kNumAu> filled_au(int v) {
  std::array<int, kNumAu> a{};
  for (auto& e : a) e = v;
  return a;
}

struct LabelRecord {
  std::string id;
  float valence = kInvalidVa;
  float arousal = kInvalidVa;
  int expression = kInvalidExpr;
  std::array<int, kNumAu> au = filled_au(kInvalidAu);
  LabelSource va_source = LabelSource::annotated;
  LabelSource expr_source = LabelSource::annotated;
  LabelSource au_source = LabelSource::annotated;

  bool va_valid() const { return valence != kInvalidVa && arousal != kInvalidVa; }
  bool expr_valid() const { return expression != kInvalidExpr; }
  // A single -1 unit invalidates the whole AU vector.
  bool au_valid() const;
  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct ValidityMask {
  bool va = false;
  bool expr = false;
  bool au = false;
};

ValidityMask validity(const LabelRecord& r);

/// Header: image,valence,arousal,expression,au1,...,au26.
std::vector<LabelRecord> load_labels(const std::string& path);
std::vector<LabelRecord> parse_labels(const std::string& text, const std::string& origin = "<memory>");
void save_labels(const std::string& path, std::span<const LabelRecord> labels);
std::string labels_csv_header();

struct MergeResult {
  std::vector<LabelRecord> labels;
  std::vector<std::string> warnings;
};

/// Fills invalid task fields of `primary` from `pseudo`; valid annotations are
/// never overwritten. Pseudo ids missing from `primary` produce a warning.
MergeResult merge_pseudo_labels(std::span<const LabelRecord> primary,
                                std::span<const LabelRecord> pseudo);

struct ClassWeights {
  std::array<double, kNumAu> au_pos_weight{};
  std::array<double, kNumExpr> expr_weight{};

  static ClassWeights uniform();
};

inline constexpr double kMinClassWeight = 0.01;
inline constexpr double kMaxClassWeight = 100.0;

/// AU: negatives / positives per unit. EXPR: N_valid / (8 · N_class).
/// Both clamped to [0.01, 100].
ClassWeights compute_class_weights(std::span<const LabelRecord> labels);

}  // namespace affect
