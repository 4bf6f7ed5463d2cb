#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "affect/constants.hpp"
#include "affect/labels.hpp"

namespace affect {

/// Pre-threshold outputs for one image.
struct PredictionRecord {
  std::string id;
  std::array<float, kNumAu> au_logits{};
  std::array<float, kNumExpr> expr_logits{};
  std::array<float, kNumVa> va{};

  /// AU j is active when its logit is >= 0, i.e. sigmoid >= 0.5.
  std::array<int, kNumAu> au_decisions() const;
  /// Argmax; the lowest index wins ties.
  int expression() const;
  LabelRecord decided() const;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Submission CSV: label CSV header, VA with 4 decimals.
void save_prediction_csv(const std::string& path, std::span<const PredictionRecord> preds);
std::string prediction_csv(std::span<const PredictionRecord> preds);

inline constexpr char kPredictionMagic[4] = {'A', 'F', 'P', '1'};
inline constexpr std::uint32_t kPredictionVersion = 1;

/// Raw sidecar: "AFP1", u32 version, u32 count, then per record u16 id length,
/// id, 12 AU logits, 8 expression logits, 2 VA values as LE float32.
void save_raw_predictions(const std::string& path, std::span<const PredictionRecord> preds);
std::vector<PredictionRecord> load_raw_predictions(const std::string& path);

/// Sidecar path written next to a prediction CSV.
std::string raw_sidecar_path(const std::string& csv_path);

}  // namespace affect
