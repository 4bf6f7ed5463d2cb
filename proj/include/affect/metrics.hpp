#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/constants.hpp"
#include "affect/labels.hpp"
#include "affect/predictions.hpp"

namespace affect {

/// 2TP / (2TP + FP + FN); 0 when the denominator is 0.
double f1_binary(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

struct ExprF1 {
  std::array<double, kNumExpr> per_class{};
  double macro = 0.0;
};

/// One-vs-rest F1 per class and their mean.
ExprF1 f1_macro_expr(std::span<const int> pred, std::span<const int> truth);

struct VaScore {
  double ccc_v = 0.0;
  double ccc_a = 0.0;
  double p_va = 0.0;
};

/// CCC per dimension over the whole set; needs at least two samples.
VaScore p_va(std::span<const double> pred_v, std::span<const double> pred_a,
             std::span<const double> truth_v, std::span<const double> truth_a);

inline double p_mtl(double p_au, double p_expr, double p_va) { return p_au + p_expr + p_va; }

struct TaskCounts {
  std::size_t valid = 0;
  std::size_t invalid = 0;
  friend bool operator==(const TaskCounts&, const TaskCounts&) = default;
};

struct EvalReport {
  std::array<double, kNumAu> per_au_f1{};
  std::array<double, kNumExpr> per_expr_f1{};
  double ccc_v = 0.0, ccc_a = 0.0;
  double p_au = 0.0, p_expr = 0.0, p_va = 0.0, p_mtl = 0.0;
  TaskCounts au_counts, expr_counts, va_counts;

  /// Fills the p_* fields from the per-class arrays and the two CCCs.
  static EvalReport from_scores(const std::array<double, kNumAu>& per_au_f1,
                                const std::array<double, kNumExpr>& per_expr_f1, double ccc_v,
                                double ccc_a);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Full-set metrics. Predictions and labels are matched by position and must
/// carry the same ids. Invalid labels are filtered before scoring.
EvalReport evaluate(std::span<const PredictionRecord> preds, std::span<const LabelRecord> labels);

/// Field-wise arithmetic mean; counts are summed.
EvalReport fold_aggregate(std::span<const EvalReport> reports);

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

}  // namespace affect
