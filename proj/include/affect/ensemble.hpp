#pragma once

#include <span>
#include <string>
#include <vector>

#include "affect/predictions.hpp"

namespace affect {

enum class EnsembleStrategy {
  best_overall,         // 1 member
  best_per_task,        // 3 members: AU, EXPR, VA sources
  kfold_best_overall,   // 6 fold members
  kfold_best_per_task,  // 18 members: 6 AU-best, then 6 EXPR-best, then 6 VA-best
  meta,                 // 4 members: outputs of the four strategies above
};

std::string to_string(EnsembleStrategy s);
EnsembleStrategy parse_ensemble_strategy(const std::string& name);
std::size_t member_count(EnsembleStrategy s);

using PredictionSet = std::vector<PredictionRecord>;

/// Mean of raw outputs in double precision. Members may list ids in any order
/// but must cover the same set; the result follows the first member's order.
PredictionSet average_predictions(std::span<const PredictionSet> members);

/// Combines member outputs per strategy. Thresholds and argmax are applied
/// only when the result is written out.
PredictionSet ensemble(EnsembleStrategy strategy, std::span<const PredictionSet> members);

}  // namespace affect
