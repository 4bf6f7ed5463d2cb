#pragma once

#include <span>

#include "affect/labels.hpp"
#include "affect/model.hpp"
#include "affect/tensor.hpp"

namespace affect {

inline constexpr double kCccEps = 1e-8;

/// A task loss together with the number of samples it averaged over. When no
/// sample is valid (fewer than two for VA) the value is a constant 0 and
/// `empty` is set.
template <typename T>
struct TaskLoss {
  Tensor<T> value;
  std::size_t n_valid = 0;
  bool empty = true;
};

/// Weighted binary cross entropy over samples with a valid AU vector,
/// averaged over valid samples and the 12 units. Stable softplus form.
template <typename T>
TaskLoss<T> loss_au(const Tensor<T>& logits, std::span<const LabelRecord> labels,
                    const ClassWeights& weights);

/// Weighted cross entropy over samples with a valid expression label.
template <typename T>
TaskLoss<T> loss_expr(const Tensor<T>& logits, std::span<const LabelRecord> labels,
                      const ClassWeights& weights);

/// 2 - ccc(valence) - ccc(arousal) over the valid samples of the batch.
template <typename T>
TaskLoss<T> loss_va(const Tensor<T>& pred, std::span<const LabelRecord> labels);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  TaskLoss<T> au, expr, va;
};

/// Unweighted sum of the three task losses.
template <typename T>
LossBreakdown<T> loss_total(const Predictions<T>& preds, std::span<const LabelRecord> labels,
                            const ClassWeights& weights);

/// Concordance correlation coefficient with population moments. Throws
/// UndefinedMetricError for fewer than two samples.
double ccc(std::span<const double> x, std::span<const double> y, double eps = kCccEps);

}  // namespace affect
