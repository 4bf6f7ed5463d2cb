#include "affect/losses.hpp"

#include "affect/errors.hpp"
#include "affect/ops.hpp"

namespace affect {

namespace {

template <typename T>
void check_shape(const Tensor<T>& x, std::size_t batch, std::size_t cols, const char* what) {
  if (x.rows() != batch || x.cols() != cols) {
    throw ShapeError(std::string(what) + " expected " + std::to_string(batch) + "x" +
                     std::to_string(cols) + ", got " + to_string(x.shape()));
  }
}

template <typename T>
TaskLoss<T> empty_loss() {
  return {Tensor<T>::scalar(T(0)), 0, true};
}

}  // namespace

template <typename T>
TaskLoss<T> loss_au(const Tensor<T>& logits, std::span<const LabelRecord> labels,
                    const ClassWeights& weights) {
  check_shape(logits, labels.size(), kNumAu, "AU logits");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].au_valid()) rows.push_back(i);
  }
  if (rows.empty()) return empty_loss<T>();

  const std::size_t nv = rows.size();
  std::vector<T> pos(nv * kNumAu), neg(nv * kNumAu);
  for (std::size_t r = 0; r < nv; ++r) {
    for (std::size_t j = 0; j < kNumAu; ++j) {
      const T y = static_cast<T>(labels[rows[r]].au[j]);
      pos[r * kNumAu + j] = static_cast<T>(weights.au_pos_weight[j]) * y;
      neg[r * kNumAu + j] = T(1) - y;
    }
  }
  const Shape shape{nv, kNumAu};
  const auto x = ops::gather_rows(logits, rows);
  // -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
  const auto terms = ops::add(ops::mul(Tensor<T>::from(shape, std::move(pos)), ops::softplus(ops::scale(x, T(-1)))),
                              ops::mul(Tensor<T>::from(shape, std::move(neg)), ops::softplus(x)));
  return {ops::scale(ops::sum(terms), T(1) / static_cast<T>(nv * kNumAu)), nv, false};
}

template <typename T>
TaskLoss<T> loss_expr(const Tensor<T>& logits, std::span<const LabelRecord> labels,
                      const ClassWeights& weights) {
  check_shape(logits, labels.size(), kNumExpr, "expression logits");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i].expr_valid()) continue;
    const int y = labels[i].expression;
    if (y < 0 || y >= static_cast<int>(kNumExpr)) {
      throw DataError("expression label " + std::to_string(y) + " out of range for '" +
                      labels[i].id + "'");
    }
    rows.push_back(i);
  }
  if (rows.empty()) return empty_loss<T>();

  const std::size_t nv = rows.size();
  std::vector<T> pick(nv * kNumExpr, T(0));
  for (std::size_t r = 0; r < nv; ++r) {
    const auto y = static_cast<std::size_t>(labels[rows[r]].expression);
    pick[r * kNumExpr + y] = -static_cast<T>(weights.expr_weight[y]);
  }
  const auto lsm = ops::log_softmax_rows(ops::gather_rows(logits, rows));
  const auto picked = ops::mul(Tensor<T>::from({nv, kNumExpr}, std::move(pick)), lsm);
  return {ops::scale(ops::sum(picked), T(1) / static_cast<T>(nv)), nv, false};
}

template <typename T>
TaskLoss<T> loss_va(const Tensor<T>& pred, std::span<const LabelRecord> labels) {
  check_shape(pred, labels.size(), kNumVa, "VA predictions");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].va_valid()) rows.push_back(i);
  }
  if (rows.size() < 2) {
    auto out = empty_loss<T>();
    out.n_valid = rows.size();
    return out;
  }
  const std::size_t nv = rows.size();
  std::vector<T> tv(nv), ta(nv);
  for (std::size_t r = 0; r < nv; ++r) {
    tv[r] = static_cast<T>(labels[rows[r]].valence);
    ta[r] = static_cast<T>(labels[rows[r]].arousal);
  }
  const auto p = ops::gather_rows(pred, rows);
  const T eps = static_cast<T>(kCccEps);
  const auto cv = ops::ccc(ops::slice_cols(p, 0, 1), Tensor<T>::from({nv, 1}, std::move(tv)), eps);
  const auto ca = ops::ccc(ops::slice_cols(p, 1, 1), Tensor<T>::from({nv, 1}, std::move(ta)), eps);
  const auto value = ops::sub(Tensor<T>::scalar(T(2)), ops::add(cv, ca));
  return {value, nv, false};
}

template <typename T>
LossBreakdown<T> loss_total(const Predictions<T>& preds, std::span<const LabelRecord> labels,
                            const ClassWeights& weights) {
  LossBreakdown<T> out;
  out.au = loss_au(preds.au_logits, labels, weights);
  out.expr = loss_expr(preds.expr_logits, labels, weights);
  out.va = loss_va(preds.va, labels);
  out.total = ops::add(ops::add(out.au.value, out.expr.value), out.va.value);
  return out;
}

double ccc(std::span<const double> x, std::span<const double> y, double eps) {
  if (x.size() != y.size()) throw ShapeError("ccc: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw UndefinedMetricError("ccc needs at least two samples, got " + std::to_string(n));
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= static_cast<double>(n);
  vy /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  return 2.0 * cov / (vx + vy + (mx - my) * (mx - my) + eps);
}

#define AFFECT_INSTANTIATE(T)                                                                   \
  template TaskLoss<T> loss_au(const Tensor<T>&, std::span<const LabelRecord>,                 \
                               const ClassWeights&);                                            \
  template TaskLoss<T> loss_expr(const Tensor<T>&, std::span<const LabelRecord>,               \
                                 const ClassWeights&);                                          \
  template TaskLoss<T> loss_va(const Tensor<T>&, std::span<const LabelRecord>);                \
  template LossBreakdown<T> loss_total(const Predictions<T>&, std::span<const LabelRecord>,    \
                                       const ClassWeights&);

AFFECT_INSTANTIATE(float)
AFFECT_INSTANTIATE(double)
#undef AFFECT_INSTANTIATE

}  // namespace affect
