#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace affect::testing {

/// F1 from a full confusion matrix, computed without shortcuts.
inline double oracle_f1(const std::vector<int>& pred, const std::vector<int>& truth, int cls,
                        int n_classes) {
  std::vector<std::vector<long>> cm(n_classes, std::vector<long>(n_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) cm[truth[i]][pred[i]]++;
  long tp = cm[cls][cls], fp = 0, fn = 0;
  for (int o = 0; o < n_classes; ++o) {
    if (o == cls) continue;
    fp += cm[o][cls];
    fn += cm[cls][o];
  }
  const long den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

inline double oracle_f1_binary(const std::vector<std::uint8_t>& pred,
                               const std::vector<std::uint8_t>& truth) {
  std::vector<int> p(pred.begin(), pred.end()), t(truth.begin(), truth.end());
  return oracle_f1(p, t, 1, 2);
}

inline double oracle_macro_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  double s = 0;
  for (int c = 0; c < 8; ++c) s += oracle_f1(pred, truth, c, 8);
  return s / 8;
}

/// CCC from raw power sums in extended precision:
/// 2·cov / (var_x + var_y + (mean_x − mean_y)²).
inline double oracle_ccc(const std::vector<double>& x, const std::vector<double>& y, double eps) {
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const long double n = static_cast<long double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  const long double mx = sx / n, my = sy / n;
  const long double cov = sxy / n - mx * my;
  const long double vx = sxx / n - mx * mx, vy = syy / n - my * my;
  return static_cast<double>(2 * cov / (vx + vy + (mx - my) * (mx - my) + eps));
}

}  // namespace affect::testing
