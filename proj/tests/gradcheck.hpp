#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "affect/ops.hpp"
#include "affect/tensor.hpp"

namespace affect::testing {

using TensorD = Tensor<double>;

inline TensorD random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.numel());
  for (auto& e : v) e = u(rng);
  return TensorD::from(shape, std::move(v), requires_grad);
}

/// Scalar probe of a tensor-valued result: sum(out ∘ R) with a fixed random R,
/// so every output element receives a distinct upstream gradient.
inline TensorD probe(const TensorD& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(out, random_tensor(rng, out.shape(), -1.0, 1.0, false)));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on near-zero
/// gradients from dominating.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences for every input element
/// (or `max_per_input` randomly chosen ones).
inline GradCheckResult grad_check(const std::function<TensorD(const std::vector<TensorD>&)>& f,
                                  std::vector<TensorD> inputs, double h = 1e-5,
                                  std::size_t max_per_input = 0, std::uint64_t seed = 1) {
  for (auto& t : inputs) t.zero_grad();
  const TensorD loss = f(inputs);
  backward(loss);

  std::mt19937_64 rng(seed);
  GradCheckResult r;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_per_input > 0 && coords.size() > max_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_per_input);
    }
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (auto i : coords) {
      auto values = t.mutable_values();
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard g;
        values[i] = saved + h;
        plus = f(inputs).item();
        values[i] = saved - h;
        minus = f(inputs).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace affect::testing
