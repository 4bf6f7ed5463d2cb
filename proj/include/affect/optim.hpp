#pragma once

#include <cstdint>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments for a fixed list of parameters, in registration order.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options = {});

  /// One bias-corrected update at learning rate `lr`. Throws DivergenceError
  /// before touching any parameter if a gradient is non-finite.
  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamOptions options_;
  std::uint64_t step_ = 0;
};

/// Linear warmup from 0 to base_lr, then cosine decay to 0.
struct LrSchedule {
  double base_lr = 1e-3;
  int warmup_epochs = 5;
  int total_epochs = 6;

  void validate() const;
};

/// `progress` is measured in (fractional) epochs, within [0, total_epochs].
double lr_at(const LrSchedule& schedule, double progress);

}  // namespace affect
