#include "affect/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "affect/errors.hpp"

namespace affect {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& p : params_) {
    if (!p.requires_grad()) throw GraphError("Adam: parameter does not require grad");
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  if (!(lr >= 0) || !std::isfinite(lr)) {
    throw ConfigError("Adam: learning rate must be finite and non-negative");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!all_finite(params_[i].grad())) {
      throw DivergenceError("non-finite gradient in parameter #" + std::to_string(i) +
                            "; step aborted");
    }
  }
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto value = params_[i].mutable_values();
    auto grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g * g);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      value[j] = static_cast<T>(value[j] - lr * mhat / (std::sqrt(vhat) + options_.epsilon));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

void LrSchedule::validate() const {
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
  if (total_epochs <= 0) throw ConfigError("total_epochs must be positive");
  if (total_epochs < warmup_epochs) throw ConfigError("total_epochs must be >= warmup_epochs");
}

double lr_at(const LrSchedule& schedule, double progress) {
  schedule.validate();
  const double total = schedule.total_epochs;
  const double warmup = schedule.warmup_epochs;
  if (!(progress >= 0.0 && progress <= total)) {
    throw ConfigError("lr_at: progress " + std::to_string(progress) + " outside [0, " +
                      std::to_string(schedule.total_epochs) + "]");
  }
  if (progress < warmup) return schedule.base_lr * progress / warmup;
  if (total == warmup) return schedule.base_lr;
  const double t = (progress - warmup) / (total - warmup);
  return 0.5 * schedule.base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace affect
