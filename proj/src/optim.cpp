#include "medi/optim.hpp"

#include <cmath>

#include "medi/error.hpp"

namespace medi::nn {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd" || name == "gd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double rate) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ShapeError("adam: parameter size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad, double rate) {
  if (kind_ == OptimizerKind::adam) {
    adam_.step(params, grad, rate);
    return;
  }
  if (params.size() != grad.size()) throw ShapeError("sgd: parameter size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= rate * grad[i];
}

double StepSchedule::rate(std::size_t step) const {
  if (halve_every == 0) return initial;
  return initial * std::ldexp(1.0, -static_cast<int>(step / halve_every));
}

}  // namespace medi::nn
