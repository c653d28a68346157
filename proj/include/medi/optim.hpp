#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace medi::nn {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grad, double rate);
  [[nodiscard]] std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Plain gradient descent or Adam behind one interface.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t size) : kind_(kind), adam_(kind == OptimizerKind::adam ? size : 0) {}

  void step(std::span<double> params, std::span<const double> grad, double rate);
  [[nodiscard]] OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  Adam adam_;
};

/// Learning rate halved every `halve_every` steps (never when 0).
struct StepSchedule {
  double initial = 1e-3;
  std::size_t halve_every = 0;

  [[nodiscard]] double rate(std::size_t step) const;
};

}  // namespace medi::nn
