#include "medi/bounds.hpp"

namespace medi::bounds {

double stability_epsilon(std::size_t n, double beta, double M, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ConfigError("stability bound: delta must lie in (0, 1), got " + std::to_string(delta));
  }
  if (n == 0) throw ConfigError("stability bound: n must be positive");
  if (!(beta >= 0.0) || !(M >= 0.0) || !std::isfinite(beta) || !std::isfinite(M)) {
    throw ConfigError("stability bound: beta and M must be finite and nonnegative");
  }
  const double nd = static_cast<double>(n);
  return 2.0 * beta + (4.0 * nd * beta + M) * std::sqrt(std::log(1.0 / delta) / (2.0 * nd));
}

double clamped_bce_bound(double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("clamp epsilon must lie in (0, 0.5)");
  return -std::log(eps);
}

double empirical_multitask_error(const std::vector<std::vector<double>>& per_task_losses) {
  if (per_task_losses.empty()) throw ValidationError("multi-task error: no tasks");
  double total = 0.0;
  for (const auto& task : per_task_losses) {
    if (task.empty()) throw ValidationError("multi-task error: task without test points");
    double s = 0.0;
    for (double l : task) s += l;
    total += s / static_cast<double>(task.size());
  }
  return total / static_cast<double>(per_task_losses.size());
}

BoundCheck bound_check(double empirical, double epsilon, double generalization) {
  return {empirical, epsilon, generalization, generalization <= empirical + epsilon};
}

Perturbation parse_perturbation(const std::string& name) {
  if (name == "deletion") return Perturbation::deletion;
  if (name == "replacement") return Perturbation::replacement;
  throw ConfigError("unknown perturbation '" + name + "' (expected deletion|replacement)");
}

}  // namespace medi::bounds
