#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medi/error.hpp"
#include "medi/kernels.hpp"
#include "medi/parallel.hpp"
#include "medi/rng.hpp"

namespace medi::bounds {

/// 2 beta + (4 n beta + M) sqrt(ln(1/delta) / (2n)).
double stability_epsilon(std::size_t n, double beta, double M, double delta);

struct StabilityBoundSpec {
  std::size_t n = 0;
  double beta = 0.0;
  double M = 1.0;
  double delta = 0.05;

  [[nodiscard]] double epsilon() const { return stability_epsilon(n, beta, M, delta); }
};

/// Loss bound of the clamped pair BCE: -ln(eps).
double clamped_bce_bound(double eps);

/// (1/n) sum_i (1/k_i) sum_j loss[i][j].
double empirical_multitask_error(const std::vector<std::vector<double>>& per_task_losses);

struct BoundCheck {
  double empirical = 0.0;
  double epsilon = 0.0;
  double generalization = 0.0;
  bool pass = false;
};

/// Whether generalization <= empirical + epsilon.
BoundCheck bound_check(double empirical, double epsilon, double generalization);

enum class Perturbation {
  deletion,     // S without task i
  replacement,  // task i swapped for a fresh draw
};

Perturbation parse_perturbation(const std::string& name);

/// A meta-algorithm under test: draws tasks, trains on a meta-sample, and
/// scores the trained inner algorithm on one task (train part in, mean test
/// loss out).
template <class Task, class Learner>
struct StabilityProblem {
  std::function<Task(Rng&)> generate;
  std::function<Learner(std::span<const Task>, std::uint64_t seed)> meta_train;
  std::function<double(const Learner&, const Task&)> task_loss;
};

struct ProbeConfig {
  std::size_t n = 10;
  std::size_t trials = 5;
  std::size_t probe_tasks = 20;  // fresh tasks the deviation is maximized over
  Perturbation perturbation = Perturbation::deletion;
  std::uint64_t seed = 0;
  kernels::Execution execution = kernels::Execution::parallel;
};

struct ProbeResult {
  double beta_hat = 0.0;
  std::vector<double> per_trial;
};

/// Max over trials, perturbed indices and probe tasks of
/// |L(A(S)) - L(A(S'))|. Each meta-sample is trained twice to confirm the
/// algorithm is deterministic under a fixed seed.
template <class Task, class Learner>
ProbeResult empirical_stability_probe(const StabilityProblem<Task, Learner>& problem,
                                      const ProbeConfig& config) {
  if (config.n < 2) throw ConfigError("stability probe needs n >= 2 tasks");
  if (config.trials == 0 || config.probe_tasks == 0) {
    throw ConfigError("stability probe needs trials and probe tasks");
  }
  ProbeResult res;
  res.per_trial.assign(config.trials, 0.0);
  parallel_for(config.trials, config.execution, [&](std::size_t t) {
    Rng rng = make_rng(config.seed, "probe.trial", t);
    const std::uint64_t train_seed = substream_seed(config.seed, "probe.train", t);
    std::vector<Task> sample, probes;
    for (std::size_t i = 0; i < config.n; ++i) sample.push_back(problem.generate(rng));
    for (std::size_t i = 0; i < config.probe_tasks; ++i) probes.push_back(problem.generate(rng));

    const Learner base = problem.meta_train(sample, train_seed);
    const Learner again = problem.meta_train(sample, train_seed);
    std::vector<double> base_loss;
    for (const auto& p : probes) {
      const double a = problem.task_loss(base, p);
      const double b = problem.task_loss(again, p);
      if (!(a == b) && !(std::isnan(a) && std::isnan(b))) {
        throw ValidationError("stability probe invalid: meta-algorithm is not deterministic under a fixed seed");
      }
      base_loss.push_back(a);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < config.n; ++i) {
      std::vector<Task> perturbed;
      if (config.perturbation == Perturbation::deletion) {
        for (std::size_t j = 0; j < config.n; ++j) {
          if (j != i) perturbed.push_back(sample[j]);
        }
      } else {
        perturbed = sample;
        perturbed[i] = problem.generate(rng);
      }
      const Learner other = problem.meta_train(perturbed, train_seed);
      for (std::size_t p = 0; p < probes.size(); ++p) {
        worst = std::max(worst, std::abs(base_loss[p] - problem.task_loss(other, probes[p])));
      }
    }
    res.per_trial[t] = worst;
  });
  for (double b : res.per_trial) res.beta_hat = std::max(res.beta_hat, b);
  return res;
}

}  // namespace medi::bounds
