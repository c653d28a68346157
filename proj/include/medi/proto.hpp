#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "medi/cata.hpp"
#include "medi/data.hpp"
#include "medi/eval.hpp"
#include "medi/nn.hpp"
#include "medi/optim.hpp"

namespace medi::proto {

enum class Distance {
  euclidean,  // as written
  squared,    // common prototypical-network practice
};

Distance parse_distance(const std::string& name);
std::string to_string(Distance d);

struct PrototypeSet {
  std::vector<int> ids;
  std::vector<std::vector<double>> prototypes;
  std::vector<std::size_t> counts;
};

/// Mean embedding per group.
PrototypeSet compute_prototypes(const nn::EmbeddingClassifier& model, const nn::ParameterVector& params,
                                const std::map<int, std::vector<std::vector<double>>>& groups);

template <class T>
T distance(std::span<const T> a, std::span<const T> b, Distance mode) {
  using std::sqrt;
  T sq(0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T t = a[i] - b[i];
    sq += t * t;
  }
  return mode == Distance::squared ? sq : sqrt(sq);
}

/// softmax(-d(z, c_s)) over prototypes.
template <class T>
std::vector<T> posterior_from_embedding(std::span<const T> z, const std::vector<std::vector<T>>& prototypes,
                                        Distance mode) {
  if (prototypes.empty()) throw ConfigError("class posterior needs at least one prototype");
  std::vector<T> logits;
  for (const auto& c : prototypes) {
    if (c.size() != z.size()) throw ShapeError("prototype dimension mismatch");
    logits.push_back(-distance<T>(z, c, mode));
  }
  return nn::softmax<T>(logits);
}

std::vector<double> class_posterior(const nn::EmbeddingClassifier& model, const nn::ParameterVector& params,
                                    const PrototypeSet& prototypes, std::span<const double> x,
                                    Distance mode = Distance::euclidean);

/// Episode loss: -(1/k) sum_s sum_{x in query_s} log p(y = s | x) with
/// prototypes from the supports. The support is class-major (m per class);
/// query examples carry labels among `classes`.
class ProtoObjective {
 public:
  ProtoObjective(const nn::EmbeddingClassifier& model, const data::Episode& episode,
                 Distance mode = Distance::euclidean);

  template <class T>
  T evaluate(std::span<const T> params, std::span<T> grad) const;

 private:
  const nn::EmbeddingClassifier* model_;
  const data::Episode* episode_;
  Distance mode_;
  std::map<int, std::size_t> class_slot_;
};

template <class T>
T ProtoObjective::evaluate(std::span<const T> params, std::span<T> grad) const {
  using std::log;
  const auto& ep = *episode_;
  const auto& body = model_->body();
  const std::size_t C = ep.classes.size();
  const std::size_t m = ep.m;
  const std::size_t M = body.output_dim();
  const bool want = !grad.empty();

  auto to_t = [](const std::vector<double>& x) { return std::vector<T>(x.begin(), x.end()); };
  std::vector<nn::Mlp::Cache<T>> sc(ep.support.size()), qc(ep.query.size());
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    body.forward<T>(params, to_t(ep.support[i].features), sc[i]);
  }
  std::vector<std::vector<T>> protos(C, std::vector<T>(M, T(0.0)));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto& z = sc[c * m + j].output;
      for (std::size_t d = 0; d < M; ++d) protos[c][d] += z[d];
    }
    for (auto& v : protos[c]) v /= T(static_cast<double>(m));
  }
  const double inv_k = 1.0 / static_cast<double>(ep.k);
  std::vector<std::vector<T>> grad_protos(C, std::vector<T>(M, T(0.0)));
  T loss(0.0);
  for (std::size_t q = 0; q < ep.query.size(); ++q) {
    body.forward<T>(params, to_t(ep.query[q].features), qc[q]);
    const auto& z = qc[q].output;
    const std::size_t y = class_slot_.at(ep.query[q].label);
    const auto p = posterior_from_embedding<T>(z, protos, mode_);
    loss -= log(p[y]);
    if (!want) continue;
    std::vector<T> gz(M, T(0.0));
    for (std::size_t c = 0; c < C; ++c) {
      // logits are -d, so d loss / d distance_c = [c == y] - p_c
      const T gd = (T(c == y ? 1.0 : 0.0) - p[c]) * T(inv_k);
      T dist = distance<T>(z, protos[c], mode_);
      for (std::size_t d = 0; d < M; ++d) {
        T dd;
        if (mode_ == Distance::squared) {
          dd = T(2.0) * (z[d] - protos[c][d]);
        } else {
          dd = value(dist) == 0.0 ? T(0.0) : (z[d] - protos[c][d]) / dist;
        }
        gz[d] += gd * dd;
        grad_protos[c][d] -= gd * dd;
      }
    }
    body.backward<T>(params, qc[q], gz, grad);
  }
  if (want) {
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<T> g(M);
      for (std::size_t d = 0; d < M; ++d) g[d] = grad_protos[c][d] / T(static_cast<double>(m));
      for (std::size_t j = 0; j < m; ++j) body.backward<T>(params, sc[c * m + j], g, grad);
    }
  }
  return loss * T(inv_k);
}

struct ProtoConfig {
  nn::ModelConfig model;
  std::size_t way = 5;  // classes per sampled episode
  std::size_t ku = 5;   // classes kept for the loss (K^u <= way)
  std::size_t m = 1;    // support per class
  std::size_t k = 15;   // query per class
  std::size_t steps = 200;
  std::size_t tasks = 1000;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double rate = 1e-3;
  std::size_t halve_every = 20;
  Distance distance = Distance::euclidean;
  std::uint64_t seed = 0;
  kernels::Execution execution = kernels::Execution::parallel;

  void validate() const;
};

struct ProtoTraining {
  nn::EmbeddingClassifier model;
  nn::ParameterVector params;
  std::vector<double> loss_trace;  // mean episode loss per step
  std::size_t episodes = 0;
  std::size_t fallback_episodes = 0;
};

/// `tasks` episodes spread evenly over `steps` optimizer steps; each step
/// averages the gradient of its episodes.
ProtoTraining train_medi_pro(const cata::TaskSampler& sampler, const ProtoConfig& config);

/// Keeps `ku` of the episode's classes, uniformly without replacement.
data::Episode subsample_classes(const data::Episode& episode, std::size_t ku, Rng& rng);

struct DiscoveryOptions {
  eval::KMeansOptions kmeans;
  kernels::Execution execution = kernels::Execution::parallel;
};

/// k-means on the embedded observations; new points go to the nearest
/// prototype in embedding space.
eval::ClusterHypothesis discover_clusters_proto(const nn::EmbeddingClassifier& model,
                                                const nn::ParameterVector& params,
                                                std::span<const data::Observation> observations,
                                                std::size_t num_clusters, std::uint64_t seed,
                                                const DiscoveryOptions& options = {});

}  // namespace medi::proto
