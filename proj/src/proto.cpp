#include "medi/proto.hpp"

#include <algorithm>
#include <memory>

#include "medi/gradient.hpp"
#include "medi/parallel.hpp"

namespace medi::proto {

Distance parse_distance(const std::string& name) {
  if (name == "euclidean") return Distance::euclidean;
  if (name == "squared" || name == "squared_euclidean") return Distance::squared;
  throw ConfigError("unknown distance '" + name + "' (expected euclidean|squared)");
}

std::string to_string(Distance d) { return d == Distance::squared ? "squared" : "euclidean"; }

PrototypeSet compute_prototypes(const nn::EmbeddingClassifier& model, const nn::ParameterVector& params,
                                const std::map<int, std::vector<std::vector<double>>>& groups) {
  PrototypeSet out;
  for (const auto& [id, xs] : groups) {
    if (xs.empty()) throw ValidationError("compute_prototypes: group " + std::to_string(id) + " is empty");
    std::vector<double> acc;
    for (const auto& x : xs) {
      const auto z = nn::forward_embed(model, params, x);
      if (acc.empty()) acc.assign(z.size(), 0.0);
      for (std::size_t d = 0; d < z.size(); ++d) acc[d] += z[d];
    }
    for (auto& v : acc) v /= static_cast<double>(xs.size());
    out.ids.push_back(id);
    out.prototypes.push_back(std::move(acc));
    out.counts.push_back(xs.size());
  }
  return out;
}

std::vector<double> class_posterior(const nn::EmbeddingClassifier& model, const nn::ParameterVector& params,
                                    const PrototypeSet& prototypes, std::span<const double> x,
                                    Distance mode) {
  const auto z = nn::forward_embed(model, params, x);
  return posterior_from_embedding<double>(z, prototypes.prototypes, mode);
}

ProtoObjective::ProtoObjective(const nn::EmbeddingClassifier& model, const data::Episode& episode,
                               Distance mode)
    : model_(&model), episode_(&episode), mode_(mode) {
  if (episode.query.empty()) throw ValidationError("proto loss: episode has an empty query set");
  if (episode.m == 0 || episode.k == 0) throw ValidationError("proto loss: episode needs m, k >= 1");
  if (episode.support.size() != episode.classes.size() * episode.m) {
    throw ShapeError("proto loss: support is not class-major with m per class");
  }
  for (std::size_t c = 0; c < episode.classes.size(); ++c) class_slot_[episode.classes[c]] = c;
  for (const auto& q : episode.query) {
    if (!class_slot_.contains(q.label)) throw ValidationError("proto loss: query label outside the episode");
  }
}

void ProtoConfig::validate() const {
  model.validate();
  if (model.head_width != 0) throw ConfigError("MEDI-PRO uses an embedding-only model (head_width = 0)");
  if (ku < 2 || ku > way) throw ConfigError("MEDI-PRO needs 2 <= ku <= way");
  if (m == 0 || k == 0) throw ConfigError("MEDI-PRO needs m >= 1 and k >= 1");
  if (!(rate > 0.0)) throw ConfigError("MEDI-PRO rate must be positive");
  if (tasks > 0 && steps == 0) throw ConfigError("MEDI-PRO: tasks need at least one step");
}

data::Episode subsample_classes(const data::Episode& episode, std::size_t ku, Rng& rng) {
  if (ku > episode.classes.size()) {
    throw InfeasibleError("episode has " + std::to_string(episode.classes.size()) + " classes, fewer than K^u = " +
                          std::to_string(ku));
  }
  if (ku == episode.classes.size()) return episode;
  std::vector<std::size_t> slots(episode.classes.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(ku);
  std::sort(slots.begin(), slots.end());
  data::Episode out = episode;
  out.way = ku;
  out.classes.clear();
  out.support.clear();
  out.query.clear();
  std::map<int, bool> keep;
  for (auto s : slots) {
    out.classes.push_back(episode.classes[s]);
    keep[episode.classes[s]] = true;
    for (std::size_t j = 0; j < episode.m; ++j) out.support.push_back(episode.support[s * episode.m + j]);
  }
  for (const auto& q : episode.query) {
    if (keep.contains(q.label)) out.query.push_back(q);
  }
  return out;
}

ProtoTraining train_medi_pro(const cata::TaskSampler& sampler, const ProtoConfig& config) {
  config.validate();
  nn::EmbeddingClassifier model(config.model);
  ProtoTraining out{model, model.initialize(substream_seed(config.seed, "init")), {}, 0, 0};
  auto& params = out.params;
  nn::Optimizer opt(config.optimizer, params.size());
  const nn::StepSchedule schedule{config.rate, config.halve_every};
  Rng rng = make_rng(config.seed, "sampler");
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t begin = step * config.tasks / config.steps;
    const std::size_t end = (step + 1) * config.tasks / config.steps;
    if (begin == end) continue;
    std::vector<data::Episode> episodes;
    for (std::size_t t = begin; t < end; ++t) {
      auto ep = sampler.sample(config.way, config.m, config.k, rng);
      out.fallback_episodes += ep.cata_fallback ? 1 : 0;
      episodes.push_back(subsample_classes(ep, config.ku, rng));
    }
    std::vector<double> grad(params.size(), 0.0);
    const double total = chunked_accumulate(
        episodes.size(), params.size(), 1, config.execution, grad,
        [&](std::size_t e, std::span<double> g) {
          const ProtoObjective obj(model, episodes[e], config.distance);
          auto vg = nn::value_and_gradient(obj, params.values, &params.layout,
                                           "MEDI-PRO step " + std::to_string(step) + ", episode " +
                                               std::to_string(begin + e));
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += vg.gradient[i];
          return vg.value;
        });
    const double inv = 1.0 / static_cast<double>(episodes.size());
    for (auto& g : grad) g *= inv;
    out.loss_trace.push_back(total * inv);
    opt.step(params.values, grad, schedule.rate(step));
    out.episodes += episodes.size();
  }
  params.check_finite("MEDI-PRO parameters");
  return out;
}

eval::ClusterHypothesis discover_clusters_proto(const nn::EmbeddingClassifier& model,
                                                const nn::ParameterVector& params,
                                                std::span<const data::Observation> observations,
                                                std::size_t num_clusters, std::uint64_t seed,
                                                const DiscoveryOptions& options) {
  if (num_clusters > observations.size()) {
    throw ConfigError("discover_clusters_proto: " + std::to_string(num_clusters) + " clusters for " +
                      std::to_string(observations.size()) + " observations");
  }
  if (observations.empty()) throw ValidationError("discover_clusters_proto: no observations");
  std::vector<double> inputs;
  const std::size_t dim = observations.front().features.size();
  for (const auto& o : observations) {
    if (o.features.size() != dim) throw ShapeError("discover_clusters_proto: ragged observations");
    inputs.insert(inputs.end(), o.features.begin(), o.features.end());
  }
  const auto z = model.embed_batch(params, inputs, observations.size(), options.execution);
  const std::size_t M = model.body().output_dim();
  auto fit = std::make_shared<eval::KMeansResult>(
      eval::kmeans(z, observations.size(), M, num_clusters, seed, options.kmeans));
  eval::ClusterHypothesis h;
  h.num_clusters = num_clusters;
  eval::ClusterAssignment on;
  on.num_clusters = num_clusters;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    on.ids.push_back(observations[i].id);
    on.clusters.push_back(fit->assignment[i]);
  }
  h.on_observations = std::move(on);
  auto body_model = std::make_shared<nn::EmbeddingClassifier>(model);
  auto body_params = std::make_shared<nn::ParameterVector>(params);
  h.assign = [fit, body_model, body_params](std::span<const double> x) {
    return fit->nearest(nn::forward_embed(*body_model, *body_params, x));
  };
  h.tags["method"] = "medi_pro";
  h.tags["grouping"] = options.kmeans.balanced ? "balanced_kmeans" : "kmeans";
  return h;
}

}  // namespace medi::proto
