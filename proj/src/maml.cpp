#include "medi/maml.hpp"

#include <algorithm>
#include <limits>
#include <memory>

#include "medi/parallel.hpp"

namespace medi::maml {

PairObjective::PairObjective(const nn::EmbeddingClassifier& model, std::vector<std::vector<double>> inputs,
                             const PairLossOptions& options)
    : model_(&model), inputs_(std::move(inputs)), options_(options) {
  if (!model.has_head()) throw ConfigError("pair loss needs a classifier head");
  if (inputs_.empty()) throw ValidationError("pair loss: no inputs");
  topk_ = options.topk ? options.topk : pairs::default_topk(model.config().embed_dim);
  if (topk_ == 0 || topk_ > model.config().embed_dim) {
    throw ConfigError("pair loss: topk " + std::to_string(topk_) + " invalid for embedding dimension " +
                      std::to_string(model.config().embed_dim));
  }
}

void MamlState::validate() const {
  if (!(inner_rate > 0.0)) throw ConfigError("MEDI-MAML inner rate alpha must be positive");
  if (!(meta_rate > 0.0)) throw ConfigError("MEDI-MAML meta rate eta must be positive");
  if (inner_steps < 1) throw ConfigError("MEDI-MAML needs at least one inner step");
  if (meta_batch < 1) throw ConfigError("MEDI-MAML meta batch must be positive");
}

std::vector<std::vector<double>> features_of(std::span<const data::LabeledExample> examples) {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.features);
  return out;
}

nn::ParameterVector inner_adapt(const MamlState& state, const nn::EmbeddingClassifier& model,
                                const std::vector<std::vector<double>>& support,
                                const PairLossOptions& options) {
  if (support.empty()) throw ValidationError("inner_adapt: empty support");
  if (!(state.inner_rate >= 0.0)) throw ConfigError("inner_adapt: rate must be nonnegative");
  const PairObjective obj(model, support, options);
  nn::ParameterVector out = state.params;
  out.values = nn::adapt(obj, state.params.values, state.inner_rate, state.inner_steps);
  return out;
}

MetaStepResult meta_step(MamlState& state, const nn::EmbeddingClassifier& model,
                         std::span<const data::Episode> episodes, const PairLossOptions& options,
                         kernels::Execution exec) {
  if (episodes.empty()) throw ValidationError("meta_step: empty batch");
  MetaStepResult res;
  res.gradient.assign(state.params.size(), 0.0);
  const double total = chunked_accumulate(
      episodes.size(), state.params.size(), 1, exec, res.gradient,
      [&](std::size_t e, std::span<double> g) {
        try {
          const PairObjective inner(model, features_of(episodes[e].support), options);
          const PairObjective outer(model, features_of(episodes[e].query), options);
          auto r = nn::gradient_through_adaptation(inner, outer, state.params.values, state.inner_rate,
                                                   state.inner_steps, state.order);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.meta_gradient[i];
          return r.outer_loss;
        } catch (const NumericError& err) {
          throw NumericError("meta_step: episode " + std::to_string(e) + ": " + err.what());
        }
      });
  const double inv = 1.0 / static_cast<double>(episodes.size());
  for (auto& g : res.gradient) g *= inv;
  res.outer_loss = total * inv;
  for (std::size_t i = 0; i < res.gradient.size(); ++i) {
    state.params.values[i] -= state.meta_rate * res.gradient[i];
  }
  return res;
}

Readout parse_readout(const std::string& name) {
  if (name == "argmax") return Readout::argmax;
  if (name == "pair_link") return Readout::pair_link;
  throw ConfigError("unknown readout '" + name + "' (expected argmax|pair_link)");
}

std::string to_string(Readout r) { return r == Readout::argmax ? "argmax" : "pair_link"; }

void MamlConfig::validate() const {
  model.validate();
  if (model.head_width == 0) throw ConfigError("MEDI-MAML needs a classifier head (head_width > 0)");
  if (way < 2 || m == 0 || k == 0) throw ConfigError("MEDI-MAML episodes need way >= 2, m >= 1, k >= 1");
  MamlState{nn::ParameterVector{}, inner_rate, meta_rate, inner_steps, meta_batch, order}.validate();
  if (readout_rate < 0.0) throw ConfigError("MEDI-MAML readout rate must be nonnegative");
}

MamlTraining train_medi_maml(const cata::TaskSampler& sampler, const MamlConfig& config,
                             std::span<const data::Observation> novel_observations) {
  config.validate();
  nn::EmbeddingClassifier model(config.model);
  MamlTraining out{model,
                   MamlState{model.initialize(substream_seed(config.seed, "init")), config.inner_rate,
                             config.meta_rate, config.inner_steps, config.meta_batch, config.order},
                   {}, 0, 0, 0};
  std::vector<std::vector<double>> novel;
  for (const auto& o : novel_observations) novel.push_back(o.features);
  Rng rng = make_rng(config.seed, "sampler");
  std::size_t next_finetune = config.finetune_every;
  while (out.episodes < config.episodes) {
    const std::size_t batch = std::min(config.meta_batch, config.episodes - out.episodes);
    std::vector<data::Episode> episodes;
    for (std::size_t b = 0; b < batch; ++b) {
      episodes.push_back(sampler.sample(config.way, config.m, config.k, rng));
      out.fallback_episodes += episodes.back().cata_fallback ? 1 : 0;
    }
    try {
      out.loss_trace.push_back(
          meta_step(out.state, model, episodes, config.pair, config.execution).outer_loss);
    } catch (const NumericError& e) {
      throw NumericError("MEDI-MAML after " + std::to_string(out.episodes) + " episodes: " + e.what());
    }
    out.episodes += batch;
    if (config.finetune_every > 0 && !novel.empty() && out.episodes >= next_finetune) {
      out.state.params = inner_adapt(out.state, model, novel, config.pair);
      ++out.finetunes;
      next_finetune += config.finetune_every;
    }
  }
  out.state.params.check_finite("MEDI-MAML parameters");
  return out;
}

std::vector<std::size_t> average_linkage(const std::vector<double>& similarity, std::size_t n,
                                         std::size_t clusters) {
  if (similarity.size() != n * n) throw ShapeError("average_linkage: similarity must be n x n");
  if (clusters == 0 || clusters > n) throw ConfigError("average_linkage: cluster count out of range");
  std::vector<std::vector<std::size_t>> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[i] = {i};
  auto link = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double s = 0.0;
    for (auto i : a) {
      for (auto j : b) s += similarity[i * n + j];
    }
    return s / static_cast<double>(a.size() * b.size());
  };
  while (groups.size() > clusters) {
    std::size_t ba = 0, bb = 1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        const double s = link(groups[a], groups[b]);
        if (s > best) {
          best = s;
          ba = a;
          bb = b;
        }
      }
    }
    groups[ba].insert(groups[ba].end(), groups[bb].begin(), groups[bb].end());
    groups.erase(groups.begin() + static_cast<long>(bb));
  }
  std::vector<std::size_t> out(n);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto i : groups[g]) out[i] = g;
  }
  return out;
}

eval::ClusterHypothesis discover_clusters_maml(const nn::EmbeddingClassifier& model, const MamlState& state,
                                               std::span<const data::Observation> observations,
                                               std::size_t num_clusters, std::uint64_t seed,
                                               const ReadoutOptions& options) {
  if (observations.size() < 2) throw ValidationError("discover_clusters_maml: need at least 2 observations");
  if (num_clusters == 0) throw ConfigError("discover_clusters_maml: need at least one cluster");
  auto [fresh_model, fresh_params] = model.with_fresh_head(state.params, num_clusters, seed);
  auto m = std::make_shared<nn::EmbeddingClassifier>(std::move(fresh_model));
  std::vector<std::vector<double>> xs;
  for (const auto& o : observations) xs.push_back(o.features);
  MamlState readout = state;
  readout.params = std::move(fresh_params);
  readout.inner_steps = options.steps;
  readout.inner_rate = options.rate;
  auto params = std::make_shared<nn::ParameterVector>(
      options.steps ? inner_adapt(readout, *m, xs, options.pair) : readout.params);
  auto probs_of = [m, params](std::span<const double> x) {
    return nn::head_output(*m, *params, nn::forward_embed(*m, *params, x));
  };

  eval::ClusterHypothesis h;
  h.num_clusters = num_clusters;
  h.tags["method"] = "medi_maml";
  h.tags["readout"] = to_string(options.mode);
  eval::ClusterAssignment on;
  on.num_clusters = num_clusters;
  for (const auto& o : observations) on.ids.push_back(o.id);

  if (options.mode == Readout::argmax) {
    for (const auto& x : xs) on.clusters.push_back(cata::argmax_lowest(probs_of(x)));
    h.assign = [probs_of](std::span<const double> x) { return cata::argmax_lowest(probs_of(x)); };
    h.on_observations = std::move(on);
    return h;
  }
  if (num_clusters > observations.size()) {
    throw ConfigError("pair-link readout: more clusters than observations");
  }
  auto probs = std::make_shared<std::vector<std::vector<double>>>();
  for (const auto& x : xs) probs->push_back(probs_of(x));
  const auto scores = pairs::pair_scores<double>(*probs, options.pair.score);
  auto groups = std::make_shared<std::vector<std::size_t>>(average_linkage(scores, xs.size(), num_clusters));
  on.clusters = *groups;
  h.on_observations = std::move(on);
  const auto mode = options.pair.score;
  h.assign = [probs_of, probs, groups, num_clusters, mode](std::span<const double> x) {
    std::vector<std::vector<double>> both{probs_of(x)};
    std::vector<double> sum(num_clusters, 0.0), count(num_clusters, 0.0);
    for (std::size_t i = 0; i < probs->size(); ++i) {
      both.resize(1);
      both.push_back((*probs)[i]);
      sum[(*groups)[i]] += pairs::pair_scores<double>(both, mode)[1];
      count[(*groups)[i]] += 1.0;
    }
    for (std::size_t c = 0; c < num_clusters; ++c) sum[c] /= count[c];
    return cata::argmax_lowest(sum);
  };
  return h;
}

}  // namespace medi::maml
