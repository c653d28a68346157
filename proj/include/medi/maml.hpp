#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "medi/cata.hpp"
#include "medi/data.hpp"
#include "medi/eval.hpp"
#include "medi/gradient.hpp"
#include "medi/nn.hpp"
#include "medi/pairs.hpp"

namespace medi::maml {

struct PairLossOptions {
  std::size_t topk = 0;  // 0 picks pairs::default_topk(embed_dim)
  pairs::RankMatch match = pairs::RankMatch::set;
  pairs::ScoreMode score = pairs::ScoreMode::inner_product;
};

/// Pair BCE over ranking-statistics pseudo-labels of a set of unlabeled
/// inputs. Pseudo-labels come from the value part of the current embeddings
/// and are held constant (they are piecewise constant in the parameters).
class PairObjective {
 public:
  PairObjective(const nn::EmbeddingClassifier& model, std::vector<std::vector<double>> inputs,
                const PairLossOptions& options = {});

  template <class T>
  T evaluate(std::span<const T> params, std::span<T> grad) const;

  [[nodiscard]] std::size_t topk() const { return topk_; }

 private:
  const nn::EmbeddingClassifier* model_;
  std::vector<std::vector<double>> inputs_;
  PairLossOptions options_;
  std::size_t topk_;
};

template <class T>
T PairObjective::evaluate(std::span<const T> params, std::span<T> grad) const {
  const auto& body = model_->body();
  const auto& head = model_->head();
  const std::size_t n = inputs_.size();
  std::vector<nn::Mlp::Cache<T>> bc(n), hc(n);
  std::vector<std::vector<double>> zval(n);
  std::vector<std::vector<T>> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<T> x(inputs_[i].begin(), inputs_[i].end());
    body.forward<T>(params, x, bc[i]);
    for (const auto& v : bc[i].output) zval[i].push_back(value(v));
    head.forward<T>(params, bc[i].output, hc[i]);
    probs[i] = nn::softmax<T>(hc[i].output);
  }
  const auto labels = pairs::ranking_similarity(zval, topk_, options_.match);
  const auto scores = pairs::pair_scores<T>(probs, options_.score);
  std::vector<T> gs(grad.empty() ? 0 : n * n);
  const T loss = pairs::pair_bce_loss<T>(scores, labels, gs);
  if (grad.empty()) return loss;
  const auto gp = pairs::pair_scores_backward<T>(probs, gs, options_.score);
  for (std::size_t i = 0; i < n; ++i) {
    const auto glogits = nn::softmax_backward<T>(probs[i], gp[i]);
    std::vector<T> gz(body.output_dim(), T(0.0));
    head.backward<T>(params, hc[i], glogits, grad, gz);
    body.backward<T>(params, bc[i], gz, grad);
  }
  return loss;
}

struct MamlState {
  nn::ParameterVector params;
  double inner_rate = 1e-3;  // alpha
  double meta_rate = 0.4;    // eta
  std::size_t inner_steps = 10;
  std::size_t meta_batch = 16;
  nn::OrderMode order = nn::OrderMode::second;

  void validate() const;
};

std::vector<std::vector<double>> features_of(std::span<const data::LabeledExample> examples);

/// theta' after inner_steps gradient steps on the pair loss of the support
/// features. Labels are never read.
nn::ParameterVector inner_adapt(const MamlState& state, const nn::EmbeddingClassifier& model,
                                const std::vector<std::vector<double>>& support,
                                const PairLossOptions& options = {});

struct MetaStepResult {
  double outer_loss = 0.0;  // mean over the batch
  std::vector<double> gradient;
};

/// One update of the averaged adapt-then-evaluate loss over the batch.
MetaStepResult meta_step(MamlState& state, const nn::EmbeddingClassifier& model,
                         std::span<const data::Episode> episodes, const PairLossOptions& options = {},
                         kernels::Execution exec = kernels::Execution::parallel);

enum class Readout {
  argmax,     // cluster = argmax of a fresh K_u-wide head after adaptation
  pair_link,  // average-linkage grouping on pair scores
};

Readout parse_readout(const std::string& name);
std::string to_string(Readout r);

struct MamlConfig {
  nn::ModelConfig model;  // head_width is the meta-training head width
  std::size_t way = 5;
  std::size_t m = 1;
  std::size_t k = 15;
  double inner_rate = 1e-3;
  double meta_rate = 0.4;
  std::size_t inner_steps = 10;
  std::size_t meta_batch = 16;
  std::size_t episodes = 1000;
  nn::OrderMode order = nn::OrderMode::second;
  PairLossOptions pair;
  /// Adapt on the novel observations after this many episodes (0 = off).
  std::size_t finetune_every = 0;
  Readout readout = Readout::argmax;
  std::size_t readout_steps = 10;
  double readout_rate = 1e-3;
  std::uint64_t seed = 0;
  kernels::Execution execution = kernels::Execution::parallel;

  void validate() const;
};

struct MamlTraining {
  nn::EmbeddingClassifier model;
  MamlState state;
  std::vector<double> loss_trace;  // mean outer loss per meta step
  std::size_t episodes = 0;
  std::size_t fallback_episodes = 0;
  std::size_t finetunes = 0;
};

MamlTraining train_medi_maml(const cata::TaskSampler& sampler, const MamlConfig& config,
                             std::span<const data::Observation> novel_observations = {});

struct ReadoutOptions {
  Readout mode = Readout::argmax;
  std::size_t steps = 10;
  double rate = 1e-3;
  PairLossOptions pair;
};

/// Fresh K_u-wide head on the meta-trained body, adapted on the observations
/// with pseudo-labels only.
eval::ClusterHypothesis discover_clusters_maml(const nn::EmbeddingClassifier& model, const MamlState& state,
                                               std::span<const data::Observation> observations,
                                               std::size_t num_clusters, std::uint64_t seed,
                                               const ReadoutOptions& options = {});

/// Average-linkage agglomeration on a similarity matrix down to `clusters`
/// groups; merges the most similar pair first, lowest indices on ties.
std::vector<std::size_t> average_linkage(const std::vector<double>& similarity, std::size_t n,
                                         std::size_t clusters);

}  // namespace medi::maml
