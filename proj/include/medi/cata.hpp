#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "medi/data.hpp"
#include "medi/error.hpp"
#include "medi/kernels.hpp"
#include "medi/nn.hpp"
#include "medi/optim.hpp"
#include "medi/params.hpp"

namespace medi::cata {

struct SamplerConfig {
  std::size_t num_views = 3;
  double tradeoff = 1.0 / 3.0;
  std::size_t steps = 50;
  double extractor_rate = 0.01;
  double head_rate = 0.001;
  nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;
  /// Shared extractor G; its last layer is rectified like the hidden ones.
  std::vector<std::size_t> extractor_dims{32, 32};
  /// Hidden widths of each head F_i; a final layer over the known classes
  /// and a softmax follow.
  std::vector<std::size_t> head_hidden{16, 16};
  nn::Activation activation = nn::Activation::relu;
  std::uint64_t seed = 0;
  kernels::Execution execution = kernels::Execution::parallel;

  void validate() const;
};

/// Shared extractor plus K heads, each a small softmax classifier over the
/// known classes.
class MultiViewSamplerModel {
 public:
  MultiViewSamplerModel(std::size_t input_dim, std::vector<int> classes, const SamplerConfig& config);

  [[nodiscard]] std::size_t num_views() const { return head_params.size(); }
  [[nodiscard]] std::size_t input_dim() const { return extractor_.input_dim(); }
  [[nodiscard]] const std::vector<int>& classes() const { return classes_; }
  [[nodiscard]] std::size_t class_index(int label) const;
  [[nodiscard]] const nn::Mlp& extractor() const { return extractor_; }
  [[nodiscard]] const nn::Mlp& head() const { return head_; }
  [[nodiscard]] const nn::Layout& head_layout() const { return head_layout_; }

  /// Flattened first dense layer of each head, read from head_params.
  [[nodiscard]] std::vector<std::vector<double>> first_layer_weights() const;

  /// P_i(y | x) for every head i.
  [[nodiscard]] std::vector<double> label_probabilities(std::span<const double> x, int label) const;

  nn::ParameterVector extractor_params;
  std::vector<nn::ParameterVector> head_params;
  double tradeoff = 0.0;

 private:
  std::vector<int> classes_;
  std::map<int, std::size_t> index_;
  nn::Mlp extractor_;
  nn::Mlp head_;
  nn::Layout head_layout_;
};

/// Mean over unordered head pairs of |W_i . W_j|.
double mean_abs_inner_product(const std::vector<std::vector<double>>& weights);

struct SamplerLoss {
  double loss = 0.0;
  double cross_entropy = 0.0;  // mean over examples and heads
  double penalty = 0.0;
  std::vector<double> extractor_grad;
  std::vector<std::vector<double>> head_grads;
};

/// Mean cross-entropy over examples and heads plus
/// lambda * mean_{i<j} |W_i . W_j|. Gradients are filled when requested.
SamplerLoss sampler_loss(const MultiViewSamplerModel& model, std::span<const data::LabeledExample> batch,
                         bool with_gradient = false,
                         kernels::Execution exec = kernels::Execution::parallel);

struct CataTraining {
  MultiViewSamplerModel model;
  std::vector<double> loss_trace;  // loss before each step, then the final loss
  double initial_orthogonality = 0.0;
  double final_orthogonality = 0.0;
};

/// Full-batch training on the known pool: the extractor moves at
/// extractor_rate, every head at head_rate.
CataTraining train_cata(std::span<const data::LabeledExample> known_pool, const SamplerConfig& config);
CataTraining train_cata(const data::DatasetSplit& split, const SamplerConfig& config);

struct ViewPartition {
  std::size_t num_views = 0;
  std::map<data::ExampleId, std::size_t> assignment;  // 0-based view index
  std::vector<std::size_t> sizes;

  void validate() const;
};

/// View of x is the head giving its own label the highest probability; ties
/// go to the lowest view index.
ViewPartition assign_views(const MultiViewSamplerModel& model, std::span<const data::LabeledExample> pool,
                           kernels::Execution exec = kernels::Execution::parallel);

/// Lowest index among the largest entries.
std::size_t argmax_lowest(std::span<const double> values);

// "<id>\t<view>" per line after a "# views K" header.
void write_partition(std::ostream& out, const ViewPartition& partition);
ViewPartition read_partition(std::istream& in);
void save_partition(const std::string& path, const ViewPartition& partition);
ViewPartition load_partition(const std::string& path);

/// Fraction of examples whose view maps to their latent rule under the best
/// one-to-one view/rule matching.
double view_purity(const ViewPartition& partition, std::span<const data::LabeledExample> pool);

struct ViewFeasibility {
  std::size_t view = 0;
  std::size_t size = 0;
  std::size_t eligible_classes = 0;  // classes with at least m + k examples in the view
  bool feasible = false;
};

class CataInfeasible : public InfeasibleError {
 public:
  CataInfeasible(const std::string& what, std::vector<ViewFeasibility> diagnostics)
      : InfeasibleError(what), diagnostics_(std::move(diagnostics)) {}
  [[nodiscard]] const std::vector<ViewFeasibility>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<ViewFeasibility> diagnostics_;
};

/// Episode source: uniform over the pool, or rule-aware through a partition.
class TaskSampler {
 public:
  static TaskSampler uniform(std::vector<data::LabeledExample> pool);
  /// With `fallback`, episodes that no view can support come from the whole
  /// pool and carry cata_fallback.
  static TaskSampler by_views(std::vector<data::LabeledExample> pool, const ViewPartition& partition,
                              bool fallback = true);

  [[nodiscard]] bool uses_views() const { return !views_.empty(); }
  [[nodiscard]] std::span<const data::LabeledExample> pool() const { return pool_; }
  [[nodiscard]] std::vector<ViewFeasibility> feasibility(std::size_t way, std::size_t m,
                                                         std::size_t k) const;

  /// Views are drawn with probability proportional to their size among the
  /// feasible ones.
  data::Episode sample(std::size_t way, std::size_t m, std::size_t k, Rng& rng) const;

 private:
  std::vector<data::LabeledExample> pool_;
  std::vector<std::vector<data::LabeledExample>> views_;
  bool fallback_ = false;
};

/// Strict rule-aware draw; throws CataInfeasible when no view supports the
/// episode shape.
data::Episode sample_task(const ViewPartition& partition, std::span<const data::LabeledExample> pool,
                          std::size_t way, std::size_t m, std::size_t k, Rng& rng);

}  // namespace medi::cata
