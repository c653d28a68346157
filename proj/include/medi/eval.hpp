#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medi/data.hpp"
#include "medi/kernels.hpp"

namespace medi::eval {

struct ClusterAssignment {
  std::vector<data::ExampleId> ids;
  std::vector<std::size_t> clusters;
  std::size_t num_clusters = 0;

  /// Indices in [0, num_clusters) and one cluster per id.
  void validate() const;
};

/// The one sanctioned route from sealed novel labels to code that scores
/// predictions.
class EvaluationChannel {
 public:
  explicit EvaluationChannel(const data::SealedLabels& sealed) : sealed_(&sealed) {}

  [[nodiscard]] std::map<data::ExampleId, int> labels() const;
  [[nodiscard]] const std::map<data::ExampleId, data::SealedLabels::Entry>& entries() const;

 private:
  const data::SealedLabels* sealed_;
};

/// Maximum-weight assignment on a square matrix (Hungarian method). Returns
/// the column matched to each row.
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight);

/// Accuracy under the best one-to-one map from cluster indices to labels.
/// The contingency matrix is zero-padded to square when counts differ.
double best_mapping_accuracy(std::span<const std::size_t> clusters, std::span<const int> labels);

/// Same as best_mapping_accuracy, keyed by observation id.
double clustering_accuracy(const ClusterAssignment& pred,
                           const std::map<data::ExampleId, int>& truth);

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  bool balanced = false;  // equal cluster sizes (floor/ceil of N/K)
  kernels::Execution execution = kernels::Execution::parallel;
};

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<double> centroids;  // k x dim, row-major
  std::size_t dim = 0;
  double inertia = 0.0;
  std::size_t best_restart = 0;
  std::size_t iterations = 0;

  /// Nearest centroid, ties to the lowest index.
  [[nodiscard]] std::size_t nearest(std::span<const double> x) const;
};

/// Lloyd iterations from k-means++ seeding, best of `restarts` by inertia
/// (ties to the lowest restart). Deterministic per seed.
KMeansResult kmeans(std::span<const double> points, std::size_t rows, std::size_t dim,
                    std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// A fitted clustering hypothesis: assigns any feature vector to a cluster.
struct ClusterHypothesis {
  std::size_t num_clusters = 0;
  std::function<std::size_t(std::span<const double>)> assign;
  std::optional<ClusterAssignment> on_observations;
  std::map<std::string, std::string> tags;
};

/// Builds a hypothesis from unlabeled observations.
using DiscoveryMethod = std::function<ClusterHypothesis(std::span<const data::Observation>,
                                                        std::size_t num_clusters,
                                                        std::uint64_t seed)>;

/// k-means on raw observation features.
ClusterHypothesis kmeans_baseline(std::span<const data::Observation> observations,
                                  std::size_t num_clusters, std::uint64_t seed,
                                  const KMeansOptions& options = {});

enum class GroupMode {
  per_group,  // every trial draws its classes from a single latent group
  joint,      // classes drawn from all novel classes
};

GroupMode parse_group_mode(const std::string& name);
std::string to_string(GroupMode mode);

struct ProtocolConfig {
  std::size_t way = 5;
  std::size_t obsv = 5;
  std::size_t trials = 10;
  /// Held-out points per class scored after fitting; 0 scores the observations.
  std::size_t eval_per_class = 10;
  GroupMode group_mode = GroupMode::per_group;
  std::uint64_t seed = 0;
  kernels::Execution execution = kernels::Execution::parallel;
};

struct TrialResult {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double acc = 0.0;
  double observation_acc = 0.0;
  std::vector<int> classes;
  int group = -1;
  std::map<std::string, std::string> tags;
};

struct ProtocolSummary {
  std::vector<TrialResult> trials;
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean and standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

/// R independent novel-class trials; each draws fresh observations from the
/// sealed pool, fits `method`, and scores held-out points.
ProtocolSummary run_protocol(const DiscoveryMethod& method, const data::NovelPool& novel,
                             const ProtocolConfig& config);

}  // namespace medi::eval
