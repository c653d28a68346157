#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medi/rng.hpp"

namespace medi::eval {
class EvaluationChannel;
}

namespace medi::data {

using ExampleId = std::uint64_t;

struct LabeledExample {
  ExampleId id = 0;
  std::vector<double> features;
  int label = 0;
  // Latent grouping recorded by the generators: the dominant clustering rule
  // for multi-rule data, the alphabet for alphabet data, -1 when unknown.
  int rule = -1;
};

/// A novel-class example as training code sees it: features only.
struct Observation {
  ExampleId id = 0;
  std::vector<double> features;
};

/// Passkey that only the evaluation channel can mint.
class EvaluationKey {
  friend class medi::eval::EvaluationChannel;
  EvaluationKey() = default;
};

/// Hidden ground truth for novel observations. Reading it requires an
/// EvaluationKey, so code that only holds observations cannot reach labels.
class SealedLabels {
 public:
  struct Entry {
    int label = 0;
    int rule = -1;
  };

  void seal(ExampleId id, int label, int rule);
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool contains(ExampleId id) const { return entries_.contains(id); }
  [[nodiscard]] const std::map<ExampleId, Entry>& reveal(const EvaluationKey&) const {
    return entries_;
  }

 private:
  std::map<ExampleId, Entry> entries_;
};

struct NovelPool {
  std::vector<Observation> observations;
  SealedLabels labels;
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledExample> examples);

  [[nodiscard]] std::span<const LabeledExample> examples() const { return examples_; }
  [[nodiscard]] std::size_t size() const { return examples_.size(); }
  [[nodiscard]] std::size_t dim() const { return dim_; }
  /// Sorted distinct class ids.
  [[nodiscard]] std::vector<int> classes() const;
  [[nodiscard]] std::map<int, std::size_t> class_counts() const;
  /// Class id to latent group; throws if a class has mixed groups.
  [[nodiscard]] std::map<int, int> class_rules() const;

 private:
  std::vector<LabeledExample> examples_;
  std::size_t dim_ = 0;
};

/// Per-dimension min-max scaling fitted on the known pool only.
struct FeatureScaler {
  std::vector<double> lo;
  std::vector<double> hi;

  static FeatureScaler fit(std::span<const LabeledExample> pool);
  void apply(std::vector<double>& x) const;
};

struct SplitPolicy {
  std::vector<int> known_classes;
  std::vector<int> novel_classes;
  std::size_t obsv_per_class = 5;
  bool normalize = true;
  std::uint64_t seed = 0;

  /// The first `count` classes (by id) are known, the rest novel.
  static SplitPolicy first_known(const Dataset& dataset, std::size_t count);
  /// Classes are assigned by latent group (alphabet-style splits).
  static SplitPolicy by_rule(const Dataset& dataset, const std::vector<int>& known_rules,
                             const std::vector<int>& novel_rules);
  /// Within every latent group, the last `novel_per_rule` classes are novel.
  static SplitPolicy tail_per_rule(const Dataset& dataset, std::size_t novel_per_rule);
};

struct DatasetSplit {
  std::vector<int> known_classes;
  std::vector<int> novel_classes;
  std::vector<LabeledExample> known_pool;
  /// The limited observation set: `obsv_per_class` per hidden class.
  std::vector<Observation> novel_observations;
  /// Every novel example with labels sealed; protocol trials draw from it.
  NovelPool novel;
  std::size_t obsv_per_class = 0;
  std::optional<FeatureScaler> scaler;
};

DatasetSplit split_known_novel(const Dataset& dataset, const SplitPolicy& policy);

struct Episode {
  std::size_t way = 0;
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<int> classes;
  /// Class-major: support[c * m + j] belongs to classes[c].
  std::vector<LabeledExample> support;
  std::vector<LabeledExample> query;
  std::optional<std::size_t> source_view;
  bool cata_fallback = false;
};

/// Samples `way` classes uniformly without replacement among classes with at
/// least m + k examples, then m support and k query examples per class.
Episode make_episode(std::span<const LabeledExample> pool, std::size_t way, std::size_t m,
                     std::size_t k, Rng& rng);

/// Whether make_episode can succeed on this pool.
bool episode_feasible(std::span<const LabeledExample> pool, std::size_t way, std::size_t m,
                      std::size_t k);

// Columnar text: "id<TAB>label<TAB>rule<TAB>f0,f1,...", '#' starts a comment.
void write_columnar(std::ostream& out, const Dataset& dataset);
Dataset read_columnar(std::istream& in);
void save_columnar(const std::string& path, const Dataset& dataset);
Dataset load_columnar(const std::string& path);

}  // namespace medi::data
