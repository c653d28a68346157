#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "medi/cata.hpp"
#include "medi/data.hpp"
#include "medi/eval.hpp"
#include "medi/maml.hpp"
#include "medi/proto.hpp"
#include "medi/synthetic.hpp"

namespace medi::experiment {

enum class Method { medi_maml, medi_pro, kmeans };
enum class SamplerKind { cata, uniform };
enum class DatasetKind { multirule, alphabet, file };
enum class SplitKind { tail_per_rule, by_rule, first_known };

Method parse_method(const std::string& name);
std::string to_string(Method m);
SamplerKind parse_sampler(const std::string& name);
std::string to_string(SamplerKind s);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::multirule;
  std::string path;  // for kind = file
  data::SyntheticMultiRuleSpec multirule;
  data::AlphabetSpec alphabet;
};

struct SplitConfig {
  SplitKind kind = SplitKind::tail_per_rule;
  std::size_t novel_per_rule = 5;
  std::vector<int> known_rules;
  std::vector<int> novel_rules;
  std::size_t known_count = 0;
  bool normalize = true;
};

/// Everything one experiment needs. Sections and keys mirror the INI file.
struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::medi_pro;
  SamplerKind sampler = SamplerKind::uniform;
  bool cata_fallback = true;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir;

  DatasetConfig dataset;
  SplitConfig split;
  eval::ProtocolConfig protocol;
  nn::ModelConfig model;  // input_dim is filled from the data
  cata::SamplerConfig cata;
  proto::ProtoConfig proto;
  bool proto_balanced = false;
  maml::MamlConfig maml;
  eval::KMeansOptions kmeans;

  /// Checks every module precondition that does not need the data.
  void validate() const;
  /// Canonical "section.key=value" lines of the fields that can change a
  /// result; seeds, name and output location are excluded.
  [[nodiscard]] std::string canonical() const;
  [[nodiscard]] std::string hash() const;
  [[nodiscard]] std::string dataset_label() const;
};

/// Parses the INI-style text; unknown sections or keys are errors.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
/// Applies "section.key=value" overrides as if they appeared in the file.
void apply_override(ExperimentConfig& config, const std::string& assignment);

struct TrialRecord {
  std::uint64_t seed = 0;
  std::size_t trial = 0;
  double acc = 0.0;
  double wall_time = 0.0;  // seconds for the whole seed cell
  std::size_t fallback_episodes = 0;
};

struct RunRecord {
  std::string run_id;
  std::string config_hash;
  std::string name;
  std::string method;
  std::string sampler;
  std::string dataset;
  std::size_t way = 0;
  std::size_t obsv = 0;
  std::string order_mode;
  std::vector<TrialRecord> trials;
  double mean = 0.0;
  double std = 0.0;
  double wall_time = 0.0;
  std::size_t fallback_episodes = 0;

  /// Mean and population std over trial ACCs.
  void recompute();
};

struct RunOptions {
  bool resume = true;
  bool write_results = true;
  std::string results_file = "results.jsonl";
};

/// Schema: {run_id, config_hash, name, method, sampler, dataset, way, obsv,
/// order_mode, seed, trial, acc, wall_time, fallback_episodes}.
std::string to_jsonl(const RunRecord& run, const TrialRecord& trial);

struct SeedCell {
  data::Dataset dataset;
  data::DatasetSplit split;
};

/// Builds the data and split for one seed.
SeedCell prepare_seed(const ExperimentConfig& config, std::uint64_t seed);

/// Trains and evaluates every seed. Each finished seed is appended to the
/// results file at once, and seeds already recorded under the same run_id
/// are reloaded instead of rerun.
RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::vector<RunRecord> load_records(const std::string& results_path);

enum class ReportStyle { bar, table, both };
ReportStyle parse_report_style(const std::string& name);

/// "67.4±2.1": ACC and standard deviation in percent.
std::string format_mean_std(double mean, double std);

/// One SVG bar chart per (dataset, way, obsv) plus a text table. Returns the
/// files written.
std::vector<std::string> emit_report(const std::vector<RunRecord>& records, const std::string& out_dir,
                                     ReportStyle style = ReportStyle::both);

/// Output root: explicit value, else $MEDI_OUT, else "medi-out".
std::string resolve_out_dir(const std::string& explicit_dir);

}  // namespace medi::experiment
