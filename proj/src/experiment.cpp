#include "medi/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <json.hpp>
#include <set>
#include <sstream>

namespace medi::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

Method parse_method(const std::string& name) {
  if (name == "medi_maml" || name == "maml") return Method::medi_maml;
  if (name == "medi_pro" || name == "pro" || name == "proto") return Method::medi_pro;
  if (name == "kmeans") return Method::kmeans;
  throw ConfigError("unknown method '" + name + "' (expected medi_maml|medi_pro|kmeans)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::medi_maml:
      return "medi_maml";
    case Method::medi_pro:
      return "medi_pro";
    case Method::kmeans:
      break;
  }
  return "kmeans";
}

SamplerKind parse_sampler(const std::string& name) {
  if (name == "cata") return SamplerKind::cata;
  if (name == "uniform") return SamplerKind::uniform;
  throw ConfigError("unknown sampler '" + name + "' (expected cata|uniform)");
}

std::string to_string(SamplerKind s) { return s == SamplerKind::cata ? "cata" : "uniform"; }

namespace {

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "multirule") return DatasetKind::multirule;
  if (s == "alphabet") return DatasetKind::alphabet;
  if (s == "file") return DatasetKind::file;
  throw ConfigError("unknown dataset kind '" + s + "' (expected multirule|alphabet|file)");
}

std::string dataset_kind_name(DatasetKind k) {
  return k == DatasetKind::multirule ? "multirule" : k == DatasetKind::alphabet ? "alphabet" : "file";
}

SplitKind parse_split_kind(const std::string& s) {
  if (s == "tail_per_rule") return SplitKind::tail_per_rule;
  if (s == "by_rule") return SplitKind::by_rule;
  if (s == "first_known") return SplitKind::first_known;
  throw ConfigError("unknown split policy '" + s + "' (expected tail_per_rule|by_rule|first_known)");
}

std::string split_kind_name(SplitKind k) {
  return k == SplitKind::tail_per_rule ? "tail_per_rule" : k == SplitKind::by_rule ? "by_rule" : "first_known";
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

template <class Int>
Int to_int(const std::string& key, const std::string& text) {
  Int v{};
  const std::string t = trim(text);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (!t.empty() && t[0] == '-') throw ConfigError(key + ": must be nonnegative");
  return to_int<std::size_t>(key, t);
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  // Fractions such as 1/3 are accepted for rates and tradeoffs.
  if (const auto slash = t.find('/'); slash != std::string::npos) {
    const double den = to_double(key, t.substr(slash + 1));
    if (den == 0.0) throw ConfigError(key + ": division by zero");
    return to_double(key, t.substr(0, slash)) / den;
  }
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a finite number, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

template <class T, class F>
std::vector<T> to_list(const std::string& text, F&& one) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    // Ranges "a-b" for nonnegative integer lists.
    if (const auto dash = item.find('-'); dash != std::string::npos && dash > 0) {
      const T lo = one(item.substr(0, dash));
      const T hi = one(item.substr(dash + 1));
      for (T v = lo; v <= hi; ++v) out.push_back(v);
      continue;
    }
    out.push_back(one(item));
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string b(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;  // "section.name"
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  /// Whether the field can change results; nullptr means never hashed.
  std::function<bool(const ExperimentConfig&)> relevant;
};

bool always(const ExperimentConfig&) { return true; }
bool uses_cata(const ExperimentConfig& c) { return c.sampler == SamplerKind::cata && c.method != Method::kmeans; }
bool uses_pro(const ExperimentConfig& c) { return c.method == Method::medi_pro; }
bool uses_maml(const ExperimentConfig& c) { return c.method == Method::medi_maml; }
bool uses_model(const ExperimentConfig& c) { return c.method != Method::kmeans; }
bool uses_kmeans(const ExperimentConfig& c) { return c.method != Method::medi_maml; }
bool is_multirule(const ExperimentConfig& c) { return c.dataset.kind == DatasetKind::multirule; }
bool is_alphabet(const ExperimentConfig& c) { return c.dataset.kind == DatasetKind::alphabet; }
bool is_file(const ExperimentConfig& c) { return c.dataset.kind == DatasetKind::file; }

#define MEDI_SIZE(KEY, EXPR, REL)                                                          \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_size(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.EXPR); }, REL}
#define MEDI_DOUBLE(KEY, EXPR, REL)                                                          \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_double(KEY, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.EXPR); }, REL}
#define MEDI_BOOL(KEY, EXPR, REL)                                                          \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = to_bool(KEY, v); }, \
        [](const ExperimentConfig& c) { return b(c.EXPR); }, REL}
#define MEDI_DIMS(KEY, EXPR, REL)                                                       \
  Field{KEY,                                                                            \
        [](ExperimentConfig& c, const std::string& v) {                                 \
          c.EXPR = to_list<std::size_t>(v, [](const std::string& s) { return to_size(KEY, s); }); \
        },                                                                              \
        [](const ExperimentConfig& c) { return fmt_list(c.EXPR); }, REL}
#define MEDI_ENUM(KEY, EXPR, PARSE, NAME, REL)                                           \
  Field{KEY, [](ExperimentConfig& c, const std::string& v) { c.EXPR = PARSE(trim(v)); }, \
        [](const ExperimentConfig& c) { return NAME(c.EXPR); }, REL}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"experiment.name", [](ExperimentConfig& c, const std::string& v) { c.name = trim(v); },
            [](const ExperimentConfig& c) { return c.name; }, nullptr},
      MEDI_ENUM("experiment.method", method, parse_method, to_string, always),
      MEDI_ENUM("experiment.sampler", sampler, parse_sampler, to_string, uses_model),
      MEDI_BOOL("experiment.cata_fallback", cata_fallback, uses_cata),
      Field{"experiment.seeds",
            [](ExperimentConfig& c, const std::string& v) {
              c.seeds = to_list<std::uint64_t>(
                  v, [](const std::string& s) { return to_int<std::uint64_t>("experiment.seeds", s); });
            },
            [](const ExperimentConfig& c) { return fmt_list(c.seeds); }, nullptr},
      Field{"experiment.out", [](ExperimentConfig& c, const std::string& v) { c.out_dir = trim(v); },
            [](const ExperimentConfig& c) { return c.out_dir; }, nullptr},
      Field{"experiment.execution",
            [](ExperimentConfig& c, const std::string& v) {
              const std::string t = trim(v);
              if (t != "serial" && t != "parallel") {
                throw ConfigError("experiment.execution: expected serial|parallel");
              }
              const auto e = t == "serial" ? kernels::Execution::serial : kernels::Execution::parallel;
              c.protocol.execution = c.cata.execution = c.proto.execution = c.maml.execution =
                  c.kmeans.execution = e;
            },
            [](const ExperimentConfig& c) {
              return std::string(c.protocol.execution == kernels::Execution::serial ? "serial" : "parallel");
            },
            nullptr},

      MEDI_ENUM("dataset.kind", dataset.kind, parse_dataset_kind, dataset_kind_name, always),
      Field{"dataset.path", [](ExperimentConfig& c, const std::string& v) { c.dataset.path = trim(v); },
            [](const ExperimentConfig& c) { return c.dataset.path; }, is_file},
      MEDI_SIZE("multirule.num_rules", dataset.multirule.num_rules, is_multirule),
      MEDI_SIZE("multirule.classes_per_rule", dataset.multirule.classes_per_rule, is_multirule),
      MEDI_SIZE("multirule.feature_dim", dataset.multirule.feature_dim, is_multirule),
      MEDI_DOUBLE("multirule.noise", dataset.multirule.noise_scale, is_multirule),
      MEDI_SIZE("multirule.samples_per_class", dataset.multirule.samples_per_class, is_multirule),
      MEDI_BOOL("multirule.distractors", dataset.multirule.distractors, is_multirule),
      MEDI_SIZE("alphabet.num_alphabets", dataset.alphabet.num_alphabets, is_alphabet),
      MEDI_SIZE("alphabet.characters", dataset.alphabet.characters_per_alphabet, is_alphabet),
      MEDI_SIZE("alphabet.samples", dataset.alphabet.samples_per_character, is_alphabet),
      MEDI_SIZE("alphabet.feature_dim", dataset.alphabet.feature_dim, is_alphabet),
      MEDI_SIZE("alphabet.latent_dim", dataset.alphabet.latent_dim, is_alphabet),
      MEDI_SIZE("alphabet.nuisance_dim", dataset.alphabet.nuisance_dim, is_alphabet),
      MEDI_DOUBLE("alphabet.style_spread", dataset.alphabet.style_spread, is_alphabet),
      MEDI_DOUBLE("alphabet.character_spread", dataset.alphabet.character_spread, is_alphabet),
      MEDI_DOUBLE("alphabet.nuisance_scale", dataset.alphabet.nuisance_scale, is_alphabet),
      MEDI_DOUBLE("alphabet.jitter", dataset.alphabet.jitter, is_alphabet),

      MEDI_ENUM("split.policy", split.kind, parse_split_kind, split_kind_name, always),
      MEDI_SIZE("split.novel_per_rule", split.novel_per_rule,
                [](const ExperimentConfig& c) { return c.split.kind == SplitKind::tail_per_rule; }),
      Field{"split.known_rules",
            [](ExperimentConfig& c, const std::string& v) {
              c.split.known_rules = to_list<int>(v, [](const std::string& s) { return to_int<int>("split.known_rules", s); });
            },
            [](const ExperimentConfig& c) { return fmt_list(c.split.known_rules); },
            [](const ExperimentConfig& c) { return c.split.kind == SplitKind::by_rule; }},
      Field{"split.novel_rules",
            [](ExperimentConfig& c, const std::string& v) {
              c.split.novel_rules = to_list<int>(v, [](const std::string& s) { return to_int<int>("split.novel_rules", s); });
            },
            [](const ExperimentConfig& c) { return fmt_list(c.split.novel_rules); },
            [](const ExperimentConfig& c) { return c.split.kind == SplitKind::by_rule; }},
      MEDI_SIZE("split.known_count", split.known_count,
                [](const ExperimentConfig& c) { return c.split.kind == SplitKind::first_known; }),
      MEDI_BOOL("split.normalize", split.normalize, always),

      MEDI_SIZE("protocol.way", protocol.way, always),
      MEDI_SIZE("protocol.obsv", protocol.obsv, always),
      MEDI_SIZE("protocol.trials", protocol.trials, always),
      MEDI_SIZE("protocol.eval_per_class", protocol.eval_per_class, always),
      MEDI_ENUM("protocol.group_mode", protocol.group_mode, eval::parse_group_mode, eval::to_string, always),

      MEDI_DIMS("model.hidden", model.hidden_dims, uses_model),
      MEDI_SIZE("model.embed", model.embed_dim, uses_model),
      MEDI_ENUM("model.activation", model.activation, nn::parse_activation, nn::to_string, uses_model),
      MEDI_BOOL("model.normalize", model.use_normalization_layers, uses_model),

      MEDI_SIZE("cata.views", cata.num_views, uses_cata),
      MEDI_DOUBLE("cata.tradeoff", cata.tradeoff, uses_cata),
      MEDI_SIZE("cata.steps", cata.steps, uses_cata),
      MEDI_DOUBLE("cata.extractor_rate", cata.extractor_rate, uses_cata),
      MEDI_DOUBLE("cata.head_rate", cata.head_rate, uses_cata),
      MEDI_ENUM("cata.optimizer", cata.optimizer, nn::parse_optimizer, nn::to_string, uses_cata),
      MEDI_DIMS("cata.extractor", cata.extractor_dims, uses_cata),
      MEDI_DIMS("cata.head_hidden", cata.head_hidden, uses_cata),
      MEDI_ENUM("cata.activation", cata.activation, nn::parse_activation, nn::to_string, uses_cata),

      MEDI_SIZE("proto.way", proto.way, uses_pro),
      MEDI_SIZE("proto.ku", proto.ku, uses_pro),
      MEDI_SIZE("proto.m", proto.m, uses_pro),
      MEDI_SIZE("proto.k", proto.k, uses_pro),
      MEDI_SIZE("proto.steps", proto.steps, uses_pro),
      MEDI_SIZE("proto.tasks", proto.tasks, uses_pro),
      MEDI_DOUBLE("proto.rate", proto.rate, uses_pro),
      MEDI_SIZE("proto.halve_every", proto.halve_every, uses_pro),
      MEDI_ENUM("proto.optimizer", proto.optimizer, nn::parse_optimizer, nn::to_string, uses_pro),
      MEDI_ENUM("proto.distance", proto.distance, proto::parse_distance, proto::to_string, uses_pro),
      MEDI_BOOL("proto.balanced", proto_balanced, uses_pro),

      MEDI_SIZE("maml.way", maml.way, uses_maml),
      MEDI_SIZE("maml.m", maml.m, uses_maml),
      MEDI_SIZE("maml.k", maml.k, uses_maml),
      MEDI_SIZE("maml.head_width", maml.model.head_width, uses_maml),
      MEDI_DOUBLE("maml.inner_rate", maml.inner_rate, uses_maml),
      MEDI_DOUBLE("maml.meta_rate", maml.meta_rate, uses_maml),
      MEDI_SIZE("maml.inner_steps", maml.inner_steps, uses_maml),
      MEDI_SIZE("maml.meta_batch", maml.meta_batch, uses_maml),
      MEDI_SIZE("maml.episodes", maml.episodes, uses_maml),
      MEDI_ENUM("maml.order", maml.order, nn::parse_order, nn::to_string, uses_maml),
      MEDI_SIZE("maml.topk", maml.pair.topk, uses_maml),
      MEDI_ENUM("maml.rank_match", maml.pair.match, pairs::parse_rank_match,
                [](pairs::RankMatch m) { return std::string(m == pairs::RankMatch::set ? "set" : "sequence"); },
                uses_maml),
      MEDI_ENUM("maml.score", maml.pair.score, pairs::parse_score_mode,
                [](pairs::ScoreMode m) {
                  return std::string(m == pairs::ScoreMode::inner_product ? "inner_product" : "cosine");
                },
                uses_maml),
      MEDI_SIZE("maml.finetune_every", maml.finetune_every, uses_maml),
      MEDI_ENUM("maml.readout", maml.readout, maml::parse_readout, maml::to_string, uses_maml),
      MEDI_SIZE("maml.readout_steps", maml.readout_steps, uses_maml),
      MEDI_DOUBLE("maml.readout_rate", maml.readout_rate, uses_maml),

      MEDI_SIZE("kmeans.restarts", kmeans.restarts, uses_kmeans),
      MEDI_SIZE("kmeans.max_iterations", kmeans.max_iterations, uses_kmeans),
  };
  return table;
}

#undef MEDI_SIZE
#undef MEDI_DOUBLE
#undef MEDI_BOOL
#undef MEDI_DIMS
#undef MEDI_ENUM

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment.seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment.seeds: duplicate seed");
  }
  if (dataset.kind == DatasetKind::multirule) dataset.multirule.validate();
  if (dataset.kind == DatasetKind::alphabet) dataset.alphabet.validate();
  if (dataset.kind == DatasetKind::file && dataset.path.empty()) throw ConfigError("dataset.path is required");
  if (protocol.way < 1 || protocol.obsv < 1 || protocol.trials < 1) {
    throw ConfigError("protocol: way, obsv and trials must be positive");
  }
  if (split.kind == SplitKind::by_rule && (split.known_rules.empty() || split.novel_rules.empty())) {
    throw ConfigError("split: by_rule needs known_rules and novel_rules");
  }
  if (kmeans.restarts == 0 || kmeans.max_iterations == 0) throw ConfigError("kmeans: restarts and iterations must be positive");
  // Model-dependent checks use a placeholder input width; the real one comes from the data.
  nn::ModelConfig m = model;
  m.input_dim = 1;
  if (method != Method::kmeans) m.validate();
  if (uses_cata(*this)) cata.validate();
  if (method == Method::medi_pro) {
    proto::ProtoConfig p = proto;
    p.model = m;
    p.model.head_width = 0;
    p.validate();
  }
  if (method == Method::medi_maml) {
    maml::MamlConfig c = maml;
    const std::size_t hw = maml.model.head_width;
    c.model = m;
    c.model.head_width = hw;
    c.validate();
    const std::size_t topk = c.pair.topk ? c.pair.topk : pairs::default_topk(m.embed_dim);
    if (topk == 0 || topk > m.embed_dim) throw ConfigError("maml.topk exceeds the embedding dimension");
  }
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) {
    if (f.relevant && f.relevant(*this)) out += f.key + "=" + f.get(*this) + "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const { return hex(fnv1a(canonical())); }

std::string ExperimentConfig::dataset_label() const {
  if (dataset.kind == DatasetKind::file) return fs::path(dataset.path).stem().string();
  return dataset_kind_name(dataset.kind);
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not section.key=value");
  field(trim(assignment.substr(0, eq))).set(config, assignment.substr(eq + 1));
}

ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : body) {
      std::string text = value.data();
      // Trailing comments after ';' or '#'.
      if (const auto c = text.find_first_of(";#"); c != std::string::npos) text = text.substr(0, c);
      field(section + "." + key).set(config, text);
    }
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    return parse_config(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void RunRecord::recompute() {
  fallback_episodes = 0;
  std::vector<double> accs;
  std::set<std::uint64_t> seen;
  for (const auto& t : trials) {
    accs.push_back(t.acc);
    if (seen.insert(t.seed).second) fallback_episodes += t.fallback_episodes;
  }
  if (accs.empty()) {
    mean = std = 0.0;
    return;
  }
  std::tie(mean, std) = eval::mean_std(accs);
}

std::string to_jsonl(const RunRecord& run, const TrialRecord& trial) {
  json j;
  j["run_id"] = run.run_id;
  j["config_hash"] = run.config_hash;
  j["name"] = run.name;
  j["method"] = run.method;
  j["sampler"] = run.sampler;
  j["dataset"] = run.dataset;
  j["way"] = run.way;
  j["obsv"] = run.obsv;
  j["order_mode"] = run.order_mode;
  j["seed"] = trial.seed;
  j["trial"] = trial.trial;
  j["acc"] = trial.acc;
  j["wall_time"] = trial.wall_time;
  j["fallback_episodes"] = trial.fallback_episodes;
  return j.dump();
}

namespace {

data::SplitPolicy make_policy(const ExperimentConfig& c, const data::Dataset& ds, std::uint64_t seed) {
  data::SplitPolicy p;
  switch (c.split.kind) {
    case SplitKind::tail_per_rule:
      p = data::SplitPolicy::tail_per_rule(ds, c.split.novel_per_rule);
      break;
    case SplitKind::by_rule:
      p = data::SplitPolicy::by_rule(ds, c.split.known_rules, c.split.novel_rules);
      break;
    case SplitKind::first_known:
      p = data::SplitPolicy::first_known(ds, c.split.known_count);
      break;
  }
  p.obsv_per_class = c.protocol.obsv;
  p.normalize = c.split.normalize;
  p.seed = substream_seed(seed, "split");
  return p;
}

// Re-raises with the run context, preserving the error category.
template <class F>
auto with_context(const std::string& context, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(context + ": " + e.what());
  }
}

struct SeedOutcome {
  std::vector<double> accs;
  std::size_t fallback = 0;
};

SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const SeedCell cell = prepare_seed(config, seed);
  const auto& split = cell.split;
  nn::ModelConfig model = config.model;
  model.input_dim = cell.dataset.dim();

  SeedOutcome out;
  cata::TaskSampler sampler = cata::TaskSampler::uniform(split.known_pool);
  if (uses_cata(config)) {
    cata::SamplerConfig cc = config.cata;
    cc.seed = substream_seed(seed, "cata");
    const auto trained = cata::train_cata(split, cc);
    const auto partition = cata::assign_views(trained.model, split.known_pool, cc.execution);
    sampler = cata::TaskSampler::by_views(split.known_pool, partition, config.cata_fallback);
  }

  eval::DiscoveryMethod method;
  // Trained state is shared by every trial's hypothesis.
  std::shared_ptr<proto::ProtoTraining> pro;
  std::shared_ptr<maml::MamlTraining> mm;
  switch (config.method) {
    case Method::kmeans: {
      const auto opts = config.kmeans;
      method = [opts](std::span<const data::Observation> obs, std::size_t k, std::uint64_t s) {
        return eval::kmeans_baseline(obs, k, s, opts);
      };
      break;
    }
    case Method::medi_pro: {
      proto::ProtoConfig pc = config.proto;
      pc.model = model;
      pc.model.head_width = 0;
      pc.seed = substream_seed(seed, "train");
      pro = std::make_shared<proto::ProtoTraining>(proto::train_medi_pro(sampler, pc));
      out.fallback = pro->fallback_episodes;
      proto::DiscoveryOptions opts;
      opts.kmeans = config.kmeans;
      opts.kmeans.balanced = config.proto_balanced;
      opts.execution = pc.execution;
      method = [pro, opts](std::span<const data::Observation> obs, std::size_t k, std::uint64_t s) {
        return proto::discover_clusters_proto(pro->model, pro->params, obs, k, s, opts);
      };
      break;
    }
    case Method::medi_maml: {
      maml::MamlConfig mc = config.maml;
      mc.model = model;
      mc.model.head_width = config.maml.model.head_width;
      mc.seed = substream_seed(seed, "train");
      mm = std::make_shared<maml::MamlTraining>(
          maml::train_medi_maml(sampler, mc, split.novel_observations));
      out.fallback = mm->fallback_episodes;
      maml::ReadoutOptions ro;
      ro.mode = mc.readout;
      ro.steps = mc.readout_steps;
      ro.rate = mc.readout_rate;
      ro.pair = mc.pair;
      method = [mm, ro](std::span<const data::Observation> obs, std::size_t k, std::uint64_t s) {
        return maml::discover_clusters_maml(mm->model, mm->state, obs, k, s, ro);
      };
      break;
    }
  }
  eval::ProtocolConfig pc = config.protocol;
  pc.seed = substream_seed(seed, "trial");
  const auto summary = eval::run_protocol(method, split.novel, pc);
  for (const auto& t : summary.trials) out.accs.push_back(t.acc);
  return out;
}

// Seeds are per-trial fields, so growing the seed list extends the same run.
std::string make_run_id(const ExperimentConfig& config) { return config.hash(); }

void append_line(const std::string& path, const std::string& line) {
  // One write per record keeps lines whole under concurrent appenders.
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw ConfigError("cannot append to " + path);
  const std::string text = line + "\n";
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  std::fclose(f);
  if (!ok) throw ConfigError("short write to " + path);
}

/// Drops a partial final line left by an interrupted append, so the next
/// record starts on a line of its own.
void repair_torn_tail(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty() || text.back() == '\n') return;
  const auto cut = text.rfind('\n');
  in.close();
  fs::resize_file(path, cut == std::string::npos ? 0 : cut + 1);
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.config_hash = j.value("config_hash", "");
  r.name = j.value("name", "");
  r.method = j.at("method").get<std::string>();
  r.sampler = j.value("sampler", "");
  r.dataset = j.at("dataset").get<std::string>();
  r.way = j.at("way").get<std::size_t>();
  r.obsv = j.at("obsv").get<std::size_t>();
  r.order_mode = j.value("order_mode", "");
  return r;
}

TrialRecord trial_from_json(const json& j) {
  TrialRecord t;
  t.seed = j.at("seed").get<std::uint64_t>();
  t.trial = j.value("trial", std::size_t{0});
  const auto& acc = j.at("acc");
  t.acc = acc.is_null() ? std::nan("") : acc.get<double>();
  t.wall_time = j.value("wall_time", 0.0);
  t.fallback_episodes = j.value("fallback_episodes", std::size_t{0});
  return t;
}

}  // namespace

SeedCell prepare_seed(const ExperimentConfig& config, std::uint64_t seed) {
  data::Dataset ds;
  const std::uint64_t data_seed = substream_seed(seed, "data");
  switch (config.dataset.kind) {
    case DatasetKind::multirule:
      ds = data::generate_synthetic_multiview(config.dataset.multirule, data_seed);
      break;
    case DatasetKind::alphabet:
      ds = data::generate_alphabets(config.dataset.alphabet, data_seed);
      break;
    case DatasetKind::file:
      ds = data::load_columnar(config.dataset.path);
      break;
  }
  auto split = data::split_known_novel(ds, make_policy(config, ds, seed));
  return {std::move(ds), std::move(split)};
}

RunRecord run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunRecord rec;
  rec.config_hash = config.hash();
  rec.run_id = make_run_id(config);
  rec.name = config.name;
  rec.method = to_string(config.method);
  rec.sampler = config.method == Method::kmeans ? "none" : to_string(config.sampler);
  rec.dataset = config.dataset_label();
  rec.way = config.protocol.way;
  rec.obsv = config.protocol.obsv;
  rec.order_mode = config.method == Method::medi_maml ? nn::to_string(config.maml.order) : "none";

  std::string results;
  std::map<std::uint64_t, std::vector<TrialRecord>> done;
  if (options.write_results) {
    const fs::path dir = resolve_out_dir(config.out_dir);
    fs::create_directories(dir);
    results = (dir / options.results_file).string();
    if (fs::exists(results)) repair_torn_tail(results);
    if (options.resume && fs::exists(results)) {
      for (const auto& r : load_records(results)) {
        if (r.run_id != rec.run_id) continue;
        for (const auto& t : r.trials) done[t.seed].push_back(t);
      }
    }
  }
  for (auto seed : config.seeds) {
    if (auto it = done.find(seed); it != done.end() && it->second.size() == config.protocol.trials) {
      rec.trials.insert(rec.trials.end(), it->second.begin(), it->second.end());
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string context = "experiment '" + config.name + "' (config " + rec.config_hash + ", seed " +
                                std::to_string(seed) + ")";
    const auto outcome = with_context(context, [&] { return run_seed(config, seed); });
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::vector<TrialRecord> cell;
    for (std::size_t t = 0; t < outcome.accs.size(); ++t) {
      cell.push_back({seed, t, outcome.accs[t], wall, outcome.fallback});
    }
    if (options.write_results) {
      for (const auto& t : cell) append_line(results, to_jsonl(rec, t));
    }
    rec.trials.insert(rec.trials.end(), cell.begin(), cell.end());
  }
  std::set<std::uint64_t> seen;
  for (const auto& t : rec.trials) {
    if (seen.insert(t.seed).second) rec.wall_time += t.wall_time;
  }
  rec.recompute();
  return rec;
}

std::vector<RunRecord> load_records(const std::string& results_path) {
  std::ifstream in(results_path);
  if (!in) throw ConfigError("cannot read results " + results_path);
  std::vector<RunRecord> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      auto r = record_from_json(j);
      auto [it, fresh] = index.emplace(r.run_id, out.size());
      if (fresh) out.push_back(std::move(r));
      // A later line for the same (seed, trial) supersedes the earlier one.
      auto t = trial_from_json(j);
      auto& trials = out[it->second].trials;
      const auto same = std::find_if(trials.begin(), trials.end(),
                                     [&](const TrialRecord& o) { return o.seed == t.seed && o.trial == t.trial; });
      if (same != trials.end()) {
        *same = t;
      } else {
        trials.push_back(t);
      }
    } catch (const json::exception& e) {
      // A torn final line from an interrupted run is skipped; anything else is an error.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ValidationError(results_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (auto& r : out) {
    std::set<std::uint64_t> seen;
    r.wall_time = 0.0;
    for (const auto& t : r.trials) {
      if (seen.insert(t.seed).second) r.wall_time += t.wall_time;
    }
    r.recompute();
  }
  return out;
}

ReportStyle parse_report_style(const std::string& name) {
  if (name == "bar") return ReportStyle::bar;
  if (name == "table") return ReportStyle::table;
  if (name == "both") return ReportStyle::both;
  throw ConfigError("unknown report style '" + name + "' (expected bar|table|both)");
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", 100.0 * mean, 100.0 * std);
  return buf;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string bar_label(const RunRecord& r) {
  std::string label = r.method;
  if (r.sampler == "cata") label += "+cata";
  if (r.method == "medi_maml" && r.order_mode == "first") label += " (FO)";
  return label;
}

std::string render_svg(const std::string& title, const std::vector<const RunRecord*>& runs) {
  const int bar = 60, gap = 40, left = 60, top = 40, plot_h = 240;
  const int width = left + static_cast<int>(runs.size()) * (bar + gap) + gap;
  const int height = top + plot_h + 70;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - gap / 2 << "\" y2=\""
    << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 100; tick += 20) {
    const double y = top + plot_h - plot_h * tick / 100.0;
    s << "<line x1=\"" << left - 4 << "\" y1=\"" << y << "\" x2=\"" << left << "\" y2=\"" << y
      << "\" stroke=\"black\"/><text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
      << tick << "</text>\n";
  }
  s << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 14 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">ACC (%)</text>\n";
  const char* colors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = *runs[i];
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    const double h = plot_h * std::clamp(r.mean, 0.0, 1.0);
    s << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h
      << "\" fill=\"" << colors[i % 6] << "\"/>\n";
    const double cx = x + bar / 2.0;
    const double hi = top + plot_h - plot_h * std::clamp(r.mean + r.std, 0.0, 1.0);
    const double lo = top + plot_h - plot_h * std::clamp(r.mean - r.std, 0.0, 1.0);
    s << "<line x1=\"" << cx << "\" y1=\"" << hi << "\" x2=\"" << cx << "\" y2=\"" << lo
      << "\" stroke=\"black\"/>\n";
    for (double y : {hi, lo}) {
      s << "<line x1=\"" << cx - 8 << "\" y1=\"" << y << "\" x2=\"" << cx + 8 << "\" y2=\"" << y
        << "\" stroke=\"black\"/>\n";
    }
    s << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
      << xml_escape(bar_label(r)) << "</text>\n";
    s << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 32 << "\" text-anchor=\"middle\">"
      << xml_escape(format_mean_std(r.mean, r.std)) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::vector<std::string> emit_report(const std::vector<RunRecord>& records, const std::string& out_dir,
                                     ReportStyle style) {
  if (records.empty()) throw ValidationError("report: no records");
  for (const auto& r : records) {
    if (r.trials.empty()) throw ValidationError("report: run " + r.run_id + " has no trials");
    for (const auto& t : r.trials) {
      if (!std::isfinite(t.acc)) {
        throw ValidationError("report: run " + r.run_id + " has a non-finite ACC (seed " +
                              std::to_string(t.seed) + ", trial " + std::to_string(t.trial) + ")");
      }
    }
  }
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) groups[{r.dataset, r.way, r.obsv}].push_back(&r);

  auto group_hash = [](const std::vector<const RunRecord*>& runs) {
    std::string all;
    for (const auto* r : runs) all += r->config_hash + ",";
    return hex(fnv1a(all)).substr(0, 10);
  };
  if (style != ReportStyle::table) {
    for (const auto& [key, runs] : groups) {
      const auto& [dataset, way, obsv] = key;
      const std::string title = dataset + ", " + std::to_string(way) + "-way " + std::to_string(obsv) + "-obsv";
      const std::string file = (fs::path(out_dir) / ("bars-" + dataset + "-" + std::to_string(way) + "way-" +
                                                     std::to_string(obsv) + "obsv-" + group_hash(runs) + ".svg"))
                                   .string();
      std::ofstream out(file);
      if (!out) throw ConfigError("cannot write " + file);
      out << render_svg(title, runs);
      written.push_back(file);
    }
  }
  if (style != ReportStyle::bar) {
    std::vector<const RunRecord*> all;
    for (const auto& r : records) all.push_back(&r);
    const std::string file = (fs::path(out_dir) / ("table-" + group_hash(all) + ".txt")).string();
    std::ofstream out(file);
    if (!out) throw ConfigError("cannot write " + file);
    char line[512];
    std::snprintf(line, sizeof line, "%-20s %-10s %-8s %-12s %-16s %-14s %7s  %s\n", "name", "method", "sampler",
                  "dataset", "protocol", "ACC (%)", "trials", "config");
    out << line;
    for (const auto* r : all) {
      const std::string protocol = std::to_string(r->way) + "-way " + std::to_string(r->obsv) + "-obsv";
      // The "±" sign takes two bytes, so pad by hand.
      std::string acc = format_mean_std(r->mean, r->std);
      const std::size_t visible = acc.size() - 1;
      if (visible < 14) acc += std::string(14 - visible, ' ');
      std::snprintf(line, sizeof line, "%-20s %-10s %-8s %-12s %-16s %s %7zu  %s\n", r->name.c_str(),
                    r->method.c_str(), r->sampler.c_str(), r->dataset.c_str(), protocol.c_str(), acc.c_str(),
                    r->trials.size(), r->config_hash.c_str());
      out << line;
    }
    written.push_back(file);
  }
  return written;
}

std::string resolve_out_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("MEDI_OUT"); env && *env) return env;
  return "medi-out";
}

}  // namespace medi::experiment
