#include "medi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "medi/error.hpp"

namespace medi::data {

void SealedLabels::seal(ExampleId id, int label, int rule) {
  if (!entries_.emplace(id, Entry{label, rule}).second) {
    throw ValidationError("duplicate sealed id " + std::to_string(id));
  }
}

Dataset::Dataset(std::vector<LabeledExample> examples) : examples_(std::move(examples)) {
  if (examples_.empty()) return;
  dim_ = examples_.front().features.size();
  std::set<ExampleId> ids;
  for (const auto& ex : examples_) {
    if (ex.features.size() != dim_) {
      throw ValidationError("example " + std::to_string(ex.id) + " has " +
                            std::to_string(ex.features.size()) + " features, expected " +
                            std::to_string(dim_));
    }
    if (ex.label < 0) {
      throw ValidationError("example " + std::to_string(ex.id) + " has negative label");
    }
    for (double v : ex.features) {
      if (!std::isfinite(v)) {
        throw ValidationError("example " + std::to_string(ex.id) + " has non-finite feature");
      }
    }
    if (!ids.insert(ex.id).second) {
      throw ValidationError("duplicate example id " + std::to_string(ex.id));
    }
  }
}

std::vector<int> Dataset::classes() const {
  std::set<int> seen;
  for (const auto& ex : examples_) seen.insert(ex.label);
  return {seen.begin(), seen.end()};
}

std::map<int, std::size_t> Dataset::class_counts() const {
  std::map<int, std::size_t> counts;
  for (const auto& ex : examples_) ++counts[ex.label];
  return counts;
}

std::map<int, int> Dataset::class_rules() const {
  std::map<int, int> rules;
  for (const auto& ex : examples_) {
    auto [it, inserted] = rules.emplace(ex.label, ex.rule);
    if (!inserted && it->second != ex.rule) {
      throw ValidationError("class " + std::to_string(ex.label) + " spans several groups");
    }
  }
  return rules;
}

FeatureScaler FeatureScaler::fit(std::span<const LabeledExample> pool) {
  if (pool.empty()) throw ValidationError("cannot fit scaler on an empty pool");
  const std::size_t dim = pool.front().features.size();
  FeatureScaler s{std::vector<double>(dim, INFINITY), std::vector<double>(dim, -INFINITY)};
  for (const auto& ex : pool) {
    for (std::size_t d = 0; d < dim; ++d) {
      s.lo[d] = std::min(s.lo[d], ex.features[d]);
      s.hi[d] = std::max(s.hi[d], ex.features[d]);
    }
  }
  return s;
}

void FeatureScaler::apply(std::vector<double>& x) const {
  if (x.size() != lo.size()) throw ShapeError("scaler dimension mismatch");
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double range = hi[d] - lo[d];
    x[d] = range > 0.0 ? (x[d] - lo[d]) / range : 0.0;
  }
}

SplitPolicy SplitPolicy::first_known(const Dataset& dataset, std::size_t count) {
  const auto classes = dataset.classes();
  if (count > classes.size()) {
    throw ConfigError("first_known: dataset has only " + std::to_string(classes.size()) +
                      " classes");
  }
  SplitPolicy p;
  p.known_classes.assign(classes.begin(), classes.begin() + static_cast<long>(count));
  p.novel_classes.assign(classes.begin() + static_cast<long>(count), classes.end());
  return p;
}

SplitPolicy SplitPolicy::by_rule(const Dataset& dataset, const std::vector<int>& known_rules,
                                 const std::vector<int>& novel_rules) {
  const std::set<int> known(known_rules.begin(), known_rules.end());
  const std::set<int> novel(novel_rules.begin(), novel_rules.end());
  SplitPolicy p;
  for (auto [label, rule] : dataset.class_rules()) {
    if (known.contains(rule)) p.known_classes.push_back(label);
    if (novel.contains(rule)) p.novel_classes.push_back(label);
  }
  return p;
}

SplitPolicy SplitPolicy::tail_per_rule(const Dataset& dataset, std::size_t novel_per_rule) {
  std::map<int, std::vector<int>> by_rule;
  for (auto [label, rule] : dataset.class_rules()) by_rule[rule].push_back(label);
  SplitPolicy p;
  for (auto& [rule, labels] : by_rule) {
    if (labels.size() <= novel_per_rule) {
      throw ConfigError("tail_per_rule: group " + std::to_string(rule) + " has only " +
                        std::to_string(labels.size()) + " classes");
    }
    const auto cut = labels.end() - static_cast<long>(novel_per_rule);
    p.known_classes.insert(p.known_classes.end(), labels.begin(), cut);
    p.novel_classes.insert(p.novel_classes.end(), cut, labels.end());
  }
  std::sort(p.known_classes.begin(), p.known_classes.end());
  std::sort(p.novel_classes.begin(), p.novel_classes.end());
  return p;
}

DatasetSplit split_known_novel(const Dataset& dataset, const SplitPolicy& policy) {
  const std::set<int> known(policy.known_classes.begin(), policy.known_classes.end());
  const std::set<int> novel(policy.novel_classes.begin(), policy.novel_classes.end());
  if (known.empty() || novel.empty()) {
    throw ValidationError("split policy needs nonempty known and novel class sets");
  }
  for (int c : known) {
    if (novel.contains(c)) {
      throw ValidationError("class " + std::to_string(c) + " is both known and novel");
    }
  }
  const auto counts = dataset.class_counts();
  for (const auto* set : {&known, &novel}) {
    for (int c : *set) {
      if (!counts.contains(c)) {
        throw ValidationError("class " + std::to_string(c) + " is not in the dataset");
      }
    }
  }

  DatasetSplit split;
  split.known_classes.assign(known.begin(), known.end());
  split.novel_classes.assign(novel.begin(), novel.end());
  split.obsv_per_class = policy.obsv_per_class;

  std::vector<LabeledExample> novel_examples;
  for (const auto& ex : dataset.examples()) {
    if (known.contains(ex.label)) split.known_pool.push_back(ex);
    if (novel.contains(ex.label)) novel_examples.push_back(ex);
  }
  if (policy.normalize) {
    split.scaler = FeatureScaler::fit(split.known_pool);
    for (auto& ex : split.known_pool) split.scaler->apply(ex.features);
    for (auto& ex : novel_examples) split.scaler->apply(ex.features);
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < novel_examples.size(); ++i) {
    by_class[novel_examples[i].label].push_back(i);
  }
  Rng rng(substream_seed(policy.seed, "split"));
  for (auto& [label, idx] : by_class) {
    if (idx.size() < policy.obsv_per_class) {
      throw InfeasibleError("novel class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                            " examples, fewer than obsv_per_class = " + std::to_string(policy.obsv_per_class));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < policy.obsv_per_class; ++j) {
      const auto& ex = novel_examples[idx[j]];
      split.novel_observations.push_back({ex.id, ex.features});
    }
  }
  for (auto& ex : novel_examples) {
    split.novel.labels.seal(ex.id, ex.label, ex.rule);
    split.novel.observations.push_back({ex.id, std::move(ex.features)});
  }
  return split;
}

namespace {

std::map<int, std::vector<std::size_t>> index_by_class(std::span<const LabeledExample> pool) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool[i].label].push_back(i);
  return by_class;
}

}  // namespace

bool episode_feasible(std::span<const LabeledExample> pool, std::size_t way, std::size_t m,
                      std::size_t k) {
  std::size_t eligible = 0;
  for (const auto& [label, idx] : index_by_class(pool)) {
    if (idx.size() >= m + k) ++eligible;
  }
  return way > 0 && eligible >= way;
}

Episode make_episode(std::span<const LabeledExample> pool, std::size_t way, std::size_t m,
                     std::size_t k, Rng& rng) {
  if (way == 0 || m + k == 0) throw ConfigError("episode needs way > 0 and m + k > 0");
  const auto by_class = index_by_class(pool);
  std::vector<int> eligible;
  std::optional<std::pair<int, std::size_t>> short_class;
  for (const auto& [label, idx] : by_class) {
    if (idx.size() >= m + k) {
      eligible.push_back(label);
    } else if (!short_class) {
      short_class = {label, idx.size()};
    }
  }
  if (eligible.size() < way) {
    std::string msg = "insufficient class population: need " + std::to_string(way) +
                      " classes with >= " + std::to_string(m + k) + " examples, found " +
                      std::to_string(eligible.size());
    if (short_class) {
      msg += "; class " + std::to_string(short_class->first) + " has only " +
             std::to_string(short_class->second);
    }
    throw InfeasibleError(msg);
  }

  Episode ep;
  ep.way = way;
  ep.m = m;
  ep.k = k;
  // Partial Fisher-Yates over the eligible classes.
  for (std::size_t i = 0; i < way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  ep.classes.assign(eligible.begin(), eligible.begin() + static_cast<long>(way));
  for (int label : ep.classes) {
    auto idx = by_class.at(label);
    for (std::size_t i = 0; i < m + k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    for (std::size_t i = 0; i < m; ++i) ep.support.push_back(pool[idx[i]]);
    for (std::size_t i = m; i < m + k; ++i) ep.query.push_back(pool[idx[i]]);
  }
  return ep;
}

void write_columnar(std::ostream& out, const Dataset& dataset) {
  out << "# id\tlabel\trule\tfeatures\n";
  char buf[32];
  for (const auto& ex : dataset.examples()) {
    out << ex.id << '\t' << ex.label << '\t' << ex.rule << '\t';
    for (std::size_t d = 0; d < ex.features.size(); ++d) {
      if (d) out << ',';
      auto res = std::to_chars(buf, buf + sizeof buf, ex.features[d]);
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

Dataset read_columnar(std::istream& in) {
  std::vector<LabeledExample> examples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream cols(line);
    std::string id, label, rule, feats;
    if (!std::getline(cols, id, '\t') || !std::getline(cols, label, '\t') ||
        !std::getline(cols, rule, '\t') || !std::getline(cols, feats)) {
      throw ValidationError("columnar line " + std::to_string(lineno) + ": expected 4 columns");
    }
    LabeledExample ex;
    try {
      ex.id = std::stoull(id);
      ex.label = std::stoi(label);
      ex.rule = std::stoi(rule);
    } catch (const std::exception&) {
      throw ValidationError("columnar line " + std::to_string(lineno) + ": bad integer field");
    }
    const char* p = feats.data();
    const char* end = p + feats.size();
    while (p < end) {
      double v = 0.0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc{}) {
        throw ValidationError("columnar line " + std::to_string(lineno) + ": bad feature");
      }
      ex.features.push_back(v);
      p = res.ptr;
      if (p < end && *p == ',') ++p;
    }
    examples.push_back(std::move(ex));
  }
  return Dataset(std::move(examples));
}

void save_columnar(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  write_columnar(out, dataset);
}

Dataset load_columnar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  return read_columnar(in);
}

}  // namespace medi::data
