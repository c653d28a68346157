#include "medi/cata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "medi/eval.hpp"
#include "medi/parallel.hpp"

namespace medi::cata {

namespace {

constexpr std::size_t kChunk = 16;

std::vector<std::size_t> head_widths(const SamplerConfig& config, std::size_t classes) {
  std::vector<std::size_t> w = config.head_hidden;
  w.push_back(classes);
  return w;
}

}  // namespace

void SamplerConfig::validate() const {
  if (num_views < 2) {
    throw ConfigError("CATA needs at least 2 views (the penalty divides by K(K-1)); got " +
                      std::to_string(num_views));
  }
  if (!(tradeoff >= 0.0) || !std::isfinite(tradeoff)) throw ConfigError("CATA tradeoff must be >= 0");
  if (!(extractor_rate >= 0.0) || !(head_rate >= 0.0)) throw ConfigError("CATA rates must be >= 0");
  if (extractor_dims.empty()) throw ConfigError("CATA extractor needs at least one layer");
  if (head_hidden.empty()) throw ConfigError("CATA heads need a hidden layer to penalize");
}

MultiViewSamplerModel::MultiViewSamplerModel(std::size_t input_dim, std::vector<int> classes,
                                             const SamplerConfig& config)
    : tradeoff(config.tradeoff), classes_(std::move(classes)) {
  config.validate();
  if (classes_.size() < 2) throw ConfigError("CATA needs at least two known classes");
  for (std::size_t i = 0; i < classes_.size(); ++i) index_[classes_[i]] = i;
  nn::Layout ext_layout;
  extractor_ = nn::Mlp("extractor", input_dim, config.extractor_dims, config.activation,
                       config.activation, false, ext_layout);
  head_ = nn::Mlp("head", extractor_.output_dim(), head_widths(config, classes_.size()),
                  config.activation, nn::Activation::identity, false, head_layout_);
  extractor_params = nn::ParameterVector(ext_layout);
  Rng rng = make_rng(config.seed, "cata.extractor");
  extractor_.initialize(extractor_params.values, rng);
  for (std::size_t v = 0; v < config.num_views; ++v) {
    nn::ParameterVector p(head_layout_);
    Rng hr = make_rng(config.seed, "cata.head", v);
    head_.initialize(p.values, hr);
    head_params.push_back(std::move(p));
  }
}

std::size_t MultiViewSamplerModel::class_index(int label) const {
  const auto it = index_.find(label);
  if (it == index_.end()) throw ValidationError("label " + std::to_string(label) + " is not a known class");
  return it->second;
}

std::vector<std::vector<double>> MultiViewSamplerModel::first_layer_weights() const {
  std::vector<std::vector<double>> out;
  for (const auto& p : head_params) {
    const auto w = p.segment("head.0.weight");
    out.emplace_back(w.begin(), w.end());
  }
  return out;
}

std::vector<double> MultiViewSamplerModel::label_probabilities(std::span<const double> x,
                                                               int label) const {
  const std::size_t y = class_index(label);
  const auto e = extractor_.apply<double>(extractor_params.values, x);
  std::vector<double> out;
  for (const auto& p : head_params) {
    const auto logits = head_.apply<double>(p.values, e);
    out.push_back(nn::softmax<double>(logits)[y]);
  }
  return out;
}

double mean_abs_inner_product(const std::vector<std::vector<double>>& weights) {
  const std::size_t k = weights.size();
  if (k < 2) throw ConfigError("orthogonality needs at least two weight vectors");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < weights[i].size(); ++d) dot += weights[i][d] * weights[j][d];
      total += std::abs(dot);
    }
  }
  return total / static_cast<double>(k * (k - 1) / 2);
}

SamplerLoss sampler_loss(const MultiViewSamplerModel& model,
                         std::span<const data::LabeledExample> batch, bool with_gradient,
                         kernels::Execution exec) {
  if (batch.empty()) throw ValidationError("sampler_loss: empty batch");
  const std::size_t K = model.num_views();
  if (K < 2) throw ConfigError("sampler_loss: K(K-1) vanishes for fewer than 2 views");
  const std::size_t ne = model.extractor_params.size();
  const std::size_t nh = model.head_layout().total();
  const std::size_t width = with_gradient ? ne + K * nh : 0;
  const double scale = 1.0 / static_cast<double>(batch.size() * K);

  std::vector<double> acc(width, 0.0);
  const double ce = chunked_accumulate(
      batch.size(), width, kChunk, exec, acc, [&](std::size_t n, std::span<double> g) {
        const auto& ex = batch[n];
        const std::size_t y = model.class_index(ex.label);
        nn::Mlp::Cache<double> ec;
        model.extractor().forward<double>(model.extractor_params.values, ex.features, ec);
        std::vector<double> grad_e(ec.output.size(), 0.0);
        double sum = 0.0;
        for (std::size_t v = 0; v < K; ++v) {
          nn::Mlp::Cache<double> hc;
          model.head().forward<double>(model.head_params[v].values, ec.output, hc);
          const auto p = nn::softmax<double>(hc.output);
          sum -= std::log(std::max(p[y], 1e-300));
          if (!with_gradient) continue;
          std::vector<double> dlogits(p);
          dlogits[y] -= 1.0;
          for (auto& d : dlogits) d *= scale;
          std::vector<double> gin(ec.output.size(), 0.0);
          model.head().backward<double>(model.head_params[v].values, hc, dlogits,
                                        g.subspan(ne + v * nh, nh), gin);
          for (std::size_t i = 0; i < gin.size(); ++i) grad_e[i] += gin[i];
        }
        if (with_gradient) {
          model.extractor().backward<double>(model.extractor_params.values, ec, grad_e,
                                             g.subspan(0, ne));
        }
        return sum;
      });

  SamplerLoss out;
  out.cross_entropy = ce * scale;
  const auto W = model.first_layer_weights();
  const double pairs = static_cast<double>(K * (K - 1) / 2);
  const double coef = model.tradeoff / pairs;
  std::vector<std::vector<double>> dots(K, std::vector<double>(K, 0.0));
  double penalty = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i + 1; j < K; ++j) {
      double d = 0.0;
      for (std::size_t t = 0; t < W[i].size(); ++t) d += W[i][t] * W[j][t];
      dots[i][j] = dots[j][i] = d;
      penalty += std::abs(d);
    }
  }
  out.penalty = coef * penalty;
  out.loss = out.cross_entropy + out.penalty;
  if (!std::isfinite(out.loss)) throw NumericError("sampler_loss: non-finite loss");
  if (!with_gradient) return out;

  out.extractor_grad.assign(acc.begin(), acc.begin() + static_cast<long>(ne));
  const std::size_t w_off = model.head_layout().at("head.0.weight").offset;
  for (std::size_t i = 0; i < K; ++i) {
    std::vector<double> g(acc.begin() + static_cast<long>(ne + i * nh),
                          acc.begin() + static_cast<long>(ne + (i + 1) * nh));
    if (coef != 0.0) {
      for (std::size_t j = 0; j < K; ++j) {
        if (j == i || dots[i][j] == 0.0) continue;
        const double s = coef * (dots[i][j] > 0.0 ? 1.0 : -1.0);
        for (std::size_t t = 0; t < W[j].size(); ++t) g[w_off + t] += s * W[j][t];
      }
    }
    out.head_grads.push_back(std::move(g));
  }
  return out;
}

CataTraining train_cata(std::span<const data::LabeledExample> known_pool, const SamplerConfig& config) {
  config.validate();
  if (known_pool.empty()) throw ValidationError("train_cata: known pool is empty");
  std::set<int> labels;
  for (const auto& ex : known_pool) labels.insert(ex.label);
  CataTraining out{MultiViewSamplerModel(known_pool.front().features.size(),
                                         std::vector<int>(labels.begin(), labels.end()), config),
                   {}, 0.0, 0.0};
  auto& model = out.model;
  out.initial_orthogonality = mean_abs_inner_product(model.first_layer_weights());

  nn::Optimizer ext_opt(config.optimizer, model.extractor_params.size());
  std::vector<nn::Optimizer> head_opts;
  for (std::size_t v = 0; v < model.num_views(); ++v) {
    head_opts.emplace_back(config.optimizer, model.head_layout().total());
  }
  for (std::size_t step = 0; step < config.steps; ++step) {
    SamplerLoss l;
    try {
      l = sampler_loss(model, known_pool, true, config.execution);
    } catch (const NumericError& e) {
      throw NumericError("train_cata: step " + std::to_string(step) + ": " + e.what());
    }
    out.loss_trace.push_back(l.loss);
    ext_opt.step(model.extractor_params.values, l.extractor_grad, config.extractor_rate);
    for (std::size_t v = 0; v < model.num_views(); ++v) {
      head_opts[v].step(model.head_params[v].values, l.head_grads[v], config.head_rate);
    }
  }
  try {
    out.loss_trace.push_back(sampler_loss(model, known_pool, false, config.execution).loss);
  } catch (const NumericError& e) {
    throw NumericError("train_cata: step " + std::to_string(config.steps) + ": " + e.what());
  }
  out.final_orthogonality = mean_abs_inner_product(model.first_layer_weights());
  return out;
}

CataTraining train_cata(const data::DatasetSplit& split, const SamplerConfig& config) {
  return train_cata(std::span<const data::LabeledExample>(split.known_pool), config);
}

void ViewPartition::validate() const {
  if (sizes.size() != num_views) throw ValidationError("view partition: size table mismatch");
  std::vector<std::size_t> count(num_views, 0);
  for (const auto& [id, v] : assignment) {
    if (v >= num_views) throw ValidationError("view partition: view index out of range");
    ++count[v];
  }
  if (count != sizes) throw ValidationError("view partition: sizes do not match assignment");
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ViewPartition assign_views(const MultiViewSamplerModel& model,
                           std::span<const data::LabeledExample> pool, kernels::Execution exec) {
  std::vector<std::size_t> views(pool.size());
  parallel_for(pool.size(), exec, [&](std::size_t i) {
    views[i] = argmax_lowest(model.label_probabilities(pool[i].features, pool[i].label));
  });
  ViewPartition p;
  p.num_views = model.num_views();
  p.sizes.assign(p.num_views, 0);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!p.assignment.emplace(pool[i].id, views[i]).second) {
      throw ValidationError("assign_views: duplicate example id " + std::to_string(pool[i].id));
    }
    ++p.sizes[views[i]];
  }
  return p;
}

void write_partition(std::ostream& out, const ViewPartition& partition) {
  partition.validate();
  out << "# views " << partition.num_views << "\n";
  for (const auto& [id, v] : partition.assignment) out << id << '\t' << v << '\n';
}

ViewPartition read_partition(std::istream& in) {
  ViewPartition p;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string hash, key;
      ss >> hash >> key;
      if (key == "views" && (ss >> p.num_views)) header = true;
      continue;
    }
    if (!header) throw ValidationError("partition file: missing '# views K' header");
    data::ExampleId id = 0;
    std::size_t view = 0;
    if (!(ss >> id >> view)) throw ValidationError("partition file: bad line " + std::to_string(lineno));
    if (view >= p.num_views) {
      throw ValidationError("partition file: view out of range on line " + std::to_string(lineno));
    }
    if (!p.assignment.emplace(id, view).second) {
      throw ValidationError("partition file: duplicate id on line " + std::to_string(lineno));
    }
  }
  if (!header) throw ValidationError("partition file: missing '# views K' header");
  p.sizes.assign(p.num_views, 0);
  for (const auto& [id, v] : p.assignment) ++p.sizes[v];
  return p;
}

void save_partition(const std::string& path, const ViewPartition& partition) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_partition(out, partition);
}

ViewPartition load_partition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return read_partition(in);
}

double view_purity(const ViewPartition& partition, std::span<const data::LabeledExample> pool) {
  if (pool.empty()) throw ValidationError("view_purity: empty pool");
  std::vector<std::size_t> views;
  std::vector<int> rules;
  for (const auto& ex : pool) {
    const auto it = partition.assignment.find(ex.id);
    if (it == partition.assignment.end()) {
      throw ValidationError("view_purity: example " + std::to_string(ex.id) + " has no view");
    }
    if (ex.rule < 0) throw ValidationError("view_purity: example without a latent rule");
    views.push_back(it->second);
    rules.push_back(ex.rule);
  }
  return eval::best_mapping_accuracy(views, rules);
}

TaskSampler TaskSampler::uniform(std::vector<data::LabeledExample> pool) {
  TaskSampler s;
  s.pool_ = std::move(pool);
  return s;
}

TaskSampler TaskSampler::by_views(std::vector<data::LabeledExample> pool,
                                  const ViewPartition& partition, bool fallback) {
  TaskSampler s;
  s.pool_ = std::move(pool);
  s.fallback_ = fallback;
  s.views_.resize(partition.num_views);
  for (const auto& ex : s.pool_) {
    const auto it = partition.assignment.find(ex.id);
    if (it == partition.assignment.end()) {
      throw ValidationError("task sampler: example " + std::to_string(ex.id) + " has no view");
    }
    s.views_[it->second].push_back(ex);
  }
  return s;
}

std::vector<ViewFeasibility> TaskSampler::feasibility(std::size_t way, std::size_t m,
                                                      std::size_t k) const {
  std::vector<ViewFeasibility> out;
  for (std::size_t v = 0; v < views_.size(); ++v) {
    std::map<int, std::size_t> counts;
    for (const auto& ex : views_[v]) ++counts[ex.label];
    ViewFeasibility f;
    f.view = v;
    f.size = views_[v].size();
    for (const auto& [label, c] : counts) f.eligible_classes += c >= m + k ? 1 : 0;
    f.feasible = f.eligible_classes >= way && way > 0;
    out.push_back(f);
  }
  return out;
}

namespace {

std::string describe(const std::vector<ViewFeasibility>& diag, std::size_t way, std::size_t m,
                     std::size_t k) {
  std::ostringstream ss;
  ss << "CATA infeasible: no view has " << way << " classes with at least " << m + k
     << " examples each (";
  for (std::size_t i = 0; i < diag.size(); ++i) {
    ss << (i ? "; " : "") << "view " << diag[i].view << ": " << diag[i].size << " examples, "
       << diag[i].eligible_classes << " eligible classes";
  }
  ss << ")";
  return ss.str();
}

data::Episode draw_from_views(const std::vector<std::vector<data::LabeledExample>>& views,
                              const std::vector<ViewFeasibility>& diag, std::size_t way,
                              std::size_t m, std::size_t k, Rng& rng) {
  std::vector<double> weights;
  for (const auto& f : diag) weights.push_back(f.feasible ? static_cast<double>(f.size) : 0.0);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const std::size_t v = pick(rng);
  auto ep = data::make_episode(views[v], way, m, k, rng);
  ep.source_view = v;
  return ep;
}

}  // namespace

data::Episode TaskSampler::sample(std::size_t way, std::size_t m, std::size_t k, Rng& rng) const {
  if (!uses_views()) return data::make_episode(pool_, way, m, k, rng);
  const auto diag = feasibility(way, m, k);
  const bool any = std::any_of(diag.begin(), diag.end(), [](const auto& f) { return f.feasible; });
  if (!any) {
    if (!fallback_) throw CataInfeasible(describe(diag, way, m, k), diag);
    auto ep = data::make_episode(pool_, way, m, k, rng);
    ep.cata_fallback = true;
    return ep;
  }
  return draw_from_views(views_, diag, way, m, k, rng);
}

data::Episode sample_task(const ViewPartition& partition, std::span<const data::LabeledExample> pool,
                          std::size_t way, std::size_t m, std::size_t k, Rng& rng) {
  const auto sampler = TaskSampler::by_views(std::vector<data::LabeledExample>(pool.begin(), pool.end()),
                                             partition, false);
  return sampler.sample(way, m, k, rng);
}

}  // namespace medi::cata
