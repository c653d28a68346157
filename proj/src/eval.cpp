#include "medi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <set>

#include "medi/error.hpp"
#include "medi/parallel.hpp"

namespace medi::eval {

void ClusterAssignment::validate() const {
  if (ids.size() != clusters.size()) throw ValidationError("cluster assignment: ids and clusters differ in length");
  for (auto c : clusters) {
    if (c >= num_clusters) {
      throw ValidationError("cluster assignment: index " + std::to_string(c) + " outside [0, " +
                            std::to_string(num_clusters) + ")");
    }
  }
}

std::map<data::ExampleId, int> EvaluationChannel::labels() const {
  std::map<data::ExampleId, int> out;
  for (const auto& [id, e] : entries()) out.emplace(id, e.label);
  return out;
}

const std::map<data::ExampleId, data::SealedLabels::Entry>& EvaluationChannel::entries() const {
  return sealed_->reveal(data::EvaluationKey{});
}

std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  for (const auto& row : weight) {
    if (row.size() != n) throw ShapeError("assignment matrix must be square");
  }
  if (n == 0) return {};
  // Shortest augmenting paths with potentials on cost = -weight, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weight[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

double best_mapping_accuracy(std::span<const std::size_t> clusters, std::span<const int> labels) {
  if (clusters.size() != labels.size()) throw ValidationError("accuracy: prediction and truth lengths differ");
  if (clusters.empty()) throw ValidationError("accuracy: no observations");
  std::map<int, std::size_t> label_index;
  for (int l : labels) label_index.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [l, idx] : label_index) idx = next++;
  const std::size_t nc = *std::max_element(clusters.begin(), clusters.end()) + 1;
  const std::size_t n = std::max(nc, label_index.size());
  std::vector<std::vector<double>> counts(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < clusters.size(); ++i) counts[clusters[i]][label_index[labels[i]]] += 1.0;
  const auto match = max_weight_assignment(counts);
  double hit = 0.0;
  for (std::size_t r = 0; r < n; ++r) hit += counts[r][match[r]];
  return hit / static_cast<double>(clusters.size());
}

double clustering_accuracy(const ClusterAssignment& pred, const std::map<data::ExampleId, int>& truth) {
  pred.validate();
  if (pred.ids.size() != truth.size()) {
    throw ValidationError("accuracy: " + std::to_string(pred.ids.size()) + " predictions for " +
                          std::to_string(truth.size()) + " labeled observations");
  }
  std::vector<int> labels;
  labels.reserve(pred.ids.size());
  std::set<data::ExampleId> seen;
  for (auto id : pred.ids) {
    const auto it = truth.find(id);
    if (it == truth.end() || !seen.insert(id).second) {
      throw ValidationError("accuracy: observation id " + std::to_string(id) + " mismatch");
    }
    labels.push_back(it->second);
  }
  return best_mapping_accuracy(pred.clusters, labels);
}

std::size_t KMeansResult::nearest(std::span<const double> x) const {
  if (x.size() != dim) throw ShapeError("kmeans: query dimension mismatch");
  const std::size_t k = centroids.size() / dim;
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double t = x[i] - centroids[c * dim + i];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

namespace {

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double d = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

std::vector<double> seed_plus_plus(std::span<const double> pts, std::size_t rows, std::size_t dim,
                                   std::size_t k, Rng& rng) {
  std::vector<double> centroids;
  std::vector<bool> chosen(rows, false);
  std::uniform_int_distribution<std::size_t> first(0, rows - 1);
  std::size_t pick = first(rng);
  std::vector<double> d2(rows, std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < k; ++c) {
    chosen[pick] = true;
    centroids.insert(centroids.end(), pts.begin() + static_cast<long>(pick * dim),
                     pts.begin() + static_cast<long>((pick + 1) * dim));
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      d2[r] = std::min(d2[r], sq_dist(&pts[r * dim], &pts[pick * dim], dim));
      total += d2[r];
    }
    if (total > 0.0) {
      std::discrete_distribution<std::size_t> draw(d2.begin(), d2.end());
      pick = draw(rng);
    } else {
      // Every point coincides with a centre: fall back to an unused point.
      std::vector<std::size_t> free;
      for (std::size_t r = 0; r < rows; ++r) {
        if (!chosen[r]) free.push_back(r);
      }
      std::uniform_int_distribution<std::size_t> u(0, free.size() - 1);
      pick = free[u(rng)];
    }
  }
  return centroids;
}

// Sizes floor(N/K) or ceil(N/K); optimal under the capacity constraint.
void balanced_assign(std::span<const double> pts, std::size_t rows, std::size_t dim,
                     const std::vector<double>& centroids, std::size_t k,
                     std::vector<std::size_t>& assignment) {
  std::vector<std::size_t> slot_owner;
  for (std::size_t s = 0; s < rows; ++s) slot_owner.push_back(s % k);
  std::vector<std::vector<double>> w(rows, std::vector<double>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t s = 0; s < rows; ++s) {
      w[r][s] = -sq_dist(&pts[r * dim], &centroids[slot_owner[s] * dim], dim);
    }
  }
  const auto match = max_weight_assignment(w);
  for (std::size_t r = 0; r < rows; ++r) assignment[r] = slot_owner[match[r]];
}

KMeansResult lloyd(std::span<const double> pts, std::size_t rows, std::size_t dim, std::size_t k,
                   Rng& rng, const KMeansOptions& opt) {
  KMeansResult res;
  res.dim = dim;
  res.centroids = seed_plus_plus(pts, rows, dim, k, rng);
  res.assignment.assign(rows, 0);
  std::vector<std::size_t> prev(rows, k);
  std::vector<double> d2(rows);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    if (opt.balanced) {
      balanced_assign(pts, rows, dim, res.centroids, k, res.assignment);
    } else {
      kernels::serial::nearest_centroid(pts, rows, dim, res.centroids, k, res.assignment, d2);
    }
    // Empty clusters take the point farthest from its centre (lowest index on ties).
    std::vector<std::size_t> size(k, 0);
    for (auto a : res.assignment) ++size[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (size[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t r = 0; r < rows; ++r) {
        if (size[res.assignment[r]] < 2) continue;
        const double d = sq_dist(&pts[r * dim], &res.centroids[res.assignment[r] * dim], dim);
        if (d > far_d) {
          far_d = d;
          far = r;
        }
      }
      if (far_d < 0.0) break;
      --size[res.assignment[far]];
      res.assignment[far] = c;
      ++size[c];
    }
    std::fill(res.centroids.begin(), res.centroids.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < dim; ++i) res.centroids[res.assignment[r] * dim + i] += pts[r * dim + i];
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < dim; ++i) res.centroids[c * dim + i] /= static_cast<double>(size[c]);
    }
    if (res.assignment == prev) break;
    prev = res.assignment;
  }
  res.inertia = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    res.inertia += sq_dist(&pts[r * dim], &res.centroids[res.assignment[r] * dim], dim);
  }
  return res;
}

}  // namespace

KMeansResult kmeans(std::span<const double> points, std::size_t rows, std::size_t dim, std::size_t k,
                    std::uint64_t seed, const KMeansOptions& options) {
  if (k == 0) throw ConfigError("kmeans: need at least one cluster");
  if (k > rows) {
    throw ConfigError("kmeans: " + std::to_string(k) + " clusters for " + std::to_string(rows) +
                      " observations");
  }
  if (dim == 0 || points.size() != rows * dim) throw ShapeError("kmeans: point matrix shape mismatch");
  for (double v : points) {
    if (!std::isfinite(v)) throw NumericError("kmeans: non-finite observation");
  }
  if (options.restarts == 0) throw ConfigError("kmeans: restarts must be positive");
  if (k == rows) {
    KMeansResult res;
    res.dim = dim;
    res.assignment.resize(rows);
    std::iota(res.assignment.begin(), res.assignment.end(), std::size_t{0});
    res.centroids.assign(points.begin(), points.end());
    return res;
  }
  std::vector<KMeansResult> runs(options.restarts);
  parallel_for(options.restarts, options.execution, [&](std::size_t r) {
    Rng rng = make_rng(seed, "kmeans.restart", r);
    runs[r] = lloyd(points, rows, dim, k, rng, options);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].inertia < runs[best].inertia) best = r;
  }
  runs[best].best_restart = best;
  return std::move(runs[best]);
}

ClusterHypothesis kmeans_baseline(std::span<const data::Observation> observations,
                                  std::size_t num_clusters, std::uint64_t seed,
                                  const KMeansOptions& options) {
  if (observations.empty()) throw ValidationError("kmeans baseline: no observations");
  const std::size_t dim = observations.front().features.size();
  std::vector<double> pts;
  pts.reserve(observations.size() * dim);
  for (const auto& o : observations) {
    if (o.features.size() != dim) throw ShapeError("kmeans baseline: ragged observations");
    pts.insert(pts.end(), o.features.begin(), o.features.end());
  }
  auto fit = std::make_shared<KMeansResult>(kmeans(pts, observations.size(), dim, num_clusters, seed, options));
  ClusterHypothesis h;
  h.num_clusters = num_clusters;
  ClusterAssignment on;
  on.num_clusters = num_clusters;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    on.ids.push_back(observations[i].id);
    on.clusters.push_back(fit->assignment[i]);
  }
  h.on_observations = std::move(on);
  h.assign = [fit](std::span<const double> x) { return fit->nearest(x); };
  h.tags["method"] = "kmeans";
  return h;
}

GroupMode parse_group_mode(const std::string& name) {
  if (name == "per_group" || name == "group") return GroupMode::per_group;
  if (name == "joint") return GroupMode::joint;
  throw ConfigError("unknown group mode '" + name + "' (expected per_group|joint)");
}

std::string to_string(GroupMode mode) { return mode == GroupMode::per_group ? "per_group" : "joint"; }

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean_std: no values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

namespace {

struct ClassMembers {
  int label = 0;
  int group = -1;
  std::vector<std::size_t> rows;  // indices into the observation list
};

}  // namespace

ProtocolSummary run_protocol(const DiscoveryMethod& method, const data::NovelPool& novel,
                             const ProtocolConfig& config) {
  if (config.way == 0 || config.obsv == 0) throw ConfigError("protocol: way and obsv must be positive");
  if (config.trials == 0) throw ConfigError("protocol: at least one trial is required");
  const EvaluationChannel channel(novel.labels);
  const auto& truth = channel.entries();

  std::map<int, ClassMembers> by_class;
  for (std::size_t i = 0; i < novel.observations.size(); ++i) {
    const auto it = truth.find(novel.observations[i].id);
    if (it == truth.end()) throw ValidationError("protocol: observation without a sealed label");
    auto& cm = by_class[it->second.label];
    cm.label = it->second.label;
    cm.group = config.group_mode == GroupMode::per_group ? it->second.rule : -1;
    cm.rows.push_back(i);
  }
  const std::size_t need = config.obsv + config.eval_per_class;
  std::map<int, std::vector<int>> groups;  // group -> eligible classes
  std::string limiting;
  for (const auto& [label, cm] : by_class) {
    if (cm.rows.size() >= need) {
      groups[cm.group].push_back(label);
    } else if (limiting.empty()) {
      limiting = "class " + std::to_string(label) + " has " + std::to_string(cm.rows.size()) +
                 " examples, needs " + std::to_string(need);
    }
  }
  std::vector<int> usable;
  for (const auto& [g, classes] : groups) {
    if (classes.size() >= config.way) usable.push_back(g);
  }
  if (usable.empty()) {
    std::string msg = "protocol infeasible: no " +
                      std::string(config.group_mode == GroupMode::per_group ? "group" : "pool") +
                      " offers " + std::to_string(config.way) + " classes with " +
                      std::to_string(need) + " examples";
    if (!limiting.empty()) msg += " (" + limiting + ")";
    throw InfeasibleError(msg);
  }

  ProtocolSummary summary;
  summary.trials.resize(config.trials);
  parallel_for(config.trials, config.execution, [&](std::size_t t) {
    TrialResult& tr = summary.trials[t];
    tr.trial = t;
    tr.seed = substream_seed(config.seed, "trial", t);
    Rng rng(tr.seed);
    std::uniform_int_distribution<std::size_t> pick_group(0, usable.size() - 1);
    tr.group = usable[pick_group(rng)];
    std::vector<int> classes = groups.at(tr.group);
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(config.way);
    tr.classes = classes;

    std::vector<data::Observation> fit;
    std::map<data::ExampleId, int> fit_truth, eval_truth;
    std::vector<const data::Observation*> held_out;
    for (int label : classes) {
      std::vector<std::size_t> rows = by_class.at(label).rows;
      std::shuffle(rows.begin(), rows.end(), rng);
      for (std::size_t j = 0; j < rows.size() && j < need; ++j) {
        const auto& o = novel.observations[rows[j]];
        if (j < config.obsv) {
          fit.push_back(o);
          fit_truth[o.id] = label;
        } else {
          held_out.push_back(&o);
          eval_truth[o.id] = label;
        }
      }
    }
    // Interleave classes so methods cannot read structure from the order.
    std::shuffle(fit.begin(), fit.end(), rng);
    const auto hyp = method(fit, config.way, substream_seed(tr.seed, "method"));
    tr.tags = hyp.tags;
    if (hyp.on_observations) tr.observation_acc = clustering_accuracy(*hyp.on_observations, fit_truth);
    if (held_out.empty()) {
      if (!hyp.on_observations) {
        ClusterAssignment a;
        a.num_clusters = hyp.num_clusters;
        for (const auto& o : fit) {
          a.ids.push_back(o.id);
          a.clusters.push_back(hyp.assign(o.features));
        }
        tr.observation_acc = clustering_accuracy(a, fit_truth);
      }
      tr.acc = tr.observation_acc;
      return;
    }
    ClusterAssignment a;
    a.num_clusters = hyp.num_clusters;
    for (const auto* o : held_out) {
      a.ids.push_back(o->id);
      a.clusters.push_back(hyp.assign(o->features));
    }
    tr.acc = clustering_accuracy(a, eval_truth);
  });
  std::vector<double> accs;
  for (const auto& tr : summary.trials) accs.push_back(tr.acc);
  std::tie(summary.mean, summary.std) = mean_std(accs);
  return summary;
}

}  // namespace medi::eval
