#include <doctest.h>

#include <sstream>

#include "medi/cata.hpp"
#include "medi/synthetic.hpp"
#include "support.hpp"

using namespace medi;
using namespace medi::cata;

namespace {

SamplerConfig one_hidden(std::size_t views, double lambda, std::size_t extractor, std::size_t hidden) {
  SamplerConfig c;
  c.num_views = views;
  c.tradeoff = lambda;
  c.extractor_dims = {extractor};
  c.head_hidden = {hidden};
  return c;
}

void set(nn::ParameterVector& p, const std::string& seg, std::vector<double> values) {
  auto s = p.segment(seg);
  REQUIRE(s.size() == values.size());
  std::copy(values.begin(), values.end(), s.begin());
}

std::vector<data::LabeledExample> two_onehots() {
  return {{0, {1.0, 0.0}, 0, 0}, {1, {0.0, 1.0}, 1, 0}};
}

double log_softmax_at(std::vector<double> z, std::size_t y) {
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return z[y] - top - std::log(s);
}

}  // namespace

TEST_CASE("sampler config validation") {
  SamplerConfig c;
  c.num_views = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.num_views = 3;
  c.tradeoff = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mean |W_i . W_j| over unordered pairs") {
  const std::vector<std::vector<double>> w{{1, 0, 2}, {0, 3, -1}, {2, 2, 2}};
  // |-2| + |6| + |4| over 3 pairs
  CHECK(mean_abs_inner_product(w) == doctest::Approx(4.0));
}

TEST_CASE("perfect orthogonal heads give zero loss") {
  MultiViewSamplerModel model(2, {0, 1}, one_hidden(2, 1.0 / 3.0, 4, 4));
  // Class 0 lights extractor units 0 and 2, class 1 units 1 and 3; head 0
  // reads units 0-1, head 1 reads units 2-3.
  set(model.extractor_params, "extractor.0.weight", {1, 0, 0, 1, 1, 0, 0, 1});
  set(model.extractor_params, "extractor.0.bias", {0, 0, 0, 0});
  set(model.head_params[0], "head.0.weight", {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  set(model.head_params[1], "head.0.weight", {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  set(model.head_params[0], "head.1.weight", {100, 0, 0, 0, 0, 100, 0, 0});
  set(model.head_params[1], "head.1.weight", {0, 0, 100, 0, 0, 0, 0, 100});
  for (auto& h : model.head_params) {
    set(h, "head.0.bias", {0, 0, 0, 0});
    set(h, "head.1.bias", {0, 0});
  }
  const auto r = sampler_loss(model, two_onehots());
  CHECK(r.penalty == 0.0);
  CHECK(r.loss <= 1e-12);
}

TEST_CASE("two identical unit heads with perfect classification cost lambda") {
  const double lambda = 0.7;
  MultiViewSamplerModel model(2, {0, 1}, one_hidden(2, lambda, 2, 1));
  set(model.extractor_params, "extractor.0.weight", {1000, 0, 0, 1000});
  set(model.extractor_params, "extractor.0.bias", {0, 0});
  for (auto& h : model.head_params) {
    set(h, "head.0.weight", {1, 0});
    set(h, "head.0.bias", {0});
    set(h, "head.1.weight", {1, 0});
    set(h, "head.1.bias", {0, 50});
  }
  const auto r = sampler_loss(model, two_onehots());
  CHECK(r.cross_entropy <= 1e-12);
  CHECK(r.penalty == doctest::Approx(lambda).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(lambda).epsilon(1e-12));
}

TEST_CASE("lambda = 0 is the mean cross-entropy over heads") {
  data::SyntheticMultiRuleSpec spec{3, 3, 6, 0.2, 4};
  const auto ds = data::generate_synthetic_multiview(spec, 3);
  std::vector<data::LabeledExample> pool(ds.examples().begin(), ds.examples().end());
  SamplerConfig cfg;
  cfg.tradeoff = 0.0;
  cfg.extractor_dims = {5};
  cfg.head_hidden = {4};
  MultiViewSamplerModel model(6, ds.classes(), cfg);
  double oracle = 0.0;
  for (const auto& ex : pool) {
    const auto e = model.extractor().apply<double>(model.extractor_params.values, ex.features);
    for (std::size_t v = 0; v < model.num_views(); ++v) {
      const auto z = model.head().apply<double>(model.head_params[v].values, e);
      oracle -= log_softmax_at(z, model.class_index(ex.label));
    }
  }
  oracle /= static_cast<double>(pool.size() * model.num_views());
  const auto r = sampler_loss(model, pool);
  CHECK(std::abs(r.loss - oracle) <= 1e-10);
  CHECK(r.penalty == 0.0);
}

TEST_CASE("sampler loss gradients match finite differences") {
  data::SyntheticMultiRuleSpec spec{2, 2, 4, 0.3, 3};
  const auto ds = data::generate_synthetic_multiview(spec, 1);
  std::vector<data::LabeledExample> pool(ds.examples().begin(), ds.examples().end());
  SamplerConfig cfg;
  cfg.num_views = 3;
  cfg.tradeoff = 0.9;
  cfg.extractor_dims = {5};
  cfg.head_hidden = {3};
  cfg.activation = nn::Activation::tanh;
  MultiViewSamplerModel model(4, ds.classes(), cfg);
  const auto r = sampler_loss(model, pool, true);
  Rng rng(2);
  auto ext = [&](std::span<const double> p) {
    MultiViewSamplerModel m = model;
    m.extractor_params.values.assign(p.begin(), p.end());
    return sampler_loss(m, pool).loss;
  };
  std::uniform_int_distribution<std::size_t> ec(0, model.extractor_params.size() - 1);
  for (int i = 0; i < 8; ++i) {
    const auto c = ec(rng);
    CHECK(support::rel_err(r.extractor_grad[c], support::central(ext, model.extractor_params.values, c)) <= 1e-5);
  }
  for (std::size_t v = 0; v < 3; ++v) {
    auto head = [&](std::span<const double> p) {
      MultiViewSamplerModel m = model;
      m.head_params[v].values.assign(p.begin(), p.end());
      return sampler_loss(m, pool).loss;
    };
    std::uniform_int_distribution<std::size_t> hc(0, model.head_params[v].size() - 1);
    for (int i = 0; i < 6; ++i) {
      const auto c = hc(rng);
      CHECK(support::rel_err(r.head_grads[v][c], support::central(head, model.head_params[v].values, c)) <= 1e-5);
    }
  }
}

TEST_CASE("first-layer weights are re-extractable from head parameters") {
  MultiViewSamplerModel model(6, {0, 1, 2}, SamplerConfig{});
  const auto w = model.first_layer_weights();
  REQUIRE(w.size() == model.num_views());
  for (std::size_t v = 0; v < w.size(); ++v) {
    const auto seg = model.head_params[v].segment("head.0.weight");
    CHECK(w[v] == std::vector<double>(seg.begin(), seg.end()));
  }
}

TEST_CASE("training: zero steps is the initialization, defaults reduce head overlap") {
  data::SyntheticMultiRuleSpec spec{3, 5, 12, 0.1, 20};
  const auto ds = data::generate_synthetic_multiview(spec, 0);
  std::vector<data::LabeledExample> pool(ds.examples().begin(), ds.examples().end());
  SamplerConfig cfg;
  cfg.steps = 0;
  const auto idle = train_cata(pool, cfg);
  const MultiViewSamplerModel fresh(12, ds.classes(), cfg);
  CHECK(idle.model.extractor_params.values == fresh.extractor_params.values);
  for (std::size_t v = 0; v < 3; ++v) CHECK(idle.model.head_params[v].values == fresh.head_params[v].values);

  cfg.steps = 50;
  const auto trained = train_cata(pool, cfg);
  CHECK(trained.final_orthogonality < trained.initial_orthogonality);
  CHECK(trained.loss_trace.size() == 51);
  CHECK(trained.initial_orthogonality == doctest::Approx(mean_abs_inner_product(fresh.first_layer_weights())));
}

TEST_CASE("argmax with lowest-index ties") {
  CHECK(argmax_lowest(std::vector<double>{0.7, 0.2, 0.1}) == 0);
  CHECK(argmax_lowest(std::vector<double>{0.2, 0.7, 0.7}) == 1);
  CHECK(argmax_lowest(std::vector<double>{0.4, 0.4, 0.4}) == 0);
}

TEST_CASE("identical heads tie everywhere and assign every example to view 0") {
  data::SyntheticMultiRuleSpec spec{2, 5, 4, 0.3, 10};
  const auto ds = data::generate_synthetic_multiview(spec, 2);
  std::vector<data::LabeledExample> pool(ds.examples().begin(), ds.examples().end());
  MultiViewSamplerModel model(4, ds.classes(), SamplerConfig{});
  for (auto& h : model.head_params) h = model.head_params[0];
  const auto part = assign_views(model, pool);
  CHECK(part.sizes[0] == 100);
  CHECK(part.sizes[1] + part.sizes[2] == 0);
}

TEST_CASE("a trained partition covers every example once") {
  data::SyntheticMultiRuleSpec spec{2, 5, 4, 0.3, 10};
  const auto ds = data::generate_synthetic_multiview(spec, 2);
  std::vector<data::LabeledExample> pool(ds.examples().begin(), ds.examples().end());
  SamplerConfig cfg;
  cfg.steps = 5;
  const auto part = assign_views(train_cata(pool, cfg).model, pool);
  part.validate();
  CHECK(part.assignment.size() == 100);
  std::size_t total = 0;
  for (auto s : part.sizes) total += s;
  CHECK(total == 100);
  const auto serial = assign_views(train_cata(pool, cfg).model, pool, kernels::Execution::serial);
  CHECK(serial.assignment == part.assignment);
}

TEST_CASE("partition text round trip and validation") {
  ViewPartition p;
  p.num_views = 3;
  p.assignment = {{4, 0}, {9, 2}, {11, 2}};
  p.sizes = {1, 0, 2};
  std::stringstream ss;
  write_partition(ss, p);
  const auto back = read_partition(ss);
  CHECK(back.num_views == 3);
  CHECK(back.assignment == p.assignment);
  CHECK(back.sizes == p.sizes);

  ViewPartition bad = p;
  bad.sizes = {1, 1, 1};
  CHECK_THROWS(bad.validate());
  std::stringstream out_of_range("# views 2\n1\t5\n");
  CHECK_THROWS(read_partition(out_of_range));
}

TEST_CASE("view purity under best matching") {
  std::vector<data::LabeledExample> pool;
  ViewPartition p;
  p.num_views = 2;
  p.sizes = {0, 0};
  for (data::ExampleId i = 0; i < 10; ++i) {
    pool.push_back({i, {0.0}, 0, i < 5 ? 1 : 0});
    const std::size_t view = i < 4 ? 0 : 1;  // one example of rule 1 lands in view 1
    p.assignment[i] = view;
    ++p.sizes[view];
  }
  CHECK(view_purity(p, pool) == doctest::Approx(0.9));
}

namespace {

/// Pool whose first `a` examples of each class sit in view 0 and the rest in view 1.
std::pair<std::vector<data::LabeledExample>, ViewPartition> two_view_pool(std::size_t classes, std::size_t per_class,
                                                                          std::size_t in_first) {
  std::vector<data::LabeledExample> pool;
  ViewPartition p;
  p.num_views = 2;
  p.sizes = {0, 0};
  data::ExampleId id = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++id) {
      pool.push_back({id, {static_cast<double>(c)}, static_cast<int>(c), 0});
      const std::size_t v = s < in_first ? 0 : 1;
      p.assignment[id] = v;
      ++p.sizes[v];
    }
  }
  return {pool, p};
}

}  // namespace

TEST_CASE("views are drawn in proportion to their size") {
  auto [pool, part] = two_view_pool(4, 100, 75);  // sizes 300 and 100
  const auto sampler = TaskSampler::by_views(pool, part, false);
  Rng rng(1);
  std::size_t first = 0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto ep = sampler.sample(2, 1, 1, rng);
    REQUIRE(ep.source_view.has_value());
    first += *ep.source_view == 0;
  }
  CHECK(std::abs(static_cast<double>(first) / draws - 0.75) <= 0.05);
}

TEST_CASE("a single feasible view is always selected") {
  auto [pool, part] = two_view_pool(3, 20, 17);  // view 1 holds 3 per class
  const auto sampler = TaskSampler::by_views(pool, part, false);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) CHECK(*sampler.sample(3, 1, 15, rng).source_view == 0);
  const auto f = sampler.feasibility(3, 1, 15);
  CHECK(f[0].feasible);
  CHECK_FALSE(f[1].feasible);
}

TEST_CASE("1-obsv with 20 per class split across views is infeasible") {
  auto [pool, part] = two_view_pool(5, 20, 10);  // no view holds 16 of a class
  Rng rng(0);
  try {
    (void)sample_task(part, pool, 5, 1, 15, rng);
    FAIL("expected CATA infeasible");
  } catch (const CataInfeasible& e) {
    CHECK(std::string(e.what()).find("CATA infeasible") != std::string::npos);
    REQUIRE(e.diagnostics().size() == 2);
    for (const auto& d : e.diagnostics()) {
      CHECK_FALSE(d.feasible);
      CHECK(d.size == 50);
      CHECK(d.eligible_classes == 0);
    }
  }
  const auto strict = TaskSampler::by_views(pool, part, false);
  CHECK_THROWS_AS(strict.sample(5, 1, 15, rng), CataInfeasible);
  const auto lenient = TaskSampler::by_views(pool, part, true);
  const auto ep = lenient.sample(5, 1, 15, rng);
  CHECK(ep.cata_fallback);
  CHECK_FALSE(ep.source_view.has_value());

  auto [whole, keep] = two_view_pool(5, 20, 20);
  CHECK_NOTHROW((void)sample_task(keep, whole, 5, 1, 15, rng));
}

TEST_CASE("uniform sampler draws from the whole pool") {
  const auto pool = support::blob_pool(6, 16, 3, 0.1, 1);
  const auto sampler = TaskSampler::uniform(pool);
  Rng rng(3);
  const auto ep = sampler.sample(5, 1, 15, rng);
  CHECK(ep.classes.size() == 5);
  CHECK_FALSE(ep.cata_fallback);
  CHECK_FALSE(sampler.uses_views());
}
