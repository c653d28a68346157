#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "medi/dual.hpp"
#include "medi/gradient.hpp"
#include "medi/kernels.hpp"
#include "medi/maml.hpp"
#include "medi/nn.hpp"
#include "medi/optim.hpp"
#include "medi/parallel.hpp"
#include "medi/params.hpp"
#include "support.hpp"

using namespace medi;
using namespace medi::nn;

namespace {

struct HalfNorm {
  template <class T>
  T evaluate(std::span<const T> p, std::span<T> g) const {
    T s(0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      s += T(0.5) * p[i] * p[i];
      if (!g.empty()) g[i] += p[i];
    }
    return s;
  }
};

struct Constant {
  template <class T>
  T evaluate(std::span<const T>, std::span<T>) const {
    return T(3.0);
  }
};

struct Zero {
  template <class T>
  T evaluate(std::span<const T>, std::span<T>) const {
    return T(0.0);
  }
};

struct Bad {
  template <class T>
  T evaluate(std::span<const T> p, std::span<T> g) const {
    if (!g.empty()) g[1] = T(std::nan(""));
    return p[0];
  }
};

/// 0.5 p^T A p - b^T p with symmetric A.
struct Quadratic {
  std::vector<double> A, b;
  std::size_t n;
  template <class T>
  T evaluate(std::span<const T> p, std::span<T> g) const {
    T s(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      T Ap(0.0);
      for (std::size_t j = 0; j < n; ++j) Ap += T(A[i * n + j]) * p[j];
      s += T(0.5) * p[i] * Ap - T(b[i]) * p[i];
      if (!g.empty()) g[i] += Ap - T(b[i]);
    }
    return s;
  }
};

ModelConfig tiny(std::size_t in, std::vector<std::size_t> hidden, std::size_t embed, std::size_t head,
                 Activation act = Activation::tanh) {
  ModelConfig c;
  c.input_dim = in;
  c.hidden_dims = std::move(hidden);
  c.embed_dim = embed;
  c.head_width = head;
  c.activation = act;
  return c;
}

std::vector<std::vector<double>> random_inputs(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> x;
  for (std::size_t i = 0; i < n; ++i) x.push_back(support::gaussian(d, rng));
  return x;
}

}  // namespace

TEST_CASE("dual numbers carry first derivatives") {
  const Dual x(2.0, 1.0);
  const Dual y = x * x * x + exp(x) / x - log(x) + sqrt(x);
  CHECK(y.v == doctest::Approx(8.0 + std::exp(2.0) / 2.0 - std::log(2.0) + std::sqrt(2.0)));
  const double dy = 12.0 + (std::exp(2.0) * 2.0 - std::exp(2.0)) / 4.0 - 0.5 + 0.5 / std::sqrt(2.0);
  CHECK(y.d == doctest::Approx(dy));
  const Dual t = tanh(Dual(0.3, 1.0));
  CHECK(t.d == doctest::Approx(1.0 - std::tanh(0.3) * std::tanh(0.3)));
}

TEST_CASE("identity linear layer and zero parameters") {
  EmbeddingClassifier model(tiny(2, {}, 2, 0));
  auto p = model.initialize(0);
  auto w = p.segment("body.0.weight");
  auto b = p.segment("body.0.bias");
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
  w[0] = w[3] = 1.0;
  const std::vector<double> x{1.0, 0.0};
  CHECK(forward_embed(model, p, x) == std::vector<double>{1.0, 0.0});

  EmbeddingClassifier deep(tiny(3, {5, 4}, 2, 0, Activation::relu));
  ParameterVector zero(deep.layout());
  CHECK(forward_embed(deep, zero, std::vector<double>{0.3, -2.0, 7.0}) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(forward_embed(deep, zero, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("random network matches a hand-rolled matrix-multiply oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    EmbeddingClassifier model(tiny(4, {6, 5}, 3, 0, rep % 2 ? Activation::relu : Activation::tanh));
    const auto p = model.initialize(static_cast<std::uint64_t>(rep));
    const auto x = support::gaussian(4, rng);
    std::vector<double> h = x;
    const std::size_t widths[] = {6, 5, 3};
    for (std::size_t l = 0; l < 3; ++l) {
      const auto W = p.segment("body." + std::to_string(l) + ".weight");
      const auto B = p.segment("body." + std::to_string(l) + ".bias");
      std::vector<double> out(widths[l]);
      for (std::size_t o = 0; o < widths[l]; ++o) {
        double acc = B[o];
        for (std::size_t i = 0; i < h.size(); ++i) acc += W[o * h.size() + i] * h[i];
        if (l < 2) acc = rep % 2 ? std::max(acc, 0.0) : std::tanh(acc);
        out[o] = acc;
      }
      h = out;
    }
    const auto z = forward_embed(model, p, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(z[i] - h[i]) <= 1e-10);
  }
}

TEST_CASE("softmax") {
  const auto u = softmax<double>(std::vector<double>{2.0, 2.0, 2.0, 2.0});
  for (double v : u) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const auto s = softmax<double>(std::vector<double>{50.0, 0.0, 0.0});
  CHECK(s[0] > 1.0 - 1e-9);
  const auto q = softmax<double>(std::vector<double>{1.0, 2.0, 3.0});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(q[i] - std::exp(i + 1.0) / z) <= 1e-12);
}

TEST_CASE("gradients of trivial objectives") {
  const std::vector<double> theta{0.5, -1.5, 2.0};
  const auto vg = value_and_gradient(HalfNorm{}, theta);
  CHECK(vg.gradient == theta);
  const auto zero = value_and_gradient(Constant{}, theta);
  for (double g : zero.gradient) CHECK(g == 0.0);
}

TEST_CASE("pair loss on a random 2-layer network passes finite differences") {
  Rng rng(5);
  EmbeddingClassifier model(tiny(3, {6}, 6, 4));
  const auto p = model.initialize(2);
  maml::PairObjective obj(model, random_inputs(4, 3, rng), {3});
  const auto vg = value_and_gradient(obj, p.values);
  auto f = [&](std::span<const double> q) { return objective_value(obj, q); };
  std::uniform_int_distribution<std::size_t> coord(0, p.size() - 1);
  for (int i = 0; i < 10; ++i) {
    const std::size_t c = coord(rng);
    const double num = support::central(f, p.values, c, 1e-6);
    CHECK(support::rel_err(vg.gradient[c], num) <= 1e-4);
  }
}

TEST_CASE("Hessian-vector product matches differences of gradients") {
  Rng rng(8);
  EmbeddingClassifier model(tiny(3, {5}, 6, 3));
  const auto p = model.initialize(4);
  maml::PairObjective obj(model, random_inputs(5, 3, rng), {3});
  const auto v = support::gaussian(p.size(), rng);
  const auto hv = hessian_vector_product(obj, p.values, v);
  const double h = 1e-5;
  std::vector<double> up(p.values), down(p.values);
  for (std::size_t i = 0; i < up.size(); ++i) {
    up[i] += h * v[i];
    down[i] -= h * v[i];
  }
  const auto gu = value_and_gradient(obj, up).gradient;
  const auto gd = value_and_gradient(obj, down).gradient;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < hv.size(); ++i) {
    const double fd = (gu[i] - gd[i]) / (2.0 * h);
    num += (hv[i] - fd) * (hv[i] - fd);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / den) <= 1e-5);

  Quadratic q{{2.0, 0.5, 0.5, 1.0}, {0.0, 0.0}, 2};
  const auto qhv = hessian_vector_product(q, std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, -2.0});
  CHECK(qhv[0] == doctest::Approx(1.0));
  CHECK(qhv[1] == doctest::Approx(-1.5));
}

TEST_CASE("adaptation with a zero inner loss is the plain outer gradient") {
  Quadratic outer{{1.0, 0.0, 0.0, 3.0}, {1.0, -1.0}, 2};
  const std::vector<double> theta{0.2, 0.7};
  const auto r = gradient_through_adaptation(Zero{}, outer, theta, 0.1, 5, OrderMode::second);
  CHECK(r.adapted == theta);
  CHECK(r.meta_gradient == value_and_gradient(outer, theta).gradient);
}

TEST_CASE("closed-form bilevel gradient for quadratic inner and outer losses") {
  // theta_T = B^T theta + sum (B^t) alpha b with B = I - alpha A;
  // d outer / d theta = (B^T)^T (C theta_T - c).
  const std::vector<double> A{2.0, 0.4, 0.4, 1.0}, a{0.3, -0.2};
  const std::vector<double> C{1.5, -0.3, -0.3, 0.8}, c{-1.0, 0.5};
  Quadratic inner{A, a, 2}, outer{C, c, 2};
  const double alpha = 0.15;
  const std::size_t T = 4;
  const std::vector<double> theta{0.9, -0.4};

  auto mul = [](const std::vector<double>& M, const std::vector<double>& v) {
    return std::vector<double>{M[0] * v[0] + M[1] * v[1], M[2] * v[0] + M[3] * v[1]};
  };
  const std::vector<double> B{1.0 - alpha * A[0], -alpha * A[1], -alpha * A[2], 1.0 - alpha * A[3]};
  std::vector<double> th = theta;
  for (std::size_t t = 0; t < T; ++t) {
    auto Bt = mul(B, th);
    th = {Bt[0] + alpha * a[0], Bt[1] + alpha * a[1]};
  }
  auto g = mul(C, th);
  g = {g[0] - c[0], g[1] - c[1]};
  std::vector<double> expected = g;
  for (std::size_t t = 0; t < T; ++t) expected = mul(B, expected);  // B symmetric

  const auto second = gradient_through_adaptation(inner, outer, theta, alpha, T, OrderMode::second);
  const auto first = gradient_through_adaptation(inner, outer, theta, alpha, T, OrderMode::first);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(second.adapted[i] - th[i]) <= 1e-12);
    CHECK(std::abs(second.meta_gradient[i] - expected[i]) <= 1e-8);
    CHECK(std::abs(first.meta_gradient[i] - g[i]) <= 1e-12);
  }
}

TEST_CASE("second-order gradient through a tiny network matches finite differences") {
  Rng rng(21);
  EmbeddingClassifier model(tiny(3, {5}, 4, 3));
  const auto p = model.initialize(9);
  maml::PairObjective inner(model, random_inputs(4, 3, rng), {2});
  maml::PairObjective outer(model, random_inputs(4, 3, rng), {2});
  const double alpha = 0.5;
  const auto r = gradient_through_adaptation(inner, outer, p.values, alpha, 1, OrderMode::second);
  auto composed = [&](std::span<const double> q) {
    return objective_value(outer, adapt(inner, q, alpha, 1));
  };
  std::uniform_int_distribution<std::size_t> coord(0, p.size() - 1);
  for (int i = 0; i < 10; ++i) {
    const std::size_t c = coord(rng);
    CHECK(support::rel_err(r.meta_gradient[c], support::central(composed, p.values, c, 1e-6)) <= 1e-4);
  }
}

TEST_CASE("non-finite gradients are reported as numeric errors") {
  CHECK_THROWS_AS(value_and_gradient(Bad{}, std::vector<double>{1.0, 2.0}), NumericError);
}

TEST_CASE("layout flatten/unflatten and checkpoints are bit exact") {
  EmbeddingClassifier model(tiny(3, {4}, 2, 3));
  const auto p = model.initialize(77);
  const auto back = ParameterVector::flatten(p.layout, p.unflatten());
  CHECK(back.values == p.values);
  CHECK(back.layout == p.layout);

  Layout l;
  CHECK(l.append("a", 3) == 0);
  CHECK(l.append("b", 2) == 3);
  CHECK(l.owner(4).name == "b");
  CHECK_THROWS(Layout({{"a", 0, 3}, {"b", 2, 2}}));

  const auto dir = std::filesystem::temp_directory_path() / "medi_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.ckpt").string();
  ParameterVector odd = p;
  odd.values[0] = 0.1 + 0.2;
  odd.values[1] = -0.0;
  odd.values[2] = 5e-324;
  save_checkpoint(path, odd, {{"seed", "77"}});
  std::map<std::string, std::string> meta;
  const auto loaded = load_checkpoint(path, &meta);
  CHECK(loaded.layout == odd.layout);
  REQUIRE(loaded.values.size() == odd.values.size());
  CHECK(std::memcmp(loaded.values.data(), odd.values.data(), odd.values.size() * sizeof(double)) == 0);
  CHECK(meta.at("seed") == "77");
  {
    std::ofstream trunc(path, std::ios::binary | std::ios::trunc);
    trunc << "xx";
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
  Rng rng(3);
  const std::size_t rows = 37, in = 13, out = 9;
  const auto x = support::gaussian(rows * in, rng);
  const auto w = support::gaussian(out * in, rng);
  const auto b = support::gaussian(out, rng);
  std::vector<double> ys(rows * out), yp(rows * out);
  kernels::serial::dense_forward(x, rows, in, w, b, out, ys);
  kernels::parallel::dense_forward(x, rows, in, w, b, out, yp);
  CHECK(ys == yp);
  std::vector<double> gs(rows * rows), gp(rows * rows);
  kernels::serial::gram(x, rows, in, gs);
  kernels::parallel::gram(x, rows, in, gp);
  CHECK(gs == gp);
  std::vector<std::size_t> as(rows), ap(rows);
  std::vector<double> ds(rows), dp(rows);
  kernels::serial::nearest_centroid(x, rows, in, w, out, as, ds);
  kernels::parallel::nearest_centroid(x, rows, in, w, out, ap, dp);
  CHECK(as == ap);
  CHECK(ds == dp);

  std::vector<double> s1(4, 0.0), s2(4, 0.0);
  auto fn = [&](std::size_t i, std::span<double> acc) {
    for (std::size_t j = 0; j < 4; ++j) acc[j] += x[(i * 4 + j) % x.size()] / 3.0;
    return x[i];
  };
  const double t1 = chunked_accumulate(rows, 4, 5, kernels::Execution::serial, s1, fn);
  const double t2 = chunked_accumulate(rows, 4, 5, kernels::Execution::parallel, s2, fn);
  CHECK(t1 == t2);
  CHECK(s1 == s2);
}

TEST_CASE("Adam step and step schedule") {
  Adam adam(2);
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{0.5, -2.0};
  adam.step(p, g, 0.1);
  // First bias-corrected step moves each coordinate by rate * sign(grad).
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p[1] == doctest::Approx(-0.9).epsilon(1e-7));
  const double after_one = p[0];
  adam.step(p, g, 0.1);
  const double m = 0.9 * 0.1 * 0.5 + 0.1 * 0.5, v = 0.999 * 0.001 * 0.25 + 0.001 * 0.25;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(after_one - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));

  Optimizer sgd(OptimizerKind::sgd, 2);
  std::vector<double> q{1.0, 1.0};
  sgd.step(q, g, 0.1);
  CHECK(q == std::vector<double>{1.0 - 0.05, 1.0 + 0.2});

  StepSchedule s{1e-3, 20};
  CHECK(s.rate(0) == 1e-3);
  CHECK(s.rate(19) == 1e-3);
  CHECK(s.rate(20) == 5e-4);
  CHECK(s.rate(45) == 2.5e-4);
  CHECK(StepSchedule{1e-3, 0}.rate(1000) == 1e-3);
}

TEST_CASE("model config validation") {
  ModelConfig c = tiny(0, {4}, 2, 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(3, {0}, 2, 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(3, {4}, 0, 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
