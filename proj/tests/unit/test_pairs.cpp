#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "medi/pairs.hpp"
#include "support.hpp"

using namespace medi;
using namespace medi::pairs;

namespace {

/// Top-k by a full stable sort on -|z|.
std::vector<std::size_t> full_sort_topk(const std::vector<double>& z, std::size_t k) {
  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(z[a]) > std::abs(z[b]); });
  idx.resize(k);
  return idx;
}

double scalar_bce(double score, bool same, double eps = kClampEpsilon) {
  const double c = std::min(std::max(score, eps), 1.0 - eps);
  return same ? -std::log(c) : -std::log(1.0 - c);
}

}  // namespace

TEST_CASE("ranking similarity: worked examples") {
  const std::vector<double> zi{0.9, 0.1, 0.5, 0.3};
  auto s = ranking_similarity({zi, zi}, 2);
  CHECK(s(0, 1) == 1);
  s = ranking_similarity({zi, {0.8, 0.2, 0.6, 0.05}}, 2);
  CHECK(s(0, 1) == 1);
  s = ranking_similarity({zi, {0.1, 0.9, 0.2, 0.8}}, 2);
  CHECK(s(0, 1) == 0);
  // Same set, different order: equal as sets, different as sequences.
  const std::vector<std::vector<double>> swapped{{0.9, 0.0, 0.5}, {0.5, 0.0, 0.9}};
  CHECK(ranking_similarity(swapped, 2, RankMatch::set)(0, 1) == 1);
  CHECK(ranking_similarity(swapped, 2, RankMatch::sequence)(0, 1) == 0);
}

TEST_CASE("ranking similarity matches a full-sort oracle and is a valid label matrix") {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + rep % 7, h = 3 + rep % 6, k = 1 + rep % h;
    std::vector<std::vector<double>> z;
    for (std::size_t i = 0; i < n; ++i) {
      auto v = support::gaussian(h, rng);
      // Coarse values provoke ties in magnitude.
      if (rep % 3 == 0) {
        for (auto& x : v) x = std::round(x);
      }
      z.push_back(v);
    }
    const auto s = ranking_similarity(z, k);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(s(i, i) == 1);
      auto a = full_sort_topk(z[i], k);
      CHECK(top_magnitude_indices(z[i], k) == a);
      std::sort(a.begin(), a.end());
      for (std::size_t j = 0; j < n; ++j) {
        auto b = full_sort_topk(z[j], k);
        std::sort(b.begin(), b.end());
        CHECK(s(i, j) == (a == b ? 1 : 0));
        CHECK(s(i, j) == s(j, i));
      }
    }
  }
}

TEST_CASE("top-k bounds and defaults") {
  CHECK_THROWS_AS(ranking_similarity({{1.0, 2.0}}, 3), ConfigError);
  CHECK_THROWS_AS(ranking_similarity({{1.0, 2.0}}, 0), ConfigError);
  CHECK(default_topk(64) == 10);
  CHECK(default_topk(10) == 10);
  CHECK(default_topk(8) == 4);
  CHECK(top_magnitude_indices(std::vector<double>{1.0, -1.0, 0.5}, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("pair BCE: perfect agreement, all one-half, and the scalar oracle") {
  PairLabelMatrix s(3, 1);
  for (std::size_t i = 0; i < 3; ++i) s.set(i, i, 1);
  s.set(0, 1, 1);
  s.set(1, 0, 1);
  std::vector<double> perfect(9);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) perfect[i * 3 + j] = s(i, j);
  }
  CHECK(pair_bce_loss<double>(perfect, s) <= 2.0 * std::abs(std::log(1.0 - kClampEpsilon)));

  const std::vector<double> half(9, 0.5);
  CHECK(std::abs(pair_bce_loss<double>(half, s) - std::log(2.0)) <= 1e-15);

  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    PairLabelMatrix m(2, 1);
    m.set(0, 0, 1);
    m.set(1, 1, 1);
    const std::uint8_t off = rep % 2;
    m.set(0, 1, off);
    m.set(1, 0, off);
    std::vector<double> sc{u(rng), u(rng), u(rng), u(rng)};
    if (rep % 10 == 0) sc[1] = 0.0;  // exercises the clamp
    double oracle = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) oracle += scalar_bce(sc[i * 2 + j], m(i, j) != 0);
    }
    oracle /= 4.0;
    CHECK(std::abs(pair_bce_loss<double>(sc, m) - oracle) <= 1e-12);
  }
}

TEST_CASE("pair BCE gradient: finite differences inside, zero where clamped") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  PairLabelMatrix m(3, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) m.set(i, j, (i + j) % 2 == 0);
  }
  std::vector<double> sc(9);
  for (auto& v : sc) v = u(rng);
  sc[4] = 1.0;  // clamped high
  std::vector<double> g(9);
  pair_bce_loss<double>(sc, m, g);
  CHECK(g[4] == 0.0);
  auto f = [&](std::span<const double> x) { return pair_bce_loss<double>(x, m); };
  for (std::size_t i = 0; i < 9; ++i) {
    if (i == 4) continue;
    CHECK(support::rel_err(g[i], support::central(f, sc, i, 1e-7)) <= 1e-6);
  }
  sc[2] = std::nan("");
  CHECK_THROWS_AS(pair_bce_loss<double>(sc, m), NumericError);
  CHECK_THROWS_AS(pair_bce_loss<double>(std::vector<double>(4, 0.5), m), ShapeError);
}

TEST_CASE("pair scores") {
  const std::vector<std::vector<double>> onehots{{1, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const auto s = pair_scores(onehots);
  CHECK(s[0 * 3 + 1] == 1.0);
  CHECK(s[0 * 3 + 2] == 0.0);
  const std::vector<std::vector<double>> uniform(2, std::vector<double>(4, 0.25));
  CHECK(pair_scores(uniform)[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(pair_scores(uniform, ScoreMode::cosine)[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pair score backward matches finite differences in both modes") {
  Rng rng(10);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto mode : {ScoreMode::inner_product, ScoreMode::cosine}) {
    std::vector<std::vector<double>> probs(3, std::vector<double>(4));
    for (auto& p : probs) {
      for (auto& v : p) v = u(rng);
    }
    const auto w = support::gaussian(9, rng);
    const auto gs = std::vector<double>(w);
    const auto grad = pair_scores_backward<double>(probs, gs, mode);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t d = 0; d < 4; ++d) {
        auto f = [&](std::span<const double> x) {
          auto q = probs;
          q[i].assign(x.begin(), x.end());
          const auto s = pair_scores(q, mode);
          double acc = 0.0;
          for (std::size_t t = 0; t < 9; ++t) acc += w[t] * s[t];
          return acc;
        };
        CHECK(support::rel_err(grad[i][d], support::central(f, probs[i], d)) <= 1e-6);
      }
    }
  }
}
