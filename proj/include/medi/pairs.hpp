#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "medi/dual.hpp"
#include "medi/error.hpp"

namespace medi::pairs {

/// Clamp applied to pair scores before taking logs.
inline constexpr double kClampEpsilon = 1e-7;

/// How two top-k index lists are compared.
enum class RankMatch {
  set,       // same indices in any order
  sequence,  // same indices in the same rank order
};

/// How pair scores are formed from head probabilities.
enum class ScoreMode {
  inner_product,  // g(z_i)^T g(z_j)
  cosine,         // inner product of the normalized probability vectors
};

RankMatch parse_rank_match(const std::string& name);
ScoreMode parse_score_mode(const std::string& name);

/// Symmetric binary pseudo-labels with a unit diagonal.
class PairLabelMatrix {
 public:
  PairLabelMatrix(std::size_t n, std::size_t topk) : n_(n), topk_(topk), s_(n * n, 0) {}

  [[nodiscard]] std::size_t size() const { return n_; }
  [[nodiscard]] std::size_t topk() const { return topk_; }
  [[nodiscard]] std::uint8_t operator()(std::size_t i, std::size_t j) const { return s_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, std::uint8_t v) { s_[i * n_ + j] = v; }

 private:
  std::size_t n_;
  std::size_t topk_;
  std::vector<std::uint8_t> s_;
};

/// Indices of the `topk` largest |z| entries in rank order; equal magnitudes
/// rank the lower index first.
std::vector<std::size_t> top_magnitude_indices(std::span<const double> z, std::size_t topk);

/// s_ij = 1 iff the top-k magnitude index sets of z_i and z_j coincide.
PairLabelMatrix ranking_similarity(const std::vector<std::vector<double>>& embeddings,
                                   std::size_t topk, RankMatch match = RankMatch::set);

/// 10 when the embedding has at least 10 dimensions, else half of it.
std::size_t default_topk(std::size_t dim);

/// -(1/N^2) sum_ij [s_ij log c_ij + (1 - s_ij) log(1 - c_ij)], c = clamp(score).
/// When `grad_scores` is nonempty it receives d(loss)/d(score); clamped
/// entries get zero.
template <class T>
T pair_bce_loss(std::span<const T> scores, const PairLabelMatrix& labels,
                std::span<T> grad_scores = {}, double eps = kClampEpsilon) {
  using std::log;
  const std::size_t n = labels.size();
  if (scores.size() != n * n) throw ShapeError("pair_bce_loss: score matrix size mismatch");
  const double norm = 1.0 / static_cast<double>(n * n);
  T loss(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T& raw = scores[i * n + j];
      if (!std::isfinite(value(raw))) {
        throw NumericError("pair_bce_loss: non-finite score at (" + std::to_string(i) + "," +
                           std::to_string(j) + ")");
      }
      const bool clamped_lo = value(raw) < eps;
      const bool clamped_hi = value(raw) > 1.0 - eps;
      const T c = clamped_lo ? T(eps) : (clamped_hi ? T(1.0 - eps) : raw);
      const bool same = labels(i, j) != 0;
      loss -= same ? log(c) : log(T(1.0) - c);
      if (!grad_scores.empty()) {
        grad_scores[i * n + j] =
            (clamped_lo || clamped_hi)
                ? T(0.0)
                : (same ? T(-norm) / c : T(norm) / (T(1.0) - c));
      }
    }
  }
  return loss * T(norm);
}

/// N x N row-major scores from head probability vectors.
template <class T>
std::vector<T> pair_scores(const std::vector<std::vector<T>>& probs,
                           ScoreMode mode = ScoreMode::inner_product) {
  using std::sqrt;
  const std::size_t n = probs.size();
  std::vector<T> norms(n, T(1.0));
  if (mode == ScoreMode::cosine) {
    for (std::size_t i = 0; i < n; ++i) {
      T sq(0.0);
      for (const auto& v : probs[i]) sq += v * v;
      norms[i] = sqrt(sq);
    }
  }
  std::vector<T> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (probs[i].size() != probs.front().size()) throw ShapeError("pair_scores: ragged input");
    for (std::size_t j = 0; j < n; ++j) {
      T acc(0.0);
      for (std::size_t d = 0; d < probs[i].size(); ++d) acc += probs[i][d] * probs[j][d];
      s[i * n + j] = mode == ScoreMode::cosine ? acc / (norms[i] * norms[j]) : acc;
    }
  }
  return s;
}

/// d(loss)/d(probs) given d(loss)/d(scores).
template <class T>
std::vector<std::vector<T>> pair_scores_backward(const std::vector<std::vector<T>>& probs,
                                                 std::span<const T> grad_scores,
                                                 ScoreMode mode = ScoreMode::inner_product) {
  using std::sqrt;
  const std::size_t n = probs.size();
  const std::size_t width = n ? probs.front().size() : 0;
  std::vector<std::vector<T>> grad(n, std::vector<T>(width, T(0.0)));
  if (mode == ScoreMode::inner_product) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T g = grad_scores[i * n + j];
        for (std::size_t d = 0; d < width; ++d) {
          grad[i][d] += g * probs[j][d];
          grad[j][d] += g * probs[i][d];
        }
      }
    }
    return grad;
  }
  std::vector<std::vector<T>> unit(n, std::vector<T>(width));
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    T sq(0.0);
    for (const auto& v : probs[i]) sq += v * v;
    norms[i] = sqrt(sq);
    for (std::size_t d = 0; d < width; ++d) unit[i][d] = probs[i][d] / norms[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T g = grad_scores[i * n + j];
      T cos(0.0);
      for (std::size_t d = 0; d < width; ++d) cos += unit[i][d] * unit[j][d];
      for (std::size_t d = 0; d < width; ++d) {
        grad[i][d] += g * (unit[j][d] - cos * unit[i][d]) / norms[i];
        grad[j][d] += g * (unit[i][d] - cos * unit[j][d]) / norms[j];
      }
    }
  }
  return grad;
}

}  // namespace medi::pairs
