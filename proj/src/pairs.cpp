#include "medi/pairs.hpp"

#include <algorithm>
#include <numeric>

namespace medi::pairs {

RankMatch parse_rank_match(const std::string& name) {
  if (name == "set") return RankMatch::set;
  if (name == "sequence") return RankMatch::sequence;
  throw ConfigError("unknown rank match '" + name + "' (expected set|sequence)");
}

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "inner_product" || name == "inner") return ScoreMode::inner_product;
  if (name == "cosine") return ScoreMode::cosine;
  throw ConfigError("unknown score mode '" + name + "' (expected inner_product|cosine)");
}

std::vector<std::size_t> top_magnitude_indices(std::span<const double> z, std::size_t topk) {
  // Empty index sets would make every pair "similar".
  if (topk == 0) throw ConfigError("ranking topk must be at least 1");
  if (topk > z.size()) {
    throw ConfigError("ranking topk " + std::to_string(topk) + " exceeds embedding dimension " +
                      std::to_string(z.size()));
  }
  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(topk), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ma = std::abs(z[a]);
                      const double mb = std::abs(z[b]);
                      return ma != mb ? ma > mb : a < b;
                    });
  idx.resize(topk);
  return idx;
}

PairLabelMatrix ranking_similarity(const std::vector<std::vector<double>>& embeddings,
                                   std::size_t topk, RankMatch match) {
  const std::size_t n = embeddings.size();
  std::vector<std::vector<std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : embeddings[i]) {
      if (!std::isfinite(v)) throw NumericError("ranking_similarity: non-finite embedding");
    }
    keys[i] = top_magnitude_indices(embeddings[i], topk);
    if (match == RankMatch::set) std::sort(keys[i].begin(), keys[i].end());
  }
  PairLabelMatrix s(n, topk);
  for (std::size_t i = 0; i < n; ++i) {
    s.set(i, i, 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::uint8_t same = keys[i] == keys[j] ? 1 : 0;
      s.set(i, j, same);
      s.set(j, i, same);
    }
  }
  return s;
}

std::size_t default_topk(std::size_t dim) { return dim >= 10 ? 10 : dim / 2; }

}  // namespace medi::pairs
