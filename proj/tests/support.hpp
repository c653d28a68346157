#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "medi/data.hpp"
#include "medi/rng.hpp"

namespace support {

inline std::vector<double> gaussian(std::size_t n, medi::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

/// Plain central difference, kept separate from the library's own helper.
inline double central(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                      std::size_t i, double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

/// Pool of `classes` classes with `per_class` gaussian examples around
/// well-separated centres; labels start at `first_label`.
inline std::vector<medi::data::LabeledExample> blob_pool(std::size_t classes, std::size_t per_class,
                                                         std::size_t dim, double spread, std::uint64_t seed,
                                                         int first_label = 0) {
  medi::Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<medi::data::LabeledExample> pool;
  medi::data::ExampleId id = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> centre(dim, 0.0);
    centre[c % dim] = 10.0 * static_cast<double>(1 + c / dim);
    for (std::size_t s = 0; s < per_class; ++s) {
      medi::data::LabeledExample ex;
      ex.id = id++;
      ex.label = first_label + static_cast<int>(c);
      ex.rule = 0;
      for (double v : centre) ex.features.push_back(v + spread * g(rng));
      pool.push_back(std::move(ex));
    }
  }
  return pool;
}

}  // namespace support
