#include "medi/kernels.hpp"

#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "medi/error.hpp"

namespace medi::kernels {

namespace {

// Below this many output elements the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 4096;

void check_dense(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                 std::span<const double> weight, std::span<const double> bias,
                 std::size_t out_dim, std::span<double> out) {
  if (in.size() != rows * in_dim || weight.size() != out_dim * in_dim ||
      bias.size() != out_dim || out.size() != rows * out_dim) {
    throw ShapeError("dense_forward: buffer sizes do not match dimensions");
  }
}

inline double dense_cell(const double* x, const double* w, double b, std::size_t n) {
  double acc = b;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * w[i];
  return acc;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void nearest_row(const double* x, std::size_t dim, const double* centroids,
                        std::size_t count, std::size_t& best, double& best_d) {
  best = 0;
  best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    double d = 0.0;
    const double* m = centroids + c * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      const double diff = x[i] - m[i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
}

}  // namespace

namespace serial {

void dense_forward(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                   std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_dim, std::span<double> out) {
  check_dense(in, rows, in_dim, weight, bias, out_dim, out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      out[r * out_dim + o] =
          dense_cell(in.data() + r * in_dim, weight.data() + o * in_dim, bias[o], in_dim);
    }
  }
}

void gram(std::span<const double> points, std::size_t rows, std::size_t dim,
          std::span<double> out) {
  if (points.size() != rows * dim || out.size() != rows * rows) {
    throw ShapeError("gram: buffer sizes do not match dimensions");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < rows; ++j) {
      out[i * rows + j] = dot(points.data() + i * dim, points.data() + j * dim, dim);
    }
  }
}

void nearest_centroid(std::span<const double> points, std::size_t rows, std::size_t dim,
                      std::span<const double> centroids, std::size_t count,
                      std::span<std::size_t> assignment, std::span<double> sq_distance) {
  if (points.size() != rows * dim || centroids.size() != count * dim ||
      assignment.size() != rows || sq_distance.size() != rows || count == 0) {
    throw ShapeError("nearest_centroid: buffer sizes do not match dimensions");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    nearest_row(points.data() + r * dim, dim, centroids.data(), count, assignment[r],
                sq_distance[r]);
  }
}

}  // namespace serial

namespace parallel {

void dense_forward(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                   std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_dim, std::span<double> out) {
  check_dense(in, rows, in_dim, weight, bias, out_dim, out);
  const auto n = static_cast<long>(rows * out_dim);
#pragma omp parallel for schedule(static) if (rows * out_dim >= kParallelThreshold)
  for (long cell = 0; cell < n; ++cell) {
    const auto r = static_cast<std::size_t>(cell) / out_dim;
    const auto o = static_cast<std::size_t>(cell) % out_dim;
    out[r * out_dim + o] =
        dense_cell(in.data() + r * in_dim, weight.data() + o * in_dim, bias[o], in_dim);
  }
}

void gram(std::span<const double> points, std::size_t rows, std::size_t dim,
          std::span<double> out) {
  if (points.size() != rows * dim || out.size() != rows * rows) {
    throw ShapeError("gram: buffer sizes do not match dimensions");
  }
  const auto n = static_cast<long>(rows);
#pragma omp parallel for collapse(2) schedule(static) if (rows * rows >= kParallelThreshold)
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * rows + static_cast<std::size_t>(j)] =
          dot(points.data() + i * static_cast<long>(dim),
              points.data() + j * static_cast<long>(dim), dim);
    }
  }
}

void nearest_centroid(std::span<const double> points, std::size_t rows, std::size_t dim,
                      std::span<const double> centroids, std::size_t count,
                      std::span<std::size_t> assignment, std::span<double> sq_distance) {
  if (points.size() != rows * dim || centroids.size() != count * dim ||
      assignment.size() != rows || sq_distance.size() != rows || count == 0) {
    throw ShapeError("nearest_centroid: buffer sizes do not match dimensions");
  }
  const auto n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * count >= kParallelThreshold)
  for (long r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    nearest_row(points.data() + row * dim, dim, centroids.data(), count, assignment[row],
                sq_distance[row]);
  }
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace medi::kernels
