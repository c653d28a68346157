#pragma once

#include <cstddef>
#include <span>

namespace medi::kernels {

enum class Execution { serial, parallel };

// Row-major dense kernels. The serial versions are the reference; the
// parallel versions give each output element to exactly one thread and keep
// the serial summation order, so results are bitwise identical.

namespace serial {
/// out[r, o] = sum_i in[r, i] * weight[o, i] + bias[o]
void dense_forward(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                   std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_dim, std::span<double> out);
/// out[i, j] = <p_i, p_j>
void gram(std::span<const double> points, std::size_t rows, std::size_t dim,
          std::span<double> out);
/// Index of the nearest centroid by squared distance, ties to the lowest index.
void nearest_centroid(std::span<const double> points, std::size_t rows, std::size_t dim,
                      std::span<const double> centroids, std::size_t count,
                      std::span<std::size_t> assignment, std::span<double> sq_distance);
}  // namespace serial

namespace parallel {
void dense_forward(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                   std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_dim, std::span<double> out);
void gram(std::span<const double> points, std::size_t rows, std::size_t dim,
          std::span<double> out);
void nearest_centroid(std::span<const double> points, std::size_t rows, std::size_t dim,
                      std::span<const double> centroids, std::size_t count,
                      std::span<std::size_t> assignment, std::span<double> sq_distance);
}  // namespace parallel

inline void dense_forward(std::span<const double> in, std::size_t rows, std::size_t in_dim,
                          std::span<const double> weight, std::span<const double> bias,
                          std::size_t out_dim, std::span<double> out, Execution exec) {
  exec == Execution::parallel
      ? parallel::dense_forward(in, rows, in_dim, weight, bias, out_dim, out)
      : serial::dense_forward(in, rows, in_dim, weight, bias, out_dim, out);
}

inline void gram(std::span<const double> points, std::size_t rows, std::size_t dim,
                 std::span<double> out, Execution exec) {
  exec == Execution::parallel ? parallel::gram(points, rows, dim, out)
                              : serial::gram(points, rows, dim, out);
}

inline void nearest_centroid(std::span<const double> points, std::size_t rows, std::size_t dim,
                             std::span<const double> centroids, std::size_t count,
                             std::span<std::size_t> assignment, std::span<double> sq_distance,
                             Execution exec) {
  exec == Execution::parallel
      ? parallel::nearest_centroid(points, rows, dim, centroids, count, assignment, sq_distance)
      : serial::nearest_centroid(points, rows, dim, centroids, count, assignment, sq_distance);
}

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace medi::kernels
