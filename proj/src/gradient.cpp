#include "medi/gradient.hpp"

#include <algorithm>

namespace medi::nn {

OrderMode parse_order(const std::string& name) {
  if (name == "second") return OrderMode::second;
  if (name == "first") return OrderMode::first;
  throw ConfigError("unknown order mode '" + name + "' (expected second|first)");
}

std::string to_string(OrderMode mode) {
  return mode == OrderMode::second ? "second" : "first";
}

namespace detail {

void check_finite_gradient(double value, std::span<const double> grad, const Layout* layout,
                           const std::string& what) {
  if (!std::isfinite(value)) throw NumericError(what + ": non-finite loss");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::string where = "flat index " + std::to_string(i);
      if (layout && i < layout->total()) where = "segment '" + layout->owner(i).name + "', " + where;
      throw NumericError(what + ": non-finite gradient in " + where);
    }
  }
}

}  // namespace detail

double central_difference(const std::function<double(std::span<const double>)>& fn,
                          std::span<const double> params, std::size_t coord, double step) {
  std::vector<double> p(params.begin(), params.end());
  const double x = p.at(coord);
  p[coord] = x + step;
  const double up = fn(p);
  p[coord] = x - step;
  const double down = fn(p);
  return (up - down) / (2.0 * step);
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
}

std::vector<GradientProbe> probe_gradient(
    const std::function<double(std::span<const double>)>& fn, std::span<const double> params,
    std::span<const double> analytic, std::span<const std::size_t> coords, double step) {
  std::vector<GradientProbe> out;
  for (auto c : coords) {
    GradientProbe p;
    p.coord = c;
    p.analytic = analytic[c];
    p.numeric = central_difference(fn, params, c, step);
    p.relative_error = relative_error(p.analytic, p.numeric);
    out.push_back(p);
  }
  return out;
}

}  // namespace medi::nn
