#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medi/dual.hpp"
#include "medi/error.hpp"
#include "medi/params.hpp"

namespace medi::nn {

// An objective maps a flat parameter vector to a scalar and fills the
// gradient buffer (which arrives zeroed). Objectives that also instantiate on
// Dual support Hessian-vector products.
template <class O>
concept Objective = requires(const O& o, std::span<const double> p, std::span<double> g) {
  { o.evaluate(p, g) } -> std::convertible_to<double>;
};

template <class O>
concept TwiceDifferentiable =
    Objective<O> && requires(const O& o, std::span<const Dual> p, std::span<Dual> g) {
      { o.evaluate(p, g) } -> std::convertible_to<Dual>;
    };

enum class OrderMode { second, first };

OrderMode parse_order(const std::string& name);
std::string to_string(OrderMode mode);

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

namespace detail {

void check_finite_gradient(double value, std::span<const double> grad, const Layout* layout,
                           const std::string& what);

}  // namespace detail

template <Objective O>
double objective_value(const O& obj, std::span<const double> params) {
  std::vector<double> scratch(params.size(), 0.0);
  return obj.evaluate(params, std::span<double>(scratch));
}

template <Objective O>
ValueAndGradient value_and_gradient(const O& obj, std::span<const double> params,
                                    const Layout* layout = nullptr,
                                    const std::string& what = "gradient") {
  ValueAndGradient out;
  out.gradient.assign(params.size(), 0.0);
  out.value = obj.evaluate(params, std::span<double>(out.gradient));
  detail::check_finite_gradient(out.value, out.gradient, layout, what);
  return out;
}

/// Gradient of `obj` at `params`, shaped like `params`.
template <Objective O>
ParameterVector gradient(const O& obj, const ParameterVector& params) {
  auto vg = value_and_gradient(obj, params.values, &params.layout);
  return ParameterVector(params.layout, std::move(vg.gradient));
}

/// H(params) * direction by forward-over-reverse differentiation.
template <TwiceDifferentiable O>
std::vector<double> hessian_vector_product(const O& obj, std::span<const double> params,
                                           std::span<const double> direction) {
  if (direction.size() != params.size()) throw ShapeError("hvp: direction size mismatch");
  std::vector<Dual> p(params.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = Dual(params[i], direction[i]);
  std::vector<Dual> g(params.size(), Dual(0.0));
  obj.evaluate(std::span<const Dual>(p), std::span<Dual>(g));
  std::vector<double> hv(params.size());
  for (std::size_t i = 0; i < hv.size(); ++i) {
    hv[i] = g[i].d;
    if (!std::isfinite(hv[i])) throw NumericError("hvp: non-finite entry at index " + std::to_string(i));
  }
  return hv;
}

/// Central difference of a scalar function along one coordinate.
double central_difference(const std::function<double(std::span<const double>)>& fn,
                          std::span<const double> params, std::size_t coord, double step = 1e-5);

struct GradientProbe {
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

/// |a - n| / max(|a|, |n|); exactly 0 when both vanish.
double relative_error(double analytic, double numeric);

std::vector<GradientProbe> probe_gradient(
    const std::function<double(std::span<const double>)>& fn, std::span<const double> params,
    std::span<const double> analytic, std::span<const std::size_t> coords, double step = 1e-5);

struct AdaptationResult {
  std::vector<double> adapted;       // theta' after the inner steps
  std::vector<double> meta_gradient;  // d outer(theta') / d theta
  double outer_loss = 0.0;
  std::vector<double> inner_losses;  // inner loss before each step
  OrderMode order = OrderMode::second;
};

/// theta_{t+1} = theta_t - alpha * grad inner(theta_t), `steps` times.
template <Objective Inner>
std::vector<double> adapt(const Inner& inner, std::span<const double> params, double alpha,
                          std::size_t steps, std::vector<double>* losses = nullptr) {
  std::vector<double> theta(params.begin(), params.end());
  for (std::size_t t = 0; t < steps; ++t) {
    auto vg = value_and_gradient(inner, theta, nullptr, "inner step " + std::to_string(t));
    if (losses) losses->push_back(vg.value);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= alpha * vg.gradient[i];
  }
  return theta;
}

/// Gradient of outer(adapt(theta)) with respect to theta. In second-order
/// mode the chain rule runs back through every inner step:
///   g_T = grad outer(theta_T),  g_t = g_{t+1} - alpha * H_inner(theta_t) g_{t+1}.
/// First-order mode returns g_T unchanged.
template <TwiceDifferentiable Inner, Objective Outer>
AdaptationResult gradient_through_adaptation(const Inner& inner, const Outer& outer,
                                             std::span<const double> params, double alpha,
                                             std::size_t steps, OrderMode order) {
  if (!(alpha >= 0.0)) throw ConfigError("adaptation rate must be nonnegative");
  AdaptationResult res;
  res.order = order;
  std::vector<std::vector<double>> trajectory;
  trajectory.emplace_back(params.begin(), params.end());
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& cur = trajectory.back();
    auto vg = value_and_gradient(inner, cur, nullptr, "inner step " + std::to_string(t));
    res.inner_losses.push_back(vg.value);
    std::vector<double> next(cur);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= alpha * vg.gradient[i];
    trajectory.push_back(std::move(next));
  }
  auto outer_vg = value_and_gradient(outer, trajectory.back(), nullptr, "outer loss");
  res.outer_loss = outer_vg.value;
  res.meta_gradient = std::move(outer_vg.gradient);
  if (order == OrderMode::second && alpha > 0.0) {
    for (std::size_t t = steps; t-- > 0;) {
      const auto hv = hessian_vector_product(inner, trajectory[t], res.meta_gradient);
      for (std::size_t i = 0; i < hv.size(); ++i) res.meta_gradient[i] -= alpha * hv[i];
    }
  }
  res.adapted = std::move(trajectory.back());
  return res;
}

}  // namespace medi::nn
