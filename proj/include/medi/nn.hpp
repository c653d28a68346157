#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "medi/dual.hpp"
#include "medi/error.hpp"
#include "medi/kernels.hpp"
#include "medi/params.hpp"
#include "medi/rng.hpp"

namespace medi::nn {

enum class Activation { relu, tanh, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

template <class T>
T activate(Activation act, const T& x) {
  using std::tanh;
  switch (act) {
    case Activation::relu:
      return x > T(0.0) ? x : T(0.0);
    case Activation::tanh:
      return tanh(x);
    case Activation::identity:
      break;
  }
  return x;
}

/// Derivative of the activation, written in terms of its input and output.
template <class T>
T activate_deriv(Activation act, const T& in, const T& out) {
  switch (act) {
    case Activation::relu:
      return in > T(0.0) ? T(1.0) : T(0.0);
    case Activation::tanh:
      return T(1.0) - out * out;
    case Activation::identity:
      break;
  }
  return T(1.0);
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::identity;
  bool normalize = false;  // parameter-free per-sample standardization before act
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

inline constexpr double kNormEpsilon = 1e-5;

/// Stack of dense layers whose parameters live at fixed offsets of a shared
/// flat vector. Weights are row-major (out x in).
class Mlp {
 public:
  template <class T>
  struct Cache {
    std::vector<std::vector<T>> inputs;  // inputs[l] feeds layer l
    std::vector<std::vector<T>> pre;     // value entering the activation
    std::vector<T> inv_std;              // per layer, 1/sigma when normalized
    std::vector<T> output;
  };

  Mlp() = default;
  /// Registers "<prefix>.<l>.weight" and "<prefix>.<l>.bias" in `layout`.
  Mlp(const std::string& prefix, std::size_t input_dim, const std::vector<std::size_t>& widths,
      Activation hidden, Activation output, bool normalize_hidden, Layout& layout);

  [[nodiscard]] std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  [[nodiscard]] std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  [[nodiscard]] const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Uniform fan-in initialization U(-1/sqrt(in), 1/sqrt(in)).
  void initialize(std::span<double> params, Rng& rng) const;

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, Cache<T>& cache) const;

  template <class T>
  std::vector<T> apply(std::span<const T> params, std::span<const T> x) const {
    Cache<T> cache;
    forward(params, x, cache);
    return std::move(cache.output);
  }

  /// Accumulates d(loss)/d(params) into grad_params given d(loss)/d(output).
  /// Writes d(loss)/d(input) into grad_input when it is nonempty.
  template <class T>
  void backward(std::span<const T> params, const Cache<T>& cache, std::span<const T> grad_out,
                std::span<T> grad_params, std::span<T> grad_input = {}) const;

  /// Row-major batch forward on doubles through the dense kernels.
  [[nodiscard]] std::vector<double> forward_batch(std::span<const double> params,
                                                  std::span<const double> rows_data,
                                                  std::size_t rows,
                                                  kernels::Execution exec) const;

 private:
  std::vector<DenseLayer> layers_;
};

template <class T>
void Mlp::forward(std::span<const T> params, std::span<const T> x, Cache<T>& cache) const {
  using std::sqrt;
  if (x.size() != input_dim()) {
    throw ShapeError("mlp input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(input_dim()));
  }
  const std::size_t n = layers_.size();
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.inv_std.assign(n, T(1.0));
  cache.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < n; ++l) {
    const auto& L = layers_[l];
    const auto& in = cache.inputs[l];
    auto& pre = cache.pre[l];
    pre.assign(L.out, T(0.0));
    for (std::size_t o = 0; o < L.out; ++o) {
      T acc = params[L.bias_offset + o];
      const std::size_t row = L.weight_offset + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) acc += params[row + i] * in[i];
      pre[o] = acc;
    }
    if (L.normalize) {
      T mean(0.0);
      for (const auto& v : pre) mean += v;
      mean /= T(static_cast<double>(L.out));
      T var(0.0);
      for (auto& v : pre) {
        v -= mean;
        var += v * v;
      }
      var /= T(static_cast<double>(L.out));
      cache.inv_std[l] = T(1.0) / sqrt(var + T(kNormEpsilon));
      for (auto& v : pre) v *= cache.inv_std[l];
    }
    std::vector<T> out(L.out);
    for (std::size_t o = 0; o < L.out; ++o) out[o] = activate(L.act, pre[o]);
    if (l + 1 < n) {
      cache.inputs[l + 1] = std::move(out);
    } else {
      cache.output = std::move(out);
    }
  }
}

template <class T>
void Mlp::backward(std::span<const T> params, const Cache<T>& cache, std::span<const T> grad_out,
                   std::span<T> grad_params, std::span<T> grad_input) const {
  if (grad_out.size() != output_dim()) throw ShapeError("mlp backward: gradient size mismatch");
  std::vector<T> upstream(grad_out.begin(), grad_out.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    const auto& pre = cache.pre[l];
    const auto& out = l + 1 < layers_.size() ? cache.inputs[l + 1] : cache.output;
    std::vector<T> delta(L.out);
    for (std::size_t o = 0; o < L.out; ++o) {
      delta[o] = upstream[o] * activate_deriv(L.act, pre[o], out[o]);
    }
    if (L.normalize) {
      // pre holds the standardized values here.
      T mean_d(0.0), mean_dn(0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        mean_d += delta[o];
        mean_dn += delta[o] * pre[o];
      }
      mean_d /= T(static_cast<double>(L.out));
      mean_dn /= T(static_cast<double>(L.out));
      for (std::size_t o = 0; o < L.out; ++o) {
        delta[o] = (delta[o] - mean_d - pre[o] * mean_dn) * cache.inv_std[l];
      }
    }
    const auto& in = cache.inputs[l];
    for (std::size_t o = 0; o < L.out; ++o) {
      grad_params[L.bias_offset + o] += delta[o];
      const std::size_t row = L.weight_offset + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) grad_params[row + i] += delta[o] * in[i];
    }
    if (l == 0 && grad_input.empty()) break;
    std::vector<T> down(L.in, T(0.0));
    for (std::size_t o = 0; o < L.out; ++o) {
      const std::size_t row = L.weight_offset + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) down[i] += params[row + i] * delta[o];
    }
    if (l == 0) {
      std::copy(down.begin(), down.end(), grad_input.begin());
    } else {
      upstream = std::move(down);
    }
  }
}

/// Numerically stable softmax.
template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  using std::exp;
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[arg]) arg = i;
  }
  const T top = logits[arg];
  std::vector<T> p(logits.size());
  T total(0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = exp(logits[i] - top);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// d(loss)/d(logits) from d(loss)/d(probabilities).
template <class T>
std::vector<T> softmax_backward(std::span<const T> probs, std::span<const T> grad_probs) {
  T inner(0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) inner += probs[i] * grad_probs[i];
  std::vector<T> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - inner);
  return g;
}

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t embed_dim = 64;
  /// Output units of the softmax classifier head; 0 builds an embedding-only model.
  std::size_t head_width = 0;
  Activation activation = Activation::relu;
  bool use_normalization_layers = false;

  void validate() const;
};

/// Embedding network f (or Psi) followed by an optional linear softmax head g.
/// The embedding layer itself is linear.
class EmbeddingClassifier {
 public:
  explicit EmbeddingClassifier(ModelConfig config);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const Layout& layout() const { return layout_; }
  [[nodiscard]] const Mlp& body() const { return body_; }
  [[nodiscard]] const Mlp& head() const { return head_; }
  [[nodiscard]] bool has_head() const { return config_.head_width > 0; }
  [[nodiscard]] std::size_t num_params() const { return layout_.total(); }

  [[nodiscard]] ParameterVector initialize(std::uint64_t seed) const;

  template <class T>
  std::vector<T> embed(std::span<const T> params, std::span<const T> x) const {
    return body_.apply(params, x);
  }

  template <class T>
  std::vector<T> probabilities(std::span<const T> params, std::span<const T> z) const {
    if (!has_head()) throw ConfigError("model has no classifier head");
    const auto logits = head_.apply(params, z);
    return softmax(std::span<const T>(logits));
  }

  /// Row-major embeddings of `rows` inputs.
  [[nodiscard]] std::vector<double> embed_batch(const ParameterVector& params,
                                                std::span<const double> inputs, std::size_t rows,
                                                kernels::Execution exec) const;

  /// Same body, freshly initialized head of `width` units; body weights copied.
  [[nodiscard]] std::pair<EmbeddingClassifier, ParameterVector> with_fresh_head(
      const ParameterVector& params, std::size_t width, std::uint64_t seed) const;

  void check_params(const ParameterVector& params) const;

 private:
  ModelConfig config_;
  Layout layout_;
  Mlp body_;
  Mlp head_;
};

/// Embedding of one input; validates shapes and finiteness.
std::vector<double> forward_embed(const EmbeddingClassifier& model, const ParameterVector& params,
                                  std::span<const double> x);
/// Softmax head output for one embedding; a point on the probability simplex.
std::vector<double> head_output(const EmbeddingClassifier& model, const ParameterVector& params,
                                std::span<const double> z);

}  // namespace medi::nn
