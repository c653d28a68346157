#include "medi/nn.hpp"

#include <cmath>

namespace medi::nn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::identity:
      break;
  }
  return "identity";
}

Mlp::Mlp(const std::string& prefix, std::size_t input_dim, const std::vector<std::size_t>& widths,
         Activation hidden, Activation output, bool normalize_hidden, Layout& layout) {
  if (input_dim == 0 || widths.empty()) throw ConfigError("mlp needs an input and a layer");
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] == 0) throw ConfigError("mlp layer width must be positive");
    const bool last = l + 1 == widths.size();
    DenseLayer layer;
    layer.in = in;
    layer.out = widths[l];
    layer.act = last ? output : hidden;
    layer.normalize = !last && normalize_hidden;
    const std::string base = prefix + "." + std::to_string(l);
    layer.weight_offset = layout.append(base + ".weight", layer.in * layer.out);
    layer.bias_offset = layout.append(base + ".bias", layer.out);
    layers_.push_back(layer);
    in = widths[l];
  }
}

void Mlp::initialize(std::span<double> params, Rng& rng) const {
  for (const auto& L : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < L.in * L.out; ++i) params[L.weight_offset + i] = u(rng);
    for (std::size_t o = 0; o < L.out; ++o) params[L.bias_offset + o] = u(rng);
  }
}

std::vector<double> Mlp::forward_batch(std::span<const double> params,
                                       std::span<const double> rows_data, std::size_t rows,
                                       kernels::Execution exec) const {
  if (rows_data.size() != rows * input_dim()) throw ShapeError("mlp batch input size mismatch");
  std::vector<double> current(rows_data.begin(), rows_data.end());
  for (const auto& L : layers_) {
    std::vector<double> next(rows * L.out);
    kernels::dense_forward(current, rows, L.in, params.subspan(L.weight_offset, L.in * L.out),
                           params.subspan(L.bias_offset, L.out), L.out, next, exec);
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = next.data() + r * L.out;
      if (L.normalize) {
        double mean = 0.0;
        for (std::size_t o = 0; o < L.out; ++o) mean += row[o];
        mean /= static_cast<double>(L.out);
        double var = 0.0;
        for (std::size_t o = 0; o < L.out; ++o) {
          row[o] -= mean;
          var += row[o] * row[o];
        }
        var /= static_cast<double>(L.out);
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        for (std::size_t o = 0; o < L.out; ++o) row[o] *= inv;
      }
      for (std::size_t o = 0; o < L.out; ++o) row[o] = activate(L.act, row[o]);
    }
    current = std::move(next);
  }
  return current;
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("model: hidden dims must be positive");
  }
}

EmbeddingClassifier::EmbeddingClassifier(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  auto widths = config_.hidden_dims;
  widths.push_back(config_.embed_dim);
  body_ = Mlp("body", config_.input_dim, widths, config_.activation, Activation::identity,
              config_.use_normalization_layers, layout_);
  if (config_.head_width > 0) {
    head_ = Mlp("head", config_.embed_dim, {config_.head_width}, Activation::identity,
                Activation::identity, false, layout_);
  }
}

ParameterVector EmbeddingClassifier::initialize(std::uint64_t seed) const {
  ParameterVector p(layout_);
  Rng body_rng = make_rng(seed, "init.body");
  body_.initialize(p.values, body_rng);
  if (has_head()) {
    Rng head_rng = make_rng(seed, "init.head");
    head_.initialize(p.values, head_rng);
  }
  return p;
}

void EmbeddingClassifier::check_params(const ParameterVector& params) const {
  if (!(params.layout == layout_)) throw ShapeError("parameter layout does not match the model");
}

std::vector<double> EmbeddingClassifier::embed_batch(const ParameterVector& params,
                                                     std::span<const double> inputs,
                                                     std::size_t rows,
                                                     kernels::Execution exec) const {
  check_params(params);
  return body_.forward_batch(params.values, inputs, rows, exec);
}

std::pair<EmbeddingClassifier, ParameterVector> EmbeddingClassifier::with_fresh_head(
    const ParameterVector& params, std::size_t width, std::uint64_t seed) const {
  check_params(params);
  ModelConfig cfg = config_;
  cfg.head_width = width;
  EmbeddingClassifier model(cfg);
  ParameterVector fresh = model.initialize(seed);
  // Body segments come first in both layouts.
  const std::size_t body_size = body_.layers().back().bias_offset + body_.output_dim();
  std::copy(params.values.begin(), params.values.begin() + static_cast<long>(body_size),
            fresh.values.begin());
  return {std::move(model), std::move(fresh)};
}

std::vector<double> forward_embed(const EmbeddingClassifier& model, const ParameterVector& params,
                                  std::span<const double> x) {
  model.check_params(params);
  auto z = model.embed<double>(params.values, x);
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("forward_embed: non-finite embedding");
  }
  return z;
}

std::vector<double> head_output(const EmbeddingClassifier& model, const ParameterVector& params,
                                std::span<const double> z) {
  model.check_params(params);
  if (z.size() != model.config().embed_dim) {
    throw ShapeError("head_output: embedding has " + std::to_string(z.size()) +
                     " entries, expected " + std::to_string(model.config().embed_dim));
  }
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("head_output: non-finite embedding");
  }
  return model.probabilities<double>(params.values, z);
}

}  // namespace medi::nn
