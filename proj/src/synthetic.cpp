#include "medi/synthetic.hpp"

#include <cmath>
#include <string>

#include "medi/error.hpp"

namespace medi::data {

void SyntheticMultiRuleSpec::validate() const {
  if (num_rules < 2) throw ConfigError("multi-rule spec: num_rules must be >= 2");
  if (classes_per_rule < 1) throw ConfigError("multi-rule spec: classes_per_rule must be >= 1");
  if (samples_per_class < 1) throw ConfigError("multi-rule spec: samples_per_class must be >= 1");
  if (feature_dim < num_rules || feature_dim % num_rules != 0) {
    throw ConfigError("multi-rule spec: feature_dim must be a positive multiple of num_rules");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ConfigError("multi-rule spec: noise_scale must be finite and nonnegative");
  }
}

Dataset generate_synthetic_multiview(const SyntheticMultiRuleSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t block = spec.block_dim();
  Rng proto_rng = make_rng(seed, "synthetic.prototypes");
  Rng noise_rng = make_rng(seed, "synthetic.noise");
  Rng distractor_rng = make_rng(seed, "synthetic.distractors");
  std::uniform_int_distribution<std::size_t> any_class(0, spec.classes_per_rule - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Prototypes are redrawn until distinct within their rule; with continuous
  // draws a collision is measure-zero, the loop only guards block_dim == 1 ties.
  std::vector<std::vector<std::vector<double>>> protos(spec.num_rules);
  for (std::size_t r = 0; r < spec.num_rules; ++r) {
    for (std::size_t c = 0; c < spec.classes_per_rule; ++c) {
      std::vector<double> p(block);
      bool distinct = false;
      while (!distinct) {
        for (auto& v : p) v = gauss(proto_rng);
        distinct = true;
        for (const auto& q : protos[r]) distinct = distinct && q != p;
      }
      protos[r].push_back(std::move(p));
    }
  }

  std::vector<LabeledExample> examples;
  examples.reserve(spec.num_rules * spec.classes_per_rule * spec.samples_per_class);
  ExampleId next_id = 0;
  for (std::size_t r = 0; r < spec.num_rules; ++r) {
    for (std::size_t c = 0; c < spec.classes_per_rule; ++c) {
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        LabeledExample ex;
        ex.id = next_id++;
        ex.label = static_cast<int>(r * spec.classes_per_rule + c);
        ex.rule = static_cast<int>(r);
        ex.features.assign(spec.feature_dim, 0.0);
        for (std::size_t d = 0; d < block; ++d) ex.features[r * block + d] = protos[r][c][d];
        if (spec.distractors) {
          for (std::size_t o = 0; o < spec.num_rules; ++o) {
            if (o == r) continue;
            const auto& p = protos[o][any_class(distractor_rng)];
            for (std::size_t d = 0; d < block; ++d) ex.features[o * block + d] = p[d];
          }
        }
        if (spec.noise_scale > 0.0) {
          for (auto& v : ex.features) v += spec.noise_scale * gauss(noise_rng);
        }
        examples.push_back(std::move(ex));
      }
    }
  }
  return Dataset(std::move(examples));
}

void AlphabetSpec::validate() const {
  if (num_alphabets < 1 || characters_per_alphabet < 1 || samples_per_character < 1) {
    throw ConfigError("alphabet spec: counts must be positive");
  }
  if (feature_dim < 1 || latent_dim < 1) throw ConfigError("alphabet spec: dims must be positive");
  for (double v : {style_spread, character_spread, nuisance_scale, jitter}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("alphabet spec: spreads must be finite and nonnegative");
    }
  }
}

Dataset generate_alphabets(const AlphabetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng map_rng = make_rng(seed, "alphabet.maps");
  Rng char_rng = make_rng(seed, "alphabet.characters");
  Rng sample_rng = make_rng(seed, "alphabet.samples");
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto random_map = [&](std::size_t cols) {
    std::vector<double> m(spec.feature_dim * cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : m) v = scale * gauss(map_rng);
    return m;
  };
  const auto latent_map = random_map(spec.latent_dim);
  const auto nuisance_map = spec.nuisance_dim ? random_map(spec.nuisance_dim) : std::vector<double>{};

  std::vector<LabeledExample> examples;
  ExampleId next_id = 0;
  std::vector<double> latent(spec.latent_dim), nuisance(spec.nuisance_dim);
  for (std::size_t a = 0; a < spec.num_alphabets; ++a) {
    std::vector<double> style(spec.latent_dim);
    for (auto& v : style) v = spec.style_spread * gauss(char_rng);
    for (std::size_t c = 0; c < spec.characters_per_alphabet; ++c) {
      std::vector<double> character(spec.latent_dim);
      for (std::size_t d = 0; d < spec.latent_dim; ++d) {
        character[d] = style[d] + spec.character_spread * gauss(char_rng);
      }
      for (std::size_t s = 0; s < spec.samples_per_character; ++s) {
        for (std::size_t d = 0; d < spec.latent_dim; ++d) {
          latent[d] = character[d] + spec.jitter * gauss(sample_rng);
        }
        for (auto& v : nuisance) v = spec.nuisance_scale * gauss(sample_rng);
        LabeledExample ex;
        ex.id = next_id++;
        ex.label = static_cast<int>(a * spec.characters_per_alphabet + c);
        ex.rule = static_cast<int>(a);
        ex.features.resize(spec.feature_dim);
        for (std::size_t f = 0; f < spec.feature_dim; ++f) {
          double acc = 0.0;
          for (std::size_t d = 0; d < spec.latent_dim; ++d) {
            acc += latent_map[f * spec.latent_dim + d] * latent[d];
          }
          for (std::size_t d = 0; d < spec.nuisance_dim; ++d) {
            acc += nuisance_map[f * spec.nuisance_dim + d] * nuisance[d];
          }
          ex.features[f] = std::tanh(acc);
        }
        examples.push_back(std::move(ex));
      }
    }
  }
  return Dataset(std::move(examples));
}

}  // namespace medi::data
