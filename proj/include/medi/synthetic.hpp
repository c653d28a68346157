#pragma once

#include <cstddef>
#include <cstdint>

#include "medi/data.hpp"

namespace medi::data {

/// Data where every example follows one of several latent clustering rules.
/// Features are a concatenation of per-rule blocks. The dominant rule's block
/// holds the class prototype at unit scale; every coordinate gets Gaussian
/// noise at `noise_scale`. Class ids are rule * classes_per_rule + class.
/// With `distractors`, every other block carries the prototype of a random
/// class of its own rule, so each example reads as some class under every
/// rule and only the dominant rule is consistent within a class.
struct SyntheticMultiRuleSpec {
  std::size_t num_rules = 3;
  std::size_t classes_per_rule = 5;
  std::size_t feature_dim = 12;
  double noise_scale = 0.0;
  std::size_t samples_per_class = 20;
  bool distractors = false;

  void validate() const;
  [[nodiscard]] std::size_t block_dim() const { return feature_dim / num_rules; }
};

Dataset generate_synthetic_multiview(const SyntheticMultiRuleSpec& spec, std::uint64_t seed);

/// Alphabet-structured data standing in for handwritten-character corpora.
/// Characters are points in a latent stroke space shared by every alphabet,
/// drawn around a per-alphabet style centre. Each sample mixes the character
/// latent and a per-sample nuisance latent (slant, thickness, ...) through
/// fixed random maps followed by tanh. The nuisance subspace is shared, so an
/// embedding learned on some alphabets transfers to others, while raw-space
/// clustering is dominated by nuisance spread. `rule` holds the alphabet.
struct AlphabetSpec {
  std::size_t num_alphabets = 13;
  std::size_t characters_per_alphabet = 10;
  std::size_t samples_per_character = 20;
  std::size_t feature_dim = 32;
  std::size_t latent_dim = 8;
  std::size_t nuisance_dim = 4;
  double style_spread = 1.0;
  double character_spread = 1.0;
  double nuisance_scale = 2.0;
  double jitter = 0.05;

  void validate() const;
};

Dataset generate_alphabets(const AlphabetSpec& spec, std::uint64_t seed);

}  // namespace medi::data
