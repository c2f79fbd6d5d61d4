// SPDX-License-Identifier: Apache-2.0
//
// Synthetic token-sequence task. Each token owns a frozen [frames, F]
// template; an utterance concatenates the templates of its tokens and adds
// Gaussian noise.
//
// On disk:
//   manifest.json            task settings, seeds, shapes and split membership
//   templates.f32            [V, template_frames, F]
//   <split>.f32              features of every utterance, concatenated
//   <split>.txt              "<id> <tok> <tok> ..." per line
// Feature files are raw little-endian f32.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcf/tensor.hpp"

namespace mcf {

struct SyntheticTaskSpec {
  std::size_t vocab_size = 8;
  std::size_t template_frames = 12;
  std::size_t feature_dim = 80;
  double noise_std = 0.3;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 10;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Utterance {
  std::string id;
  std::size_t frames = 0;
  std::vector<float> features;  // [frames, feature_dim]
  std::vector<int> tokens;      // 1..V

  template <typename T>
  Tensor<T> feature_tensor(std::size_t feature_dim) const;
};

struct Split {
  std::string name;
  std::vector<Utterance> utterances;
};

struct SyntheticDataset {
  SyntheticTaskSpec spec;
  std::vector<float> templates;  // [V, template_frames, F]; token v at row v - 1
  Split train, dev, test;

  const Split& split(const std::string& name) const;  // "train", "dev" or "test"
};

// Seed streams: 0 templates, 1 train, 2 dev, 3 test.
SyntheticDataset generate_dataset(const SyntheticTaskSpec& spec);

// Refuses an existing non-empty directory unless `force`.
void write_dataset(const SyntheticDataset& data, const std::filesystem::path& dir, bool force);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace mcf
