// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "confsearch/rng.hpp"
#include "confsearch/tensor.hpp"

namespace confsearch {

// Synthetic sequence task: each label token is a deterministic function of a
// `window`-frame slice of the feature stream, so architectures whose
// receptive field covers the window have a measurable advantage. Tap energy
// is concentrated on the window edges, which only a kernel spanning the full
// window can reach.
struct SyntheticTaskSpec {
  std::size_t featureDim = 8;
  std::size_t vocab = 6;  // includes blank 0
  std::size_t minFrames = 40;
  std::size_t maxFrames = 64;
  std::size_t window = 15;  // planted context width W, odd
  std::size_t stride = 8;   // spacing between label events
  double noise = 0.1;       // feature noise level
  double margin = 0.1;      // events closer than this to a bucket edge emit no label
  std::size_t trainUtts = 96;
  std::size_t validUtts = 24;
  std::size_t testUtts = 24;
  std::uint64_t seed = 1;
  bool specAugmentOn = false;
  std::size_t timeMasks = 1, freqMasks = 1;
  std::size_t maxTimeWidth = 8, maxFreqWidth = 2;

  void validate() const;  // throws ConfigError
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct Utterance {
  Tensor features;          // [T x F]
  std::vector<int> labels;  // tokens in [1, vocab)
  // generator ground truth (frame, token); diagnostic only, not persisted
  std::vector<std::pair<std::size_t, int>> alignment;
};

struct Dataset {
  SyntheticTaskSpec spec;
  std::vector<Utterance> train, valid, test;
  const std::vector<Utterance>& split(const std::string& name) const;
};

// Deterministic in spec.seed; the planted function is shared across splits
// while each split draws utterances from its own stream.
Dataset generateDataset(const SyntheticTaskSpec& spec);

// Zeroes `timeMasks` row ranges and `freqMasks` column bands; widths are
// uniform on {0..maxWidth} and starts uniform on the axis (truncated at the
// end). Sampled ranges are reported through the optional out-params.
Tensor specAugment(const Tensor& features, std::size_t timeMasks, std::size_t freqMasks,
                   std::size_t maxTimeWidth, std::size_t maxFreqWidth, Rng& rng,
                   std::vector<std::pair<std::size_t, std::size_t>>* timeRanges = nullptr,
                   std::vector<std::pair<std::size_t, std::size_t>>* freqRanges = nullptr);

// Split files: <split>.utts ("<id> <T> <labels...>"), plus <split>.tensors /
// <split>.index blobs holding "<id>.features". spec.cfg rides along so a
// directory round-trips to a full Dataset (alignments are not persisted).
void saveDataset(const std::string& dir, const Dataset& data);
Dataset loadDataset(const std::string& dir);

std::string serializeTaskSpec(const SyntheticTaskSpec& spec);
SyntheticTaskSpec parseTaskKey(SyntheticTaskSpec spec, const std::string& key,
                               const std::string& value);  // throws ConfigError on unknown key

}  // namespace confsearch
