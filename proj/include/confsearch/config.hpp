// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "confsearch/data.hpp"
#include "confsearch/trainer.hpp"

namespace confsearch {

// Experiment configuration, read from a flat "section.key = value" text
// file. Unknown keys are errors so hyperparameter typos fail loudly.
// serialize() round-trips losslessly through parse().
struct RunConfig {
  SearchSpaceConfig space;
  TrainHyper hyper;
  SyntheticTaskSpec task;
  std::size_t searchEpochs = 12;
  std::size_t retrainEpochs = 12;
  std::size_t trialEpochs = 6;
  std::size_t trials = 15;
  std::uint64_t seed = 1;
  std::string outDir = "runs/out";

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string serialize() const;
  std::string hash() const;  // stable hex digest of the canonical serialization
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace confsearch
