// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace confsearch {

struct NoamConfig {
  std::size_t dModel = 256;
  long long warmupSteps = 25000;
  double lrScale = 1.0;
  bool operator==(const NoamConfig&) const = default;
};

// lr_scale * d_model^-0.5 * min(S * warmup^-1.5, S^-0.5); S >= 1.
double noamLrate(long long S, const NoamConfig& cfg);

struct DssConfig {
  double beta = 2.0;
  long long warmupSteps = 25000;  // shared with the Noam schedule
  bool forceOne = false;          // pins the threshold at 1 (plain one-step alternation)
  bool operator==(const DssConfig&) const = default;
};

// Steps required between architecture updates:
//   +infinity for S <= warmup (inner max is 0),
//   (beta * (S - warmup) / warmup)^-0.5 afterwards,
//   1 always when forceOne.
double dssThreshold(long long S, const DssConfig& cfg);

// The gating state of the alternating search loop: S counts completed
// weight updates, S0 the step of the last architecture update. One
// iteration asks alphaDue(), possibly markAlphaUpdated(), then advance().
// forceOne bypasses the elapsed-steps comparison entirely so updates
// happen from the very first iteration.
class DssGate {
 public:
  explicit DssGate(const DssConfig& cfg) : cfg_(cfg) {}

  bool alphaDue() const {
    if (cfg_.forceOne) return true;
    return static_cast<double>(S_ - S0_) >= dssThreshold(S_, cfg_);
  }
  double threshold() const { return dssThreshold(S_, cfg_); }
  void markAlphaUpdated() { S0_ = S_; }
  void advance() { ++S_; }

  long long step() const { return S_; }
  long long lastAlphaStep() const { return S0_; }
  void restore(long long S, long long S0) {
    S_ = S;
    S0_ = S0;
  }
  const DssConfig& config() const { return cfg_; }

 private:
  DssConfig cfg_;
  long long S_ = 0;
  long long S0_ = 0;
};

// Runs the gate alone for totalSteps iterations and returns the 1-based
// weight-step indices at which the architecture updated.
std::vector<long long> simulateAlphaSchedule(long long totalSteps, const DssConfig& cfg);

}  // namespace confsearch
