// SPDX-License-Identifier: Apache-2.0
#include "confsearch/schedule.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace confsearch {

double noamLrate(long long S, const NoamConfig& cfg) {
  if (S < 1) throw std::invalid_argument("noamLrate: step must be >= 1");
  if (cfg.warmupSteps < 1 || cfg.lrScale <= 0.0) {
    throw std::invalid_argument("noamLrate: warmup_steps >= 1 and lr_scale > 0 required");
  }
  const double s = static_cast<double>(S);
  const double w = static_cast<double>(cfg.warmupSteps);
  return cfg.lrScale * std::pow(static_cast<double>(cfg.dModel), -0.5) *
         std::min(s * std::pow(w, -1.5), std::pow(s, -0.5));
}

double dssThreshold(long long S, const DssConfig& cfg) {
  if (S < 0) throw std::invalid_argument("dssThreshold: step must be >= 0");
  if (cfg.beta <= 0.0) throw std::invalid_argument("dssThreshold: beta must be positive");
  if (cfg.forceOne) return 1.0;
  if (S <= cfg.warmupSteps) return std::numeric_limits<double>::infinity();
  const double w = static_cast<double>(cfg.warmupSteps);
  return std::pow(cfg.beta * (static_cast<double>(S) - w) / w, -0.5);
}

std::vector<long long> simulateAlphaSchedule(long long totalSteps, const DssConfig& cfg) {
  std::vector<long long> updated;
  DssGate gate(cfg);
  for (long long i = 0; i < totalSteps; ++i) {
    if (gate.alphaDue()) {
      gate.markAlphaUpdated();
      updated.push_back(gate.step() + 1);  // labeled by the weight step performed after it
    }
    gate.advance();
  }
  return updated;
}

}  // namespace confsearch
