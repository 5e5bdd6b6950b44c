// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "confsearch/serialize.hpp"
#include "confsearch/tensor.hpp"

namespace confsearch {

// Adam with bias correction. Moments bind to the parameter list by position
// on the first step; the list must stay stable across steps.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // alpha optimizer defaults: lr 0.0003 applied by the caller
  static Adam forAlpha() { return Adam(0.9, 0.999, 1e-8); }
  // omega under the Noam schedule (transformer-toolkit constants)
  static Adam forOmega() { return Adam(0.9, 0.98, 1e-9); }

  void step(std::vector<NamedTensor>& params, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double globalGradNorm(const std::vector<NamedTensor>& params);
// Scales all gradients down when their global norm exceeds maxNorm.
void clipGradNorm(std::vector<NamedTensor>& params, double maxNorm);
void zeroGrads(std::vector<NamedTensor>& params);
void setRequiresGrad(std::vector<NamedTensor>& params, bool value);

}  // namespace confsearch
