// SPDX-License-Identifier: Apache-2.0
#include "confsearch/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace confsearch {

void Adam::step(std::vector<NamedTensor>& params, double lr) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor.size(), 0.0);
      v_[i].assign(params[i].tensor.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw std::logic_error("Adam: parameter list changed between steps");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (m_[i].size() != p.size()) throw std::logic_error("Adam: parameter shape changed");
    const bool hasGrad = p.hasGrad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = hasGrad ? p.data().grad[j] : 0.0;
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.mut(j) -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double globalGradNorm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const NamedTensor& nt : params) {
    if (!nt.tensor.hasGrad()) continue;
    for (double g : nt.tensor.data().grad) sq += g * g;
  }
  return std::sqrt(sq);
}

void clipGradNorm(std::vector<NamedTensor>& params, double maxNorm) {
  if (maxNorm <= 0.0) return;
  const double norm = globalGradNorm(params);
  if (norm <= maxNorm) return;
  const double s = maxNorm / norm;
  for (NamedTensor& nt : params) {
    if (!nt.tensor.hasGrad()) continue;
    for (double& g : nt.tensor.data().grad) g *= s;
  }
}

void zeroGrads(std::vector<NamedTensor>& params) {
  for (NamedTensor& nt : params) nt.tensor.zeroGrad();
}

void setRequiresGrad(std::vector<NamedTensor>& params, bool value) {
  for (NamedTensor& nt : params) nt.tensor.setRequiresGrad(value);
}

}  // namespace confsearch
