// SPDX-License-Identifier: Apache-2.0
#include "confsearch/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "confsearch/ops.hpp"

namespace confsearch {

std::size_t ctcMinFrames(const std::vector<int>& labels) {
  std::size_t dupes = 0;
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++dupes;
  return labels.size() + dupes;
}

Tensor ctcLoss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("ctcLoss: logits must be [T x vocab]");
  const std::size_t T = logits.rows(), V = logits.cols();
  for (int tok : labels) {
    if (tok <= kBlank || tok >= static_cast<int>(V)) {
      throw std::invalid_argument("ctcLoss: label token " + std::to_string(tok) +
                                  " outside [1, " + std::to_string(V) + ")");
    }
  }
  const std::size_t need = ctcMinFrames(labels);
  if (T < need) {
    throw std::invalid_argument("ctcLoss: " + std::to_string(T) +
                                " frames cannot align a label needing " + std::to_string(need));
  }

  const Tensor logp = logSoftmax(logits, 1);
  const std::size_t L = labels.size(), M = 2 * L + 1;

  // blank-augmented label: blank, l1, blank, ..., lL, blank
  std::vector<std::size_t> ext(M, static_cast<std::size_t>(kBlank));
  for (std::size_t i = 0; i < L; ++i) ext[2 * i + 1] = static_cast<std::size_t>(labels[i]);

  // state s may take the skip transition from s-2 when it is a label state
  // and differs from the label two states back
  Tensor skipMask = Tensor::full({M}, kNegInf);
  for (std::size_t s = 2; s < M; ++s)
    if (ext[s] != static_cast<std::size_t>(kBlank) && ext[s] != ext[s - 2])
      skipMask.mut(s) = 0.0;

  Tensor initMask = Tensor::full({M}, kNegInf);
  initMask.mut(0) = 0.0;
  if (M > 1) initMask.mut(1) = 0.0;

  const Tensor gathered = gatherCols(logp, ext);  // [T x M]
  Tensor alpha = add(row(gathered, 0), initMask);
  for (std::size_t t = 1; t < T; ++t) {
    const Tensor stay = alpha;
    const Tensor step = shiftRight(alpha, 1, kNegInf);
    const Tensor skip = add(shiftRight(alpha, 2, kNegInf), skipMask);
    alpha = add(row(gathered, t), logaddexp(logaddexp(stay, step), skip));
  }
  Tensor total = L == 0 ? elem(alpha, 0) : logaddexp(elem(alpha, M - 1), elem(alpha, M - 2));
  return scale(total, -1.0);
}

std::vector<int> ctcGreedyDecode(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("greedy decode: logits must be 2-d");
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (std::size_t v = 1; v < logits.cols(); ++v)
      if (logits.at(t, v) > logits.at(t, best)) best = static_cast<int>(v);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t editDistance(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

TerResult tokenErrorRate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) {
    return hyp.empty() ? TerResult{0.0, true}
                       : TerResult{std::numeric_limits<double>::infinity(), false};
  }
  return {static_cast<double>(editDistance(hyp, ref)) / static_cast<double>(ref.size()), true};
}

Tensor labelSmoothingPenalty(const Tensor& logits, double weight) {
  const std::size_t T = logits.rows(), V = logits.cols();
  const Tensor lp = logSoftmax(logits, 1);
  const Tensor p = softmax(logits, 1);
  // KL(p || u) summed over frames = sum p*log p + T*log V
  Tensor s = sumAll(mul(p, lp));
  s = add(s, Tensor::scalar(static_cast<double>(T) * std::log(static_cast<double>(V))));
  return scale(s, weight / static_cast<double>(T));
}

}  // namespace confsearch
