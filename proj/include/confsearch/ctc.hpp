// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "confsearch/tensor.hpp"

namespace confsearch {

// Blank id is fixed at 0; label tokens live in [1, vocab).
inline constexpr int kBlank = 0;

// Frames needed for a CTC alignment to exist: |labels| plus one blank per
// adjacent duplicate pair.
std::size_t ctcMinFrames(const std::vector<int>& labels);

// Negative log of the total probability of all alignments of `labels` in
// `logits` [T x vocab], via the forward dynamic program over the
// blank-augmented label (length 2L+1) in log space. Differentiable through
// log_softmax. Throws std::invalid_argument when T < ctcMinFrames(labels)
// or a label id is out of range; the empty label is allowed (all-blank path).
Tensor ctcLoss(const Tensor& logits, const std::vector<int>& labels);

// Per-frame argmax, collapse repeats, drop blanks.
std::vector<int> ctcGreedyDecode(const Tensor& logits);

std::size_t editDistance(const std::vector<int>& a, const std::vector<int>& b);

struct TerResult {
  double value = 0.0;
  bool finite = true;
};

// Levenshtein(hyp, ref) / |ref|. Empty ref: 0 when hyp is empty too,
// otherwise flagged infinite.
TerResult tokenErrorRate(const std::vector<int>& hyp, const std::vector<int>& ref);

// weight * mean over frames of KL(softmax(logits_t) || uniform). An
// auxiliary regularizer; weight 0 disables it at the call site.
Tensor labelSmoothingPenalty(const Tensor& logits, double weight);

}  // namespace confsearch
