// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "confsearch/rng.hpp"
#include "confsearch/tensor.hpp"

namespace confsearch {

// Elementwise / broadcast arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
// a + c*b, same shapes.
Tensor axpy(const Tensor& a, const Tensor& b, double c);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// x * s where s is a scalar tensor; gradient flows into both.
Tensor scaleByScalar(const Tensor& x, const Tensor& s);
// x: [T×d], v: [d]; adds v to every row (bias broadcast).
Tensor addRowVector(const Tensor& x, const Tensor& v);

// Reductions.
Tensor sumAll(const Tensor& x);
Tensor mean(const Tensor& x);

// Linear algebra. a: [m×k], b: [k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
// matmul(x, w) + bias broadcast; the affine layer.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Shape surgery on 2-d tensors.
Tensor sliceCols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concatCols(const std::vector<Tensor>& parts);
Tensor row(const Tensor& x, std::size_t r);  // -> 1-d [cols]
// out[t,m] = x[t, idx[m]]; idx are constant indices.
Tensor gatherCols(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor elem(const Tensor& x, std::size_t i);  // 1-d -> scalar

// 1-d shift for log-space dynamic programs: out[i] = x[i-k], pad for i<k.
Tensor shiftRight(const Tensor& x, std::size_t k, double pad);

// Elementwise log(exp(a)+exp(b)), stable, -inf propagates as "no mass".
Tensor logaddexp(const Tensor& a, const Tensor& b);

// Activations.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
// x: [T×2d] -> [T×d], first half gated by sigmoid of second half.
Tensor glu(const Tensor& x);

// axis 0 = down columns, axis 1 = along rows; 1-d tensors use axis 0.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor logSoftmax(const Tensor& x, std::size_t axis);

// Per-row normalization of [T×d] to zero mean / unit (population) variance,
// then affine. eps = 1e-12 inside the square root.
Tensor layerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Per-column (over the batch-and-time rows) normalization with batch
// statistics; updates running stats in place when train=true.
Tensor batchNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 Tensor& runningMean, Tensor& runningVar, bool train,
                 double momentum = 0.1);

// out = x .* mask * factor; mask is a constant (no gradient into it).
Tensor maskScale(const Tensor& x, const Tensor& mask, double factor);
// Inverted dropout: train mode samples a keep mask and scales by 1/(1-p);
// eval mode is the identity. The sampled mask is stored in *maskOut when
// given (persisted for inspection and reuse in the backward pass).
Tensor dropout(const Tensor& x, double p, bool train, Rng* rng, Tensor* maskOut = nullptr);

// x: [T×d], kernel: [k×d] (k odd), same-length zero padding, per-channel
// taps at offsets (a - (k-1)/2) * dilation.
Tensor depthwiseConv1d(const Tensor& x, const Tensor& kernel, int dilation);

// scores: [T×T], rel: any tensor of size 2T-1; out[i,j] = scores[i,j] + rel[i-j+T-1].
Tensor addRelativeBias(const Tensor& scores, const Tensor& rel);

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace confsearch
