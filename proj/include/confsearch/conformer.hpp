// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "confsearch/ops.hpp"
#include "confsearch/serialize.hpp"
#include "confsearch/tensor.hpp"

namespace confsearch {

enum class Slot { Mhsa = 0, Conv = 1, Ffn = 2 };
const char* slotName(Slot s);

// One candidate operation as named in the search space: module slot, exact
// name, and the hyperparameters the name encodes.
struct CandidateOpSpec {
  Slot slot = Slot::Mhsa;
  std::string name;
  int heads = 0;              // MHSA
  int kernel = 0;             // CONV (0 for identity)
  int dilation = 0;           // CONV
  int hidden = 0;             // FFN

  static const std::vector<std::string>& namesFor(Slot slot);
  // Throws ConfigError listing the valid names when `name` is unknown.
  static CandidateOpSpec parse(Slot slot, const std::string& name);

  bool isIdentity() const { return slot == Slot::Conv && kernel == 0; }
  int receptiveField() const { return kernel == 0 ? 1 : (kernel - 1) * dilation + 1; }
};

// Forward-pass context: training mode enables dropout (and batch statistics
// in batch norm); rng drives dropout masks.
struct FwdCtx {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
  bool relativeBias = true;
};

struct NormParams {
  Tensor gain, bias;
};

struct EmbedParams {
  Tensor w, b;  // feature projection F -> d
};

struct MhsaParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor rel;  // [headDim x heads], learned projection of the sinusoidal offsets
};

struct ConvParams {
  Tensor pw1W, pw1B;          // pointwise d -> 2d (feeds the GLU gate)
  Tensor dwKernel, dwBias;    // depthwise [k x d]
  Tensor bnGain, bnBias;
  Tensor bnMean, bnVar;       // running stats, used in eval mode only
  Tensor pw2W, pw2B;          // pointwise d -> d
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct CandidateOp {
  CandidateOpSpec spec;
  std::variant<std::monostate, MhsaParams, ConvParams, FfnParams> params;
};

// Deterministic keyed initialization: the stream for each tensor is derived
// from (seed, scope, tensor-name), so the same op re-created under the same
// scope gets bit-identical values regardless of creation order.
NormParams makeNormParams(std::size_t d);
Tensor makeWeight(std::uint64_t seed, const std::string& scope, const std::string& tensor,
                  std::vector<std::size_t> shape, std::size_t fanIn);
EmbedParams makeEmbedParams(std::uint64_t seed, const std::string& scope, std::size_t featDim,
                            std::size_t d);
CandidateOp makeCandidate(std::uint64_t seed, const std::string& scope,
                          const CandidateOpSpec& spec, std::size_t d);

// Pre-norm residual units. Each takes the slot's shared pre-layer-norm.
Tensor mhsaForward(const Tensor& x, const NormParams& preNorm, const MhsaParams& p, int heads,
                   const FwdCtx& ctx, std::vector<Tensor>* attnOut = nullptr);
Tensor convModuleForward(const Tensor& x, const NormParams& preNorm, ConvParams& p, int kernel,
                         int dilation, const FwdCtx& ctx);
Tensor ffnForward(const Tensor& x, const NormParams& preNorm, const FfnParams& p,
                  const FwdCtx& ctx);
// Identity candidates return x unchanged.
Tensor candidateForward(const Tensor& x, const NormParams& preNorm, CandidateOp& op,
                        const FwdCtx& ctx);

// Affine projection to d plus absolute sinusoidal position encoding.
Tensor embedInput(const Tensor& features, const EmbedParams& p, const FwdCtx& ctx);

// Constant [T x d] sin/cos table; pe[t, 2i] = sin(t / 10000^(2i/d)).
Tensor sinusoidTable(std::size_t T, std::size_t d);
// Offsets -(T-1)..(T-1) embedded the same way, row r = offset r-(T-1).
Tensor relativeSinusoidTable(std::size_t T, std::size_t d);

// Learnable tensors of one candidate, named under `prefix.` Identity yields
// an empty list. Running BN stats are excluded (see stateTensors).
std::vector<NamedTensor> candidateParams(CandidateOp& op, const std::string& prefix);
std::vector<NamedTensor> candidateState(CandidateOp& op, const std::string& prefix);
std::size_t numScalars(const std::vector<NamedTensor>& tensors);

}  // namespace confsearch
