// SPDX-License-Identifier: Apache-2.0
#include "confsearch/conformer.hpp"

#include <cmath>
#include <stdexcept>

#include "confsearch/errors.hpp"
#include "confsearch/rng.hpp"

namespace confsearch {

const char* slotName(Slot s) {
  switch (s) {
    case Slot::Mhsa: return "mhsa";
    case Slot::Conv: return "conv";
    case Slot::Ffn: return "ffn";
  }
  return "?";
}

const std::vector<std::string>& CandidateOpSpec::namesFor(Slot slot) {
  static const std::vector<std::string> mhsa = {"mhsa_head4", "mhsa_head8", "mhsa_head16"};
  static const std::vector<std::string> conv = {"identity", "conv_7",      "conv_11",
                                                "conv_15",  "dil_conv_7",  "dil_conv_11",
                                                "dil_conv_15"};
  static const std::vector<std::string> ffn = {"ffn_1024", "ffn_512", "ffn_256"};
  switch (slot) {
    case Slot::Mhsa: return mhsa;
    case Slot::Conv: return conv;
    case Slot::Ffn: return ffn;
  }
  return mhsa;
}

CandidateOpSpec CandidateOpSpec::parse(Slot slot, const std::string& name) {
  CandidateOpSpec spec;
  spec.slot = slot;
  spec.name = name;
  const auto bad = [&]() {
    std::string valid;
    for (const std::string& n : namesFor(slot)) valid += " " + n;
    throw ConfigError("unknown " + std::string(slotName(slot)) + " operation '" + name +
                      "'; valid names:" + valid);
  };
  switch (slot) {
    case Slot::Mhsa:
      if (name == "mhsa_head4") spec.heads = 4;
      else if (name == "mhsa_head8") spec.heads = 8;
      else if (name == "mhsa_head16") spec.heads = 16;
      else bad();
      break;
    case Slot::Conv:
      if (name == "identity") {
        spec.kernel = 0;
        spec.dilation = 0;
      } else if (name == "conv_7") { spec.kernel = 7; spec.dilation = 1; }
      else if (name == "conv_11") { spec.kernel = 11; spec.dilation = 1; }
      else if (name == "conv_15") { spec.kernel = 15; spec.dilation = 1; }
      else if (name == "dil_conv_7") { spec.kernel = 7; spec.dilation = 2; }
      else if (name == "dil_conv_11") { spec.kernel = 11; spec.dilation = 2; }
      else if (name == "dil_conv_15") { spec.kernel = 15; spec.dilation = 2; }
      else bad();
      break;
    case Slot::Ffn:
      if (name == "ffn_1024") spec.hidden = 1024;
      else if (name == "ffn_512") spec.hidden = 512;
      else if (name == "ffn_256") spec.hidden = 256;
      else bad();
      break;
  }
  return spec;
}

namespace {

Tensor uniformFanIn(std::uint64_t seed, const std::string& scope, const std::string& tensor,
                    std::vector<std::size_t> shape, std::size_t fanIn) {
  Rng rng(deriveSeed(seed, scope + "." + tensor));
  Tensor t = Tensor::zeros(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fanIn));
  for (std::size_t i = 0; i < t.size(); ++i) t.mut(i) = rng.uniform(-s, s);
  return t;
}

}  // namespace

NormParams makeNormParams(std::size_t d) {
  return {Tensor::full({d}, 1.0), Tensor::zeros({d})};
}

Tensor makeWeight(std::uint64_t seed, const std::string& scope, const std::string& tensor,
                  std::vector<std::size_t> shape, std::size_t fanIn) {
  return uniformFanIn(seed, scope, tensor, std::move(shape), fanIn);
}

EmbedParams makeEmbedParams(std::uint64_t seed, const std::string& scope, std::size_t featDim,
                            std::size_t d) {
  EmbedParams p;
  p.w = uniformFanIn(seed, scope, "w", {featDim, d}, featDim);
  p.b = Tensor::zeros({d});
  return p;
}

CandidateOp makeCandidate(std::uint64_t seed, const std::string& scope,
                          const CandidateOpSpec& spec, std::size_t d) {
  CandidateOp op;
  op.spec = spec;
  const std::string key = scope + "." + spec.name;
  switch (spec.slot) {
    case Slot::Mhsa: {
      if (spec.heads <= 0 || d % static_cast<std::size_t>(spec.heads) != 0) {
        throw std::invalid_argument("mhsa: heads " + std::to_string(spec.heads) +
                                    " do not divide model dimension " + std::to_string(d));
      }
      MhsaParams p;
      p.wq = uniformFanIn(seed, key, "wq", {d, d}, d);
      p.bq = Tensor::zeros({d});
      p.wk = uniformFanIn(seed, key, "wk", {d, d}, d);
      p.bk = Tensor::zeros({d});
      p.wv = uniformFanIn(seed, key, "wv", {d, d}, d);
      p.bv = Tensor::zeros({d});
      p.wo = uniformFanIn(seed, key, "wo", {d, d}, d);
      p.bo = Tensor::zeros({d});
      const std::size_t dh = d / static_cast<std::size_t>(spec.heads);
      p.rel = uniformFanIn(seed, key, "rel", {dh, static_cast<std::size_t>(spec.heads)}, dh);
      op.params = std::move(p);
      break;
    }
    case Slot::Conv: {
      if (spec.isIdentity()) break;  // parameterless
      ConvParams p;
      p.pw1W = uniformFanIn(seed, key, "pw1_w", {d, 2 * d}, d);
      p.pw1B = Tensor::zeros({2 * d});
      p.dwKernel = uniformFanIn(seed, key, "dw_kernel",
                                {static_cast<std::size_t>(spec.kernel), d},
                                static_cast<std::size_t>(spec.kernel));
      p.dwBias = Tensor::zeros({d});
      p.bnGain = Tensor::full({d}, 1.0);
      p.bnBias = Tensor::zeros({d});
      p.bnMean = Tensor::zeros({d});
      p.bnVar = Tensor::full({d}, 1.0);
      p.pw2W = uniformFanIn(seed, key, "pw2_w", {d, d}, d);
      p.pw2B = Tensor::zeros({d});
      op.params = std::move(p);
      break;
    }
    case Slot::Ffn: {
      FfnParams p;
      const std::size_t h = static_cast<std::size_t>(spec.hidden);
      p.w1 = uniformFanIn(seed, key, "w1", {d, h}, d);
      p.b1 = Tensor::zeros({h});
      p.w2 = uniformFanIn(seed, key, "w2", {h, d}, h);
      p.b2 = Tensor::zeros({d});
      op.params = std::move(p);
      break;
    }
  }
  return op;
}

Tensor sinusoidTable(std::size_t T, std::size_t d) {
  Tensor pe = Tensor::zeros({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double rate = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double ang = static_cast<double>(t) * rate;
      pe.mut(t * d + 2 * i) = std::sin(ang);
      if (2 * i + 1 < d) pe.mut(t * d + 2 * i + 1) = std::cos(ang);
    }
  }
  return pe;
}

Tensor relativeSinusoidTable(std::size_t T, std::size_t d) {
  const std::size_t n = 2 * T - 1;
  Tensor pe = Tensor::zeros({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double offset = static_cast<double>(r) - static_cast<double>(T - 1);
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double rate = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      const double ang = offset * rate;
      pe.mut(r * d + 2 * i) = std::sin(ang);
      if (2 * i + 1 < d) pe.mut(r * d + 2 * i + 1) = std::cos(ang);
    }
  }
  return pe;
}

Tensor mhsaForward(const Tensor& x, const NormParams& preNorm, const MhsaParams& p, int heads,
                   const FwdCtx& ctx, std::vector<Tensor>* attnOut) {
  const std::size_t T = x.rows(), d = x.cols();
  if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0) {
    throw std::invalid_argument("mhsa: heads " + std::to_string(heads) +
                                " do not divide model dimension " + std::to_string(d));
  }
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const Tensor h = layerNorm(x, preNorm.gain, preNorm.bias);
  const Tensor q = linear(h, p.wq, p.bq);
  const Tensor k = linear(h, p.wk, p.bk);
  const Tensor v = linear(h, p.wv, p.bv);
  Tensor relAll;  // [2T-1 x heads]
  if (ctx.relativeBias) relAll = matmul(relativeSinusoidTable(T, dh), p.rel);
  std::vector<Tensor> headOut;
  headOut.reserve(static_cast<std::size_t>(heads));
  const double invSqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int i = 0; i < heads; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * dh;
    const Tensor qh = sliceCols(q, off, dh);
    const Tensor kh = sliceCols(k, off, dh);
    const Tensor vh = sliceCols(v, off, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), invSqrt);
    if (ctx.relativeBias) {
      scores = addRelativeBias(scores, sliceCols(relAll, static_cast<std::size_t>(i), 1));
    }
    const Tensor probs = softmax(scores, 1);
    if (attnOut) attnOut->push_back(probs);
    headOut.push_back(matmul(probs, vh));
  }
  Tensor out = linear(concatCols(headOut), p.wo, p.bo);
  out = dropout(out, ctx.dropout, ctx.train, ctx.rng);
  return add(x, out);
}

Tensor convModuleForward(const Tensor& x, const NormParams& preNorm, ConvParams& p, int kernel,
                         int dilation, const FwdCtx& ctx) {
  if (kernel % 2 == 0) {
    throw std::invalid_argument("conv module: kernel must be odd, got " +
                                std::to_string(kernel));
  }
  const Tensor h = layerNorm(x, preNorm.gain, preNorm.bias);
  const Tensor gated = glu(linear(h, p.pw1W, p.pw1B));
  Tensor c = depthwiseConv1d(gated, p.dwKernel, dilation);
  c = addRowVector(c, p.dwBias);
  c = batchNorm(c, p.bnGain, p.bnBias, p.bnMean, p.bnVar, ctx.train);
  Tensor out = linear(swish(c), p.pw2W, p.pw2B);
  out = dropout(out, ctx.dropout, ctx.train, ctx.rng);
  return add(x, out);
}

Tensor ffnForward(const Tensor& x, const NormParams& preNorm, const FfnParams& p,
                  const FwdCtx& ctx) {
  const Tensor h = layerNorm(x, preNorm.gain, preNorm.bias);
  Tensor a = swish(linear(h, p.w1, p.b1));
  a = dropout(a, ctx.dropout, ctx.train, ctx.rng);
  Tensor out = linear(a, p.w2, p.b2);
  out = dropout(out, ctx.dropout, ctx.train, ctx.rng);
  return add(x, out);
}

Tensor candidateForward(const Tensor& x, const NormParams& preNorm, CandidateOp& op,
                        const FwdCtx& ctx) {
  switch (op.spec.slot) {
    case Slot::Mhsa:
      return mhsaForward(x, preNorm, std::get<MhsaParams>(op.params), op.spec.heads, ctx);
    case Slot::Conv:
      if (op.spec.isIdentity()) return x;
      return convModuleForward(x, preNorm, std::get<ConvParams>(op.params), op.spec.kernel,
                               op.spec.dilation, ctx);
    case Slot::Ffn:
      return ffnForward(x, preNorm, std::get<FfnParams>(op.params), ctx);
  }
  throw std::logic_error("candidateForward: bad slot");
}

Tensor embedInput(const Tensor& features, const EmbedParams& p, const FwdCtx& ctx) {
  if (features.rank() != 2 || features.cols() != p.w.rows()) {
    throw std::invalid_argument("embedInput: features " + shapeToString(features.shape()) +
                                " do not match projection " + shapeToString(p.w.shape()));
  }
  Tensor e = linear(features, p.w, p.b);
  e = add(e, sinusoidTable(e.rows(), e.cols()));
  return dropout(e, ctx.dropout, ctx.train, ctx.rng);
}

std::vector<NamedTensor> candidateParams(CandidateOp& op, const std::string& prefix) {
  std::vector<NamedTensor> out;
  if (auto* m = std::get_if<MhsaParams>(&op.params)) {
    out = {{prefix + ".wq", m->wq}, {prefix + ".bq", m->bq}, {prefix + ".wk", m->wk},
           {prefix + ".bk", m->bk}, {prefix + ".wv", m->wv}, {prefix + ".bv", m->bv},
           {prefix + ".wo", m->wo}, {prefix + ".bo", m->bo}, {prefix + ".rel", m->rel}};
  } else if (auto* c = std::get_if<ConvParams>(&op.params)) {
    out = {{prefix + ".pw1_w", c->pw1W},     {prefix + ".pw1_b", c->pw1B},
           {prefix + ".dw_kernel", c->dwKernel}, {prefix + ".dw_bias", c->dwBias},
           {prefix + ".bn_gain", c->bnGain}, {prefix + ".bn_bias", c->bnBias},
           {prefix + ".pw2_w", c->pw2W},     {prefix + ".pw2_b", c->pw2B}};
  } else if (auto* f = std::get_if<FfnParams>(&op.params)) {
    out = {{prefix + ".w1", f->w1}, {prefix + ".b1", f->b1},
           {prefix + ".w2", f->w2}, {prefix + ".b2", f->b2}};
  }
  return out;
}

std::vector<NamedTensor> candidateState(CandidateOp& op, const std::string& prefix) {
  if (auto* c = std::get_if<ConvParams>(&op.params)) {
    return {{prefix + ".bn_mean", c->bnMean}, {prefix + ".bn_var", c->bnVar}};
  }
  return {};
}

std::size_t numScalars(const std::vector<NamedTensor>& tensors) {
  std::size_t n = 0;
  for (const NamedTensor& t : tensors) n += t.tensor.size();
  return n;
}

}  // namespace confsearch
