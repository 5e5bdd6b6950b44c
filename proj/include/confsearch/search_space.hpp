// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "confsearch/conformer.hpp"
#include "confsearch/rng.hpp"

namespace confsearch {

struct SearchSpaceConfig {
  std::size_t numBlocks = 4;
  std::size_t dModel = 256;
  std::vector<std::string> mhsaOps = CandidateOpSpec::namesFor(Slot::Mhsa);
  std::vector<std::string> convOps = CandidateOpSpec::namesFor(Slot::Conv);
  std::vector<std::string> ffnOps = CandidateOpSpec::namesFor(Slot::Ffn);

  const std::vector<std::string>& opsFor(Slot s) const;
  void validate() const;  // throws ConfigError
  bool operator==(const SearchSpaceConfig&) const = default;
};

// alpha logits per (block, slot, candidate)
struct AlphaTable {
  std::vector<std::array<std::vector<double>, 3>> logits;
};

struct Genotype {
  struct BlockChoice {
    std::string mhsa, conv, ffn;
    const std::string& forSlot(Slot s) const;
    bool operator==(const BlockChoice&) const = default;
  };
  std::vector<BlockChoice> blocks;

  std::string serialize() const;
  static Genotype parse(const std::string& text);
  void validate(const SearchSpaceConfig& cfg) const;
  bool operator==(const Genotype&) const = default;
};

// Node/region info captured while mixed_forward runs under a tape, enough to
// verify structurally that each latent only feeds the next slot's mixed op.
struct MixedTrace {
  std::int64_t embedNode = -1;
  struct Region {
    std::size_t block;
    Slot slot;
    std::int64_t inputNode;
    std::int64_t outputNode;
    std::size_t tapeBegin, tapeEnd;  // entry range that computed this slot
  };
  std::vector<Region> regions;
  std::size_t headBegin = 0;  // tape index where the output head starts
};

// The relaxed network: every candidate operation instantiated in every slot
// of every block, plus one alpha logit vector per slot. Softmax(alpha)
// weights the candidate outputs; the chain x -> mhsa -> conv -> ffn repeats
// per block, then final layer norm and a linear head produce frame logits.
class Supernet {
 public:
  static Supernet build(const SearchSpaceConfig& cfg, std::uint64_t seed, std::size_t featDim,
                        std::size_t vocab);

  Tensor forward(const Tensor& features, const FwdCtx& ctx, MixedTrace* trace = nullptr);

  // Full residual unit of one candidate on input x (oracle/test surface).
  Tensor candidateOutput(std::size_t block, Slot slot, std::size_t k, const Tensor& x,
                         const FwdCtx& ctx);

  Tensor& alpha(std::size_t block, Slot slot);
  const Tensor& alpha(std::size_t block, Slot slot) const;
  std::vector<double> slotWeights(std::size_t block, Slot slot) const;
  AlphaTable alphaSnapshot() const;

  CandidateOp& candidate(std::size_t block, Slot slot, std::size_t k);
  NormParams& slotNorm(std::size_t block, Slot slot);

  std::vector<NamedTensor> weightParams();  // omega
  std::vector<NamedTensor> alphaParams();
  std::vector<NamedTensor> stateTensors();  // batch-norm running stats

  std::size_t numCandidateOps() const;
  const SearchSpaceConfig& config() const { return cfg_; }
  std::size_t featDim() const { return featDim_; }
  std::size_t vocab() const { return vocab_; }

 private:
  struct SlotBank {
    Slot slot;
    NormParams norm;
    std::vector<CandidateOp> cands;
    Tensor alphaLogits;
  };
  struct Block {
    std::array<SlotBank, 3> slots;
  };

  SearchSpaceConfig cfg_;
  std::size_t featDim_ = 0, vocab_ = 0;
  EmbedParams embed_;
  NormParams finalNorm_;
  Tensor headW_, headB_;
  std::vector<Block> blocks_;
};

// A discrete architecture with only the chosen operations, freshly
// initialized from `seed` (never inheriting supernet weights).
class DerivedModel {
 public:
  static DerivedModel materialize(const Genotype& g, const SearchSpaceConfig& cfg,
                                  std::uint64_t seed, std::size_t featDim, std::size_t vocab);

  Tensor forward(const Tensor& features, const FwdCtx& ctx);

  std::vector<NamedTensor> weightParams();
  std::vector<NamedTensor> stateTensors();
  std::size_t paramCount();
  const Genotype& genotype() const { return genotype_; }
  std::size_t featDim() const { return featDim_; }
  std::size_t vocab() const { return vocab_; }
  const SearchSpaceConfig& config() const { return cfg_; }

 private:
  struct Unit {
    NormParams norm;
    CandidateOp op;
  };
  Genotype genotype_;
  SearchSpaceConfig cfg_;
  std::size_t featDim_ = 0, vocab_ = 0;
  EmbedParams embed_;
  NormParams finalNorm_;
  Tensor headW_, headB_;
  std::vector<std::array<Unit, 3>> blocks_;
};

// argmax per slot; ties break to the lowest candidate index. NaN rejected.
Genotype deriveGenotype(const AlphaTable& alpha, const SearchSpaceConfig& cfg);

// Product over blocks of (Km * Kc * Kf), exact; throws ConfigError on
// 64-bit overflow.
std::uint64_t countArchitectures(const SearchSpaceConfig& cfg);

Genotype sampleRandomGenotype(const SearchSpaceConfig& cfg, Rng& rng);

}  // namespace confsearch
