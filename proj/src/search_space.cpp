// SPDX-License-Identifier: Apache-2.0
#include "confsearch/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "confsearch/errors.hpp"

namespace confsearch {

namespace {

constexpr std::array<Slot, 3> kSlots = {Slot::Mhsa, Slot::Conv, Slot::Ffn};

std::string slotScope(std::size_t block, Slot slot) {
  return "b" + std::to_string(block) + "." + slotName(slot);
}

}  // namespace

const std::vector<std::string>& SearchSpaceConfig::opsFor(Slot s) const {
  switch (s) {
    case Slot::Mhsa: return mhsaOps;
    case Slot::Conv: return convOps;
    case Slot::Ffn: return ffnOps;
  }
  return mhsaOps;
}

void SearchSpaceConfig::validate() const {
  if (numBlocks < 1) throw ConfigError("search space needs at least one block");
  if (dModel < 1) throw ConfigError("d_model must be positive");
  for (Slot s : kSlots) {
    if (opsFor(s).empty()) {
      throw ConfigError(std::string("candidate list for ") + slotName(s) + " is empty");
    }
    for (const std::string& name : opsFor(s)) CandidateOpSpec::parse(s, name);
  }
}

const std::string& Genotype::BlockChoice::forSlot(Slot s) const {
  switch (s) {
    case Slot::Mhsa: return mhsa;
    case Slot::Conv: return conv;
    case Slot::Ffn: return ffn;
  }
  return mhsa;
}

std::string Genotype::serialize() const {
  std::ostringstream os;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    os << "block " << b << ": " << blocks[b].mhsa << " " << blocks[b].conv << " "
       << blocks[b].ffn << "\n";
  }
  return os.str();
}

Genotype Genotype::parse(const std::string& text) {
  Genotype g;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;  // blank
    std::size_t index = 0;
    std::string mhsa, conv, ffn;
    char colon = 0;
    if (word != "block" || !(ls >> index >> colon >> mhsa >> conv >> ffn) || colon != ':') {
      throw ConfigError("malformed genotype line: '" + line + "'");
    }
    if (index != g.blocks.size()) {
      throw ConfigError("genotype blocks out of order at index " + std::to_string(index));
    }
    g.blocks.push_back({mhsa, conv, ffn});
  }
  if (g.blocks.empty()) throw ConfigError("genotype file has no blocks");
  return g;
}

void Genotype::validate(const SearchSpaceConfig& cfg) const {
  if (blocks.size() != cfg.numBlocks) {
    throw ConfigError("genotype has " + std::to_string(blocks.size()) + " blocks, config has " +
                      std::to_string(cfg.numBlocks));
  }
  for (const BlockChoice& b : blocks) {
    for (Slot s : kSlots) {
      const std::string& name = b.forSlot(s);
      CandidateOpSpec::parse(s, name);  // valid Table-1 name for the slot
      const auto& list = cfg.opsFor(s);
      if (std::find(list.begin(), list.end(), name) == list.end()) {
        std::string valid;
        for (const std::string& n : list) valid += " " + n;
        throw ConfigError("operation '" + name + "' is not in the configured " +
                          slotName(s) + " candidates:" + valid);
      }
    }
  }
}

Supernet Supernet::build(const SearchSpaceConfig& cfg, std::uint64_t seed, std::size_t featDim,
                         std::size_t vocab) {
  cfg.validate();
  if (featDim < 1 || vocab < 2) throw ConfigError("supernet needs featDim >= 1 and vocab >= 2");
  Supernet net;
  net.cfg_ = cfg;
  net.featDim_ = featDim;
  net.vocab_ = vocab;
  net.embed_ = makeEmbedParams(seed, "embed", featDim, cfg.dModel);
  net.finalNorm_ = makeNormParams(cfg.dModel);
  net.headW_ = makeWeight(seed, "head", "w", {cfg.dModel, vocab}, cfg.dModel);
  net.headB_ = Tensor::zeros({vocab});
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    Block blk;
    for (std::size_t si = 0; si < kSlots.size(); ++si) {
      const Slot s = kSlots[si];
      SlotBank& bank = blk.slots[si];
      bank.slot = s;
      bank.norm = makeNormParams(cfg.dModel);
      for (const std::string& name : cfg.opsFor(s)) {
        bank.cands.push_back(
            makeCandidate(seed, slotScope(b, s), CandidateOpSpec::parse(s, name), cfg.dModel));
      }
      // zero logits: the symmetric, uniform-mixture start
      bank.alphaLogits = Tensor::zeros({bank.cands.size()});
      bank.alphaLogits.setRequiresGrad(true);
    }
    net.blocks_.push_back(std::move(blk));
  }
  for (NamedTensor& nt : net.weightParams()) nt.tensor.setRequiresGrad(true);
  return net;
}

Tensor Supernet::forward(const Tensor& features, const FwdCtx& ctx, MixedTrace* trace) {
  if (features.rank() != 2 || features.cols() != featDim_) {
    throw std::invalid_argument("supernet forward: features " +
                                shapeToString(features.shape()) + " do not match feature dim " +
                                std::to_string(featDim_));
  }
  Tape* tape = Tape::active();
  Tensor x = embedInput(features, embed_, ctx);
  if (trace && tape) trace->embedNode = tape->idFor(x);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (SlotBank& bank : blocks_[b].slots) {
      const std::size_t begin = tape ? tape->numEntries() : 0;
      const std::int64_t inputNode = (trace && tape) ? tape->idFor(x) : -1;
      const Tensor weights = softmax(bank.alphaLogits, 0);
      Tensor mixed;
      for (std::size_t k = 0; k < bank.cands.size(); ++k) {
        Tensor term = scaleByScalar(candidateForward(x, bank.norm, bank.cands[k], ctx),
                                    elem(weights, k));
        mixed = k == 0 ? term : add(mixed, term);
      }
      if (trace && tape) {
        trace->regions.push_back({b, bank.slot, inputNode, tape->idFor(mixed), begin,
                                  tape->numEntries()});
      }
      x = mixed;
    }
  }
  if (trace && tape) trace->headBegin = tape->numEntries();
  x = layerNorm(x, finalNorm_.gain, finalNorm_.bias);
  return linear(x, headW_, headB_);
}

Tensor Supernet::candidateOutput(std::size_t block, Slot slot, std::size_t k, const Tensor& x,
                                 const FwdCtx& ctx) {
  SlotBank& bank = blocks_.at(block).slots[static_cast<std::size_t>(slot)];
  return candidateForward(x, bank.norm, bank.cands.at(k), ctx);
}

Tensor& Supernet::alpha(std::size_t block, Slot slot) {
  return blocks_.at(block).slots[static_cast<std::size_t>(slot)].alphaLogits;
}

const Tensor& Supernet::alpha(std::size_t block, Slot slot) const {
  return blocks_.at(block).slots[static_cast<std::size_t>(slot)].alphaLogits;
}

std::vector<double> Supernet::slotWeights(std::size_t block, Slot slot) const {
  NoGradGuard ng;
  return softmax(alpha(block, slot), 0).values();
}

AlphaTable Supernet::alphaSnapshot() const {
  AlphaTable t;
  t.logits.resize(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t si = 0; si < 3; ++si) {
      t.logits[b][si] = blocks_[b].slots[si].alphaLogits.values();
    }
  }
  return t;
}

CandidateOp& Supernet::candidate(std::size_t block, Slot slot, std::size_t k) {
  return blocks_.at(block).slots[static_cast<std::size_t>(slot)].cands.at(k);
}

NormParams& Supernet::slotNorm(std::size_t block, Slot slot) {
  return blocks_.at(block).slots[static_cast<std::size_t>(slot)].norm;
}

std::vector<NamedTensor> Supernet::weightParams() {
  std::vector<NamedTensor> out;
  out.push_back({"embed.w", embed_.w});
  out.push_back({"embed.b", embed_.b});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (SlotBank& bank : blocks_[b].slots) {
      const std::string scope = slotScope(b, bank.slot);
      out.push_back({scope + ".norm.gain", bank.norm.gain});
      out.push_back({scope + ".norm.bias", bank.norm.bias});
      for (CandidateOp& op : bank.cands) {
        for (NamedTensor& nt : candidateParams(op, scope + "." + op.spec.name)) {
          out.push_back(std::move(nt));
        }
      }
    }
  }
  out.push_back({"final_norm.gain", finalNorm_.gain});
  out.push_back({"final_norm.bias", finalNorm_.bias});
  out.push_back({"head.w", headW_});
  out.push_back({"head.b", headB_});
  return out;
}

std::vector<NamedTensor> Supernet::alphaParams() {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (SlotBank& bank : blocks_[b].slots) {
      out.push_back({"alpha." + slotScope(b, bank.slot), bank.alphaLogits});
    }
  }
  return out;
}

std::vector<NamedTensor> Supernet::stateTensors() {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (SlotBank& bank : blocks_[b].slots) {
      const std::string scope = slotScope(b, bank.slot);
      for (CandidateOp& op : bank.cands) {
        for (NamedTensor& nt : candidateState(op, scope + "." + op.spec.name)) {
          out.push_back(std::move(nt));
        }
      }
    }
  }
  return out;
}

std::size_t Supernet::numCandidateOps() const {
  std::size_t n = 0;
  for (const Block& b : blocks_)
    for (const SlotBank& bank : b.slots) n += bank.cands.size();
  return n;
}

DerivedModel DerivedModel::materialize(const Genotype& g, const SearchSpaceConfig& cfg,
                                       std::uint64_t seed, std::size_t featDim,
                                       std::size_t vocab) {
  cfg.validate();
  g.validate(cfg);
  DerivedModel m;
  m.genotype_ = g;
  m.cfg_ = cfg;
  m.featDim_ = featDim;
  m.vocab_ = vocab;
  m.embed_ = makeEmbedParams(seed, "embed", featDim, cfg.dModel);
  m.finalNorm_ = makeNormParams(cfg.dModel);
  m.headW_ = makeWeight(seed, "head", "w", {cfg.dModel, vocab}, cfg.dModel);
  m.headB_ = Tensor::zeros({vocab});
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    std::array<Unit, 3> units;
    for (std::size_t si = 0; si < kSlots.size(); ++si) {
      const Slot s = kSlots[si];
      units[si].norm = makeNormParams(cfg.dModel);
      units[si].op = makeCandidate(seed, slotScope(b, s),
                                   CandidateOpSpec::parse(s, g.blocks[b].forSlot(s)),
                                   cfg.dModel);
    }
    m.blocks_.push_back(std::move(units));
  }
  for (NamedTensor& nt : m.weightParams()) nt.tensor.setRequiresGrad(true);
  return m;
}

Tensor DerivedModel::forward(const Tensor& features, const FwdCtx& ctx) {
  if (features.rank() != 2 || features.cols() != featDim_) {
    throw std::invalid_argument("model forward: features " + shapeToString(features.shape()) +
                                " do not match feature dim " + std::to_string(featDim_));
  }
  Tensor x = embedInput(features, embed_, ctx);
  for (auto& units : blocks_) {
    for (Unit& u : units) x = candidateForward(x, u.norm, u.op, ctx);
  }
  x = layerNorm(x, finalNorm_.gain, finalNorm_.bias);
  return linear(x, headW_, headB_);
}

std::vector<NamedTensor> DerivedModel::weightParams() {
  std::vector<NamedTensor> out;
  out.push_back({"embed.w", embed_.w});
  out.push_back({"embed.b", embed_.b});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t si = 0; si < 3; ++si) {
      Unit& u = blocks_[b][si];
      const std::string scope = slotScope(b, kSlots[si]);
      // identity units never normalize, so their norm params stay out of omega
      if (!u.op.spec.isIdentity()) {
        out.push_back({scope + ".norm.gain", u.norm.gain});
        out.push_back({scope + ".norm.bias", u.norm.bias});
      }
      for (NamedTensor& nt : candidateParams(u.op, scope + "." + u.op.spec.name)) {
        out.push_back(std::move(nt));
      }
    }
  }
  out.push_back({"final_norm.gain", finalNorm_.gain});
  out.push_back({"final_norm.bias", finalNorm_.bias});
  out.push_back({"head.w", headW_});
  out.push_back({"head.b", headB_});
  return out;
}

std::vector<NamedTensor> DerivedModel::stateTensors() {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t si = 0; si < 3; ++si) {
      Unit& u = blocks_[b][si];
      for (NamedTensor& nt :
           candidateState(u.op, slotScope(b, kSlots[si]) + "." + u.op.spec.name)) {
        out.push_back(std::move(nt));
      }
    }
  }
  return out;
}

std::size_t DerivedModel::paramCount() { return numScalars(weightParams()); }

Genotype deriveGenotype(const AlphaTable& alpha, const SearchSpaceConfig& cfg) {
  if (alpha.logits.size() != cfg.numBlocks) {
    throw std::invalid_argument("alpha table block count does not match config");
  }
  Genotype g;
  for (std::size_t b = 0; b < alpha.logits.size(); ++b) {
    Genotype::BlockChoice choice;
    for (std::size_t si = 0; si < kSlots.size(); ++si) {
      const std::vector<double>& v = alpha.logits[b][si];
      const auto& names = cfg.opsFor(kSlots[si]);
      if (v.size() != names.size()) {
        throw std::invalid_argument("alpha vector length does not match candidate list");
      }
      std::size_t best = 0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (std::isnan(v[k])) throw std::invalid_argument("alpha contains NaN");
        if (v[k] > v[best]) best = k;  // strict: ties keep the lowest index
      }
      const std::string& name = names[best];
      switch (kSlots[si]) {
        case Slot::Mhsa: choice.mhsa = name; break;
        case Slot::Conv: choice.conv = name; break;
        case Slot::Ffn: choice.ffn = name; break;
      }
    }
    g.blocks.push_back(std::move(choice));
  }
  return g;
}

std::uint64_t countArchitectures(const SearchSpaceConfig& cfg) {
  cfg.validate();
  std::uint64_t total = 1;
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    for (Slot s : kSlots) {
      const std::uint64_t k = cfg.opsFor(s).size();
      if (__builtin_mul_overflow(total, k, &total)) {
        throw ConfigError("architecture count overflows 64 bits");
      }
    }
  }
  return total;
}

Genotype sampleRandomGenotype(const SearchSpaceConfig& cfg, Rng& rng) {
  Genotype g;
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    Genotype::BlockChoice c;
    c.mhsa = cfg.mhsaOps[rng.below(cfg.mhsaOps.size())];
    c.conv = cfg.convOps[rng.below(cfg.convOps.size())];
    c.ffn = cfg.ffnOps[rng.below(cfg.ffnOps.size())];
    g.blocks.push_back(std::move(c));
  }
  return g;
}

}  // namespace confsearch
