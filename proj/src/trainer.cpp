// SPDX-License-Identifier: Apache-2.0
#include "confsearch/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "confsearch/errors.hpp"

namespace confsearch {

std::string formatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string SearchLog::toCsv() const {
  std::ostringstream os;
  os << "step,train_loss,valid_loss,lrate,S_a,alpha_updated";
  for (const std::string& c : weightColumns) os << "," << c;
  os << "\n";
  for (const StepLogRow& r : rows) {
    os << r.step << "," << formatDouble(r.trainLoss) << "," << formatDouble(r.validLoss) << ","
       << formatDouble(r.lrate) << "," << (std::isinf(r.sA) ? "inf" : formatDouble(r.sA)) << ","
       << (r.alphaUpdated ? 1 : 0);
    for (double w : r.weights) os << "," << formatDouble(w);
    os << "\n";
  }
  return os.str();
}

std::string AlphaHistory::toCsv() const {
  std::ostringstream os;
  os << "step,block,slot,candidate_name,logit,softmax_weight\n";
  for (const Row& r : rows) {
    os << r.step << "," << r.block << "," << slotName(r.slot) << "," << r.candidate << ","
       << formatDouble(r.logit) << "," << formatDouble(r.weight) << "\n";
  }
  return os.str();
}

namespace {

constexpr std::array<Slot, 3> kSlots = {Slot::Mhsa, Slot::Conv, Slot::Ffn};

void checkFinite(double v, const char* what, long long step) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(what) + " loss became non-finite (" +
                              std::to_string(v) + ") at step " + std::to_string(step + 1),
                          step + 1);
  }
}

}  // namespace

SearchTrainer::SearchTrainer(Supernet net, const TrainHyper& hyper, std::uint64_t seed)
    : net_(std::move(net)),
      hyper_(hyper),
      gate_(hyper.dss),
      omegaOpt_(Adam::forOmega()),
      alphaOpt_(Adam::forAlpha()),
      rng_(seed) {
  omega_ = net_.weightParams();
  alphas_ = net_.alphaParams();
}

FwdCtx SearchTrainer::trainCtx() {
  FwdCtx ctx;
  ctx.train = true;
  ctx.dropout = hyper_.dropout;
  ctx.rng = &rng_;
  ctx.relativeBias = hyper_.relativeBias;
  return ctx;
}

Tensor SearchTrainer::batchLoss(const Batch& batch, const FwdCtx& ctx) {
  if (batch.empty()) throw std::invalid_argument("batchLoss: empty batch");
  Tensor total;
  for (const Utterance* u : batch) {
    Tensor logits = net_.forward(u->features, ctx);
    Tensor loss = ctcLoss(logits, u->labels);
    if (hyper_.labelSmoothing > 0.0) {
      loss = add(loss, labelSmoothingPenalty(logits, hyper_.labelSmoothing));
    }
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

double SearchTrainer::evalLoss(const Batch& batch) {
  NoGradGuard ng;
  FwdCtx ctx;
  ctx.relativeBias = hyper_.relativeBias;
  return batchLoss(batch, ctx).item();
}

StepLogRow SearchTrainer::step(const Batch& trainBatch, const Batch& validBatch) {
  const double sA = gate_.threshold();
  const bool due = gate_.alphaDue();
  if (due) {
    // architecture step: first-order, weights held constant
    setRequiresGrad(omega_, false);
    {
      Tape tape;
      Tensor loss = batchLoss(validBatch, trainCtx());
      checkFinite(loss.item(), "validation", gate_.step());
      tape.backward(loss);
    }
    counters_.alphaValidReads += 1;
    alphaOpt_.step(alphas_, hyper_.alphaLr);
    zeroGrads(alphas_);
    setRequiresGrad(omega_, true);
    gate_.markAlphaUpdated();
  }

  // weight step at the rate for the step being performed
  double trainLoss = 0.0;
  setRequiresGrad(alphas_, false);
  {
    Tape tape;
    Tensor loss = batchLoss(trainBatch, trainCtx());
    trainLoss = loss.item();
    checkFinite(trainLoss, "training", gate_.step());
    tape.backward(loss);
  }
  counters_.omegaTrainReads += 1;
  clipGradNorm(omega_, hyper_.clipNorm);
  omegaOpt_.step(omega_, noamLrate(gate_.step() + 1, hyper_.noam));
  zeroGrads(omega_);
  setRequiresGrad(alphas_, true);
  gate_.advance();

  StepLogRow row;
  row.step = gate_.step();
  row.trainLoss = trainLoss;
  row.validLoss = evalLoss(validBatch);
  counters_.logValidReads += 1;
  row.lrate = noamLrate(gate_.step(), hyper_.noam);
  row.sA = sA;
  row.alphaUpdated = due;
  row.weights = flatWeights();
  return row;
}

std::vector<std::string> SearchTrainer::weightColumns() const {
  std::vector<std::string> cols;
  const SearchSpaceConfig& cfg = net_.config();
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    for (Slot s : kSlots) {
      for (const std::string& name : cfg.opsFor(s)) {
        cols.push_back("w_b" + std::to_string(b) + "_" + slotName(s) + "_" + name);
      }
    }
  }
  return cols;
}

std::vector<double> SearchTrainer::flatWeights() const {
  std::vector<double> out;
  for (std::size_t b = 0; b < net_.config().numBlocks; ++b) {
    for (Slot s : kSlots) {
      const std::vector<double> w = net_.slotWeights(b, s);
      out.insert(out.end(), w.begin(), w.end());
    }
  }
  return out;
}

namespace {

// Cycling cursor over shuffled indices; reshuffles on wrap.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, Rng* rng) : idx_(n), rng_(rng) {
    for (std::size_t i = 0; i < n; ++i) idx_[i] = i;
    rng_->shuffle(idx_);
  }
  std::size_t next() {
    if (pos_ == idx_.size()) {
      rng_->shuffle(idx_);
      pos_ = 0;
    }
    return idx_[pos_++];
  }

 private:
  std::vector<std::size_t> idx_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

void appendAlphaRows(AlphaHistory& hist, const Supernet& net, long long step) {
  const SearchSpaceConfig& cfg = net.config();
  for (std::size_t b = 0; b < cfg.numBlocks; ++b) {
    for (Slot s : kSlots) {
      const Tensor& a = net.alpha(b, s);
      NoGradGuard ng;
      const Tensor w = softmax(a, 0);
      const auto& names = cfg.opsFor(s);
      for (std::size_t k = 0; k < names.size(); ++k) {
        hist.rows.push_back({step, b, s, names[k], a.at(k), w.at(k)});
      }
    }
  }
}

void flushSearchArtifacts(const std::string& outDir, const SearchLog& log,
                          const AlphaHistory& hist) {
  std::filesystem::create_directories(outDir);
  writeFileAtomic(outDir + "/search_log.csv", log.toCsv());
  writeFileAtomic(outDir + "/alpha_log.csv", hist.toCsv());
}

}  // namespace

SearchResult runSearch(const SearchSpaceConfig& space, const TrainHyper& hyper,
                       std::size_t epochs, const Dataset& data, std::uint64_t seed,
                       const std::string& outDir, const std::string& configHash) {
  if (data.train.empty() || data.valid.empty()) {
    throw ConfigError("search needs non-empty train and valid splits");
  }
  Supernet net = Supernet::build(space, deriveSeed(seed, "supernet"), data.spec.featureDim,
                                 data.spec.vocab);
  SearchTrainer trainer(std::move(net), hyper, deriveSeed(seed, "train"));
  Rng orderRng(deriveSeed(seed, "order"));
  Rng augRng(deriveSeed(seed, "augment"));

  SearchResult result;
  result.log.weightColumns = trainer.weightColumns();

  BatchCursor validCursor(data.valid.size(), &orderRng);
  const std::size_t B = std::max<std::size_t>(1, hyper.batchSize);
  try {
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::vector<std::size_t> order(data.train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      orderRng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += B) {
        const std::size_t count = std::min(B, order.size() - start);
        std::vector<Utterance> scratch;  // holds augmented copies for this step
        Batch trainBatch, validBatch;
        scratch.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
          const Utterance& u = data.train[order[start + i]];
          if (data.spec.specAugmentOn) {
            Utterance aug;
            aug.features = specAugment(u.features, data.spec.timeMasks, data.spec.freqMasks,
                                       data.spec.maxTimeWidth, data.spec.maxFreqWidth, augRng);
            aug.labels = u.labels;
            scratch.push_back(std::move(aug));
            trainBatch.push_back(&scratch.back());
          } else {
            trainBatch.push_back(&u);
          }
        }
        for (std::size_t i = 0; i < count; ++i) validBatch.push_back(&data.valid[validCursor.next()]);
        StepLogRow row = trainer.step(trainBatch, validBatch);
        appendAlphaRows(result.alphaHistory, trainer.net(), row.step);
        result.log.rows.push_back(std::move(row));
      }
    }
  } catch (const DivergenceError&) {
    if (!outDir.empty()) flushSearchArtifacts(outDir, result.log, result.alphaHistory);
    throw;
  }

  result.genotype = deriveGenotype(trainer.net().alphaSnapshot(), space);
  result.counters = trainer.counters();
  result.steps = trainer.gate().step();

  if (!outDir.empty()) {
    flushSearchArtifacts(outDir, result.log, result.alphaHistory);
    writeFileAtomic(outDir + "/genotype.txt", result.genotype.serialize());
    std::vector<NamedTensor> tensors = trainer.net().weightParams();
    for (NamedTensor& nt : trainer.net().alphaParams()) tensors.push_back(std::move(nt));
    for (NamedTensor& nt : trainer.net().stateTensors()) tensors.push_back(std::move(nt));
    std::map<std::string, std::string> meta;
    meta["kind"] = "supernet";
    meta["step"] = std::to_string(trainer.gate().step());
    meta["last_alpha_step"] = std::to_string(trainer.gate().lastAlphaStep());
    meta["rng"] = trainer.rng().serialize();
    meta["config_hash"] = configHash;
    meta["feat_dim"] = std::to_string(data.spec.featureDim);
    meta["vocab"] = std::to_string(data.spec.vocab);
    saveCheckpoint(outDir + "/checkpoint", tensors, meta);
  }
  return result;
}

EvalMetrics evaluateSplit(DerivedModel& model, const std::vector<Utterance>& utts,
                          const TrainHyper& hyper) {
  NoGradGuard ng;
  FwdCtx ctx;
  ctx.relativeBias = hyper.relativeBias;
  EvalMetrics m;
  std::size_t dist = 0, refLen = 0;
  for (const Utterance& u : utts) {
    Tensor logits = model.forward(u.features, ctx);
    m.loss += ctcLoss(logits, u.labels).item();
    dist += editDistance(ctcGreedyDecode(logits), u.labels);
    refLen += u.labels.size();
  }
  m.loss /= static_cast<double>(utts.size());
  if (refLen == 0) {
    m.ter = dist == 0 ? TerResult{0.0, true}
                      : TerResult{std::numeric_limits<double>::infinity(), false};
  } else {
    m.ter = TerResult{static_cast<double>(dist) / static_cast<double>(refLen), true};
  }
  return m;
}

namespace {

std::map<std::string, std::string> modelMeta(const DerivedModel& model, long long steps,
                                             const std::string& configHash) {
  std::map<std::string, std::string> meta;
  meta["kind"] = "model";
  meta["step"] = std::to_string(steps);
  meta["config_hash"] = configHash;
  meta["feat_dim"] = std::to_string(model.featDim());
  meta["vocab"] = std::to_string(model.vocab());
  return meta;
}

void saveModelCheckpoint(const std::string& prefix, DerivedModel& model, long long steps,
                         const std::string& configHash) {
  std::vector<NamedTensor> tensors = model.weightParams();
  for (NamedTensor& nt : model.stateTensors()) tensors.push_back(std::move(nt));
  saveCheckpoint(prefix, tensors, modelMeta(model, steps, configHash));
  writeFileAtomic(prefix + ".genotype.txt", model.genotype().serialize());
}

}  // namespace

RetrainResult retrain(const Genotype& genotype, const SearchSpaceConfig& space,
                      const TrainHyper& hyper, std::size_t epochs, const Dataset& data,
                      std::uint64_t seed, const std::string& outDir,
                      const std::string& configHash) {
  if (data.train.empty() || data.valid.empty()) {
    throw ConfigError("retrain needs non-empty train and valid splits");
  }
  DerivedModel model = DerivedModel::materialize(genotype, space, deriveSeed(seed, "init"),
                                                 data.spec.featureDim, data.spec.vocab);
  std::vector<NamedTensor> omega = model.weightParams();
  Adam opt = Adam::forOmega();
  Rng rng(deriveSeed(seed, "train"));
  Rng orderRng(deriveSeed(seed, "order"));
  Rng augRng(deriveSeed(seed, "augment"));
  const std::size_t B = std::max<std::size_t>(1, hyper.batchSize);

  if (!outDir.empty()) std::filesystem::create_directories(outDir);

  RetrainResult result{std::move(model), {}};
  long long S = 0;
  FwdCtx ctx;
  ctx.train = true;
  ctx.dropout = hyper.dropout;
  ctx.rng = &rng;
  ctx.relativeBias = hyper.relativeBias;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    orderRng.shuffle(order);
    double epochLoss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t count = std::min(B, order.size() - start);
      std::vector<Utterance> scratch;
      scratch.reserve(count);
      Batch batch;
      for (std::size_t i = 0; i < count; ++i) {
        const Utterance& u = data.train[order[start + i]];
        if (data.spec.specAugmentOn) {
          Utterance aug;
          aug.features = specAugment(u.features, data.spec.timeMasks, data.spec.freqMasks,
                                     data.spec.maxTimeWidth, data.spec.maxFreqWidth, augRng);
          aug.labels = u.labels;
          scratch.push_back(std::move(aug));
          batch.push_back(&scratch.back());
        } else {
          batch.push_back(&u);
        }
      }
      double lossVal = 0.0;
      {
        Tape tape;
        Tensor total;
        for (const Utterance* u : batch) {
          Tensor logits = result.model.forward(u->features, ctx);
          Tensor loss = ctcLoss(logits, u->labels);
          if (hyper.labelSmoothing > 0.0) {
            loss = add(loss, labelSmoothingPenalty(logits, hyper.labelSmoothing));
          }
          total = total.defined() ? add(total, loss) : loss;
        }
        total = scale(total, 1.0 / static_cast<double>(batch.size()));
        lossVal = total.item();
        if (!std::isfinite(lossVal)) {
          std::string msg = "training loss became non-finite at step " + std::to_string(S + 1);
          if (!outDir.empty()) msg += "; last good checkpoint: " + outDir + "/ckpt.*";
          throw DivergenceError(msg, S + 1);
        }
        tape.backward(total);
      }
      clipGradNorm(omega, hyper.clipNorm);
      opt.step(omega, noamLrate(S + 1, hyper.noam));
      zeroGrads(omega);
      ++S;
      epochLoss += lossVal;
      ++steps;
    }
    result.metrics.epochTrainLoss.push_back(epochLoss / static_cast<double>(steps));
    if (!outDir.empty()) saveModelCheckpoint(outDir + "/ckpt", result.model, S, configHash);
  }
  result.metrics.steps = S;
  const EvalMetrics ev = evaluateSplit(result.model, data.valid, hyper);
  result.metrics.validLoss = ev.loss;
  result.metrics.validTer = ev.ter;
  return result;
}

RandomSearchResult runRandomSearch(const SearchSpaceConfig& space, const TrainHyper& hyper,
                                   std::size_t trials, std::size_t epochsPerTrial,
                                   const Dataset& data, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("random search needs at least one trial");
  Rng sampleRng(deriveSeed(seed, "sample"));
  RandomSearchResult result;
  for (std::size_t i = 0; i < trials; ++i) {
    TrialRecord rec;
    rec.index = i;
    rec.genotype = sampleRandomGenotype(space, sampleRng);
    RetrainResult rr = retrain(rec.genotype, space, hyper, epochsPerTrial, data,
                               deriveSeed(seed, "trial", i));
    rec.validLoss = rr.metrics.validLoss;
    rec.validTer = rr.metrics.validTer;
    result.trials.push_back(std::move(rec));
  }
  result.bestIndex = 0;
  for (std::size_t i = 1; i < result.trials.size(); ++i) {
    const TrialRecord& a = result.trials[i];
    const TrialRecord& b = result.trials[result.bestIndex];
    const double terA = a.validTer.finite ? a.validTer.value
                                          : std::numeric_limits<double>::infinity();
    const double terB = b.validTer.finite ? b.validTer.value
                                          : std::numeric_limits<double>::infinity();
    if (terA < terB || (terA == terB && a.validLoss < b.validLoss)) result.bestIndex = i;
  }
  return result;
}

void saveCheckpoint(const std::string& prefix, const std::vector<NamedTensor>& tensors,
                    const std::map<std::string, std::string>& meta) {
  saveTensors(prefix + ".tensors", prefix + ".index", tensors);
  std::ostringstream os;
  for (const auto& [k, v] : meta) os << k << " = " << v << "\n";
  writeFileAtomic(prefix + ".meta", os.str());
}

std::map<std::string, std::string> loadCheckpointMeta(const std::string& prefix) {
  std::map<std::string, std::string> meta;
  std::istringstream is(readFile(prefix + ".meta"));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed checkpoint meta line: " + line);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    meta[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return meta;
}

DerivedModel loadModelCheckpoint(const std::string& prefix, const SearchSpaceConfig& space) {
  const auto meta = loadCheckpointMeta(prefix);
  if (!meta.count("kind") || meta.at("kind") != "model") {
    throw IoError("checkpoint at " + prefix + " is not a model checkpoint");
  }
  const Genotype g = Genotype::parse(readFile(prefix + ".genotype.txt"));
  const std::size_t featDim = std::stoull(meta.at("feat_dim"));
  const std::size_t vocab = std::stoull(meta.at("vocab"));
  DerivedModel model = DerivedModel::materialize(g, space, 0, featDim, vocab);
  const auto blobs = loadTensors(prefix + ".tensors", prefix + ".index");
  auto restore = [&](std::vector<NamedTensor> dst) {
    for (NamedTensor& nt : dst) {
      const Tensor& src = findTensor(blobs, nt.name);
      if (src.shape() != nt.tensor.shape()) {
        throw IoError("checkpoint tensor " + nt.name + " has shape " +
                      shapeToString(src.shape()) + ", expected " +
                      shapeToString(nt.tensor.shape()));
      }
      nt.tensor.valuesMut() = src.values();
    }
  };
  restore(model.weightParams());
  restore(model.stateTensors());
  return model;
}

}  // namespace confsearch
