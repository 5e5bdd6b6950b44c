// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "confsearch/ctc.hpp"
#include "confsearch/data.hpp"
#include "confsearch/optim.hpp"
#include "confsearch/schedule.hpp"
#include "confsearch/search_space.hpp"

namespace confsearch {

struct TrainHyper {
  NoamConfig noam;
  DssConfig dss;
  double alphaLr = 0.0003;
  double clipNorm = 5.0;
  double dropout = 0.1;
  double labelSmoothing = 0.0;  // 0 disables the KL-to-uniform penalty
  std::size_t batchSize = 4;
  bool relativeBias = true;
  bool operator==(const TrainHyper&) const = default;
};

using Batch = std::vector<const Utterance*>;

struct StepLogRow {
  long long step = 0;  // 1-based weight-update count after this iteration
  double trainLoss = 0.0;
  double validLoss = 0.0;  // evaluation-mode loss on the step's validation batch
  double lrate = 0.0;
  double sA = 0.0;
  bool alphaUpdated = false;
  std::vector<double> weights;  // softmax(alpha), flattened per (block, slot, candidate)
};

struct SearchLog {
  std::vector<std::string> weightColumns;
  std::vector<StepLogRow> rows;
  std::string toCsv() const;
};

struct AlphaHistory {
  struct Row {
    long long step;
    std::size_t block;
    Slot slot;
    std::string candidate;
    double logit, weight;
  };
  std::vector<Row> rows;
  std::string toCsv() const;
};

// Batch fetches actually consumed by each kind of computation; the
// architecture step must never touch training batches and the weight step
// must never touch validation batches.
struct DataCounters {
  std::size_t omegaTrainReads = 0;
  std::size_t alphaValidReads = 0;
  std::size_t logValidReads = 0;
};

// One iteration of the alternating search loop: if the gate is due, descend
// the validation loss w.r.t. alpha (weights frozen, first order), then
// always descend the training loss w.r.t. the weights at the Noam rate for
// the next step. Owns the optimizers, gate state, and dropout rng.
class SearchTrainer {
 public:
  SearchTrainer(Supernet net, const TrainHyper& hyper, std::uint64_t seed);

  StepLogRow step(const Batch& trainBatch, const Batch& validBatch);

  // mean CTC loss (plus smoothing penalty if configured) over the batch
  Tensor batchLoss(const Batch& batch, const FwdCtx& ctx);
  double evalLoss(const Batch& batch);

  Supernet& net() { return net_; }
  const DssGate& gate() const { return gate_; }
  const DataCounters& counters() const { return counters_; }
  const Rng& rng() const { return rng_; }
  std::vector<std::string> weightColumns() const;
  std::vector<double> flatWeights() const;

 private:
  FwdCtx trainCtx();

  Supernet net_;
  TrainHyper hyper_;
  DssGate gate_;
  Adam omegaOpt_, alphaOpt_;
  Rng rng_;
  std::vector<NamedTensor> omega_, alphas_;
  DataCounters counters_;
};

struct SearchResult {
  Genotype genotype;
  SearchLog log;
  AlphaHistory alphaHistory;
  DataCounters counters;
  long long steps = 0;
};

// Epochs of shuffled train/valid batch pairs through SearchTrainer::step.
// With a non-empty outDir, writes genotype.txt, search_log.csv,
// alpha_log.csv and a final checkpoint there; partial logs are flushed
// before a divergence error propagates.
SearchResult runSearch(const SearchSpaceConfig& space, const TrainHyper& hyper,
                       std::size_t epochs, const Dataset& data, std::uint64_t seed,
                       const std::string& outDir = "", const std::string& configHash = "");

struct EvalMetrics {
  double loss = 0.0;
  TerResult ter;
};

EvalMetrics evaluateSplit(DerivedModel& model, const std::vector<Utterance>& utts,
                          const TrainHyper& hyper);

struct RetrainMetrics {
  std::vector<double> epochTrainLoss;
  double validLoss = 0.0;
  TerResult validTer;
  long long steps = 0;
};

struct RetrainResult {
  DerivedModel model;
  RetrainMetrics metrics;
};

// Materialize from scratch (no supernet weights) and train with the
// Noam-scheduled CTC objective. With outDir set, a checkpoint is refreshed
// after every epoch, so divergence leaves the last good one on disk.
RetrainResult retrain(const Genotype& genotype, const SearchSpaceConfig& space,
                      const TrainHyper& hyper, std::size_t epochs, const Dataset& data,
                      std::uint64_t seed, const std::string& outDir = "",
                      const std::string& configHash = "");

struct TrialRecord {
  std::size_t index = 0;
  Genotype genotype;
  double validLoss = 0.0;
  TerResult validTer;
};

struct RandomSearchResult {
  std::size_t bestIndex = 0;
  std::vector<TrialRecord> trials;
  const Genotype& best() const { return trials[bestIndex].genotype; }
};

// Uniform genotype samples, each trained from scratch for the given budget;
// the lowest validation token error rate wins, ties by validation loss then
// by trial index.
RandomSearchResult runRandomSearch(const SearchSpaceConfig& space, const TrainHyper& hyper,
                                   std::size_t trials, std::size_t epochsPerTrial,
                                   const Dataset& data, std::uint64_t seed);

// Checkpoints: <prefix>.tensors/.index blobs plus <prefix>.meta ("key = value"
// lines) and, for models, <prefix>.genotype.txt.
void saveCheckpoint(const std::string& prefix, const std::vector<NamedTensor>& tensors,
                    const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> loadCheckpointMeta(const std::string& prefix);
DerivedModel loadModelCheckpoint(const std::string& prefix, const SearchSpaceConfig& space);

std::string formatDouble(double v);  // deterministic %.17g

}  // namespace confsearch
