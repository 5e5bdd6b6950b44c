// SPDX-License-Identifier: Apache-2.0
#include "confsearch/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "confsearch/config.hpp"
#include "confsearch/errors.hpp"

namespace confsearch {

namespace {

using nlohmann::json;

RunConfig loadConfig(const CliOptions& opts) {
  if (opts.configPath.empty()) throw ConfigError("no config file given (--config PATH)");
  RunConfig cfg = RunConfig::load(opts.configPath);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.trials) cfg.trials = *opts.trials;
  if (opts.epochs) {
    cfg.searchEpochs = *opts.epochs;
    cfg.retrainEpochs = *opts.epochs;
  }
  if (opts.forceOne) cfg.hyper.dss.forceOne = true;
  cfg.validate();
  return cfg;
}

std::string resolveOutDir(const CliOptions& opts, const RunConfig& cfg) {
  if (!opts.outOverride.empty()) return opts.outOverride;
  if (const char* env = std::getenv("CONFSEARCH_OUT"); env && *env) return env;
  return cfg.outDir;
}

template <typename Fn>
int guarded(std::ostream& err, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

json genotypeJson(const Genotype& g) {
  json blocks = json::array();
  for (const auto& b : g.blocks) {
    blocks.push_back({{"mhsa", b.mhsa}, {"conv", b.conv}, {"ffn", b.ffn}});
  }
  return blocks;
}

json terJson(const TerResult& t) {
  if (!t.finite) return "inf";
  return t.value;
}

void printGenotype(std::ostream& out, const Genotype& g) {
  out << g.serialize();
}

}  // namespace

int cmdSearch(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const RunConfig cfg = loadConfig(opts);
    const std::string outDir = resolveOutDir(opts, cfg);
    const Dataset data = generateDataset(cfg.task);
    const SearchResult result =
        runSearch(cfg.space, cfg.hyper, cfg.searchEpochs, data, cfg.seed, outDir, cfg.hash());
    std::size_t alphaUpdates = 0;
    for (const StepLogRow& r : result.log.rows) alphaUpdates += r.alphaUpdated ? 1 : 0;
    out << "search finished: " << result.steps << " steps, " << alphaUpdates
        << " alpha updates\n";
    if (!result.log.rows.empty()) {
      const StepLogRow& last = result.log.rows.back();
      out << "final train loss " << formatDouble(last.trainLoss) << ", valid loss "
          << formatDouble(last.validLoss) << "\n";
    }
    out << "derived genotype:\n";
    printGenotype(out, result.genotype);
    out << "artifacts in " << outDir << "\n";
    return kExitOk;
  });
}

int cmdRetrain(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const RunConfig cfg = loadConfig(opts);
    const std::string outDir = resolveOutDir(opts, cfg);
    if (opts.genotypePath.empty()) throw ConfigError("retrain needs --genotype PATH");
    const Genotype g = Genotype::parse(readFile(opts.genotypePath));
    g.validate(cfg.space);
    const Dataset data = generateDataset(cfg.task);
    const std::size_t epochs = opts.epochs ? *opts.epochs : cfg.retrainEpochs;
    const RetrainResult rr =
        retrain(g, cfg.space, cfg.hyper, epochs, data, cfg.seed, outDir, cfg.hash());
    std::ostringstream lines;
    for (std::size_t e = 0; e < rr.metrics.epochTrainLoss.size(); ++e) {
      lines << json{{"record", "epoch"},
                    {"epoch", e + 1},
                    {"train_loss", rr.metrics.epochTrainLoss[e]}}
                   .dump()
            << "\n";
    }
    lines << json{{"record", "final"},
                  {"steps", rr.metrics.steps},
                  {"valid_loss", rr.metrics.validLoss},
                  {"valid_ter", terJson(rr.metrics.validTer)},
                  {"genotype", genotypeJson(g)}}
                 .dump()
          << "\n";
    std::filesystem::create_directories(outDir);
    writeFileAtomic(outDir + "/retrain_metrics.jsonl", lines.str());
    out << "retrained " << rr.metrics.steps << " steps; valid loss "
        << formatDouble(rr.metrics.validLoss) << ", valid token error rate "
        << (rr.metrics.validTer.finite ? formatDouble(rr.metrics.validTer.value) : "inf")
        << "\n";
    out << "artifacts in " << outDir << "\n";
    return kExitOk;
  });
}

int cmdRandomSearch(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const RunConfig cfg = loadConfig(opts);
    const std::string outDir = resolveOutDir(opts, cfg);
    const Dataset data = generateDataset(cfg.task);
    const RandomSearchResult rs =
        runRandomSearch(cfg.space, cfg.hyper, cfg.trials, cfg.trialEpochs, data, cfg.seed);
    std::ostringstream lines;
    for (const TrialRecord& t : rs.trials) {
      lines << json{{"record", "trial"},
                    {"index", t.index},
                    {"valid_loss", t.validLoss},
                    {"valid_ter", terJson(t.validTer)},
                    {"genotype", genotypeJson(t.genotype)}}
                   .dump()
            << "\n";
    }
    lines << json{{"record", "selected"},
                  {"index", rs.bestIndex},
                  {"valid_loss", rs.trials[rs.bestIndex].validLoss},
                  {"valid_ter", terJson(rs.trials[rs.bestIndex].validTer)},
                  {"genotype", genotypeJson(rs.best())}}
                 .dump()
          << "\n";
    std::filesystem::create_directories(outDir);
    writeFileAtomic(outDir + "/random_search.jsonl", lines.str());
    writeFileAtomic(outDir + "/best_genotype.txt", rs.best().serialize());
    out << "random search: " << rs.trials.size() << " trials, best index " << rs.bestIndex
        << " with valid loss " << formatDouble(rs.trials[rs.bestIndex].validLoss) << "\n";
    printGenotype(out, rs.best());
    out << "artifacts in " << outDir << "\n";
    return kExitOk;
  });
}

int cmdEval(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const RunConfig cfg = loadConfig(opts);
    if (opts.checkpointPrefix.empty()) throw ConfigError("eval needs --checkpoint PREFIX");
    DerivedModel model = loadModelCheckpoint(opts.checkpointPrefix, cfg.space);
    const Dataset data = generateDataset(cfg.task);
    const EvalMetrics m = evaluateSplit(model, data.split(opts.split), cfg.hyper);
    out << opts.split << " loss " << formatDouble(m.loss) << "\n";
    out << opts.split << " token error rate "
        << (m.ter.finite ? formatDouble(m.ter.value) : "inf") << "\n";
    return kExitOk;
  });
}

int cmdCountSpace(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const SearchSpaceConfig space =
        opts.configPath.empty() ? SearchSpaceConfig{} : RunConfig::load(opts.configPath).space;
    out << countArchitectures(space) << "\n";
    return kExitOk;
  });
}

int cmdInspectAlpha(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    if (opts.logPath.empty()) throw ConfigError("inspect-alpha needs --log PATH");
    std::istringstream is(readFile(opts.logPath));
    std::string line;
    if (!std::getline(is, line) || line.rfind("step,block,slot,candidate_name", 0) != 0) {
      throw ConfigError("'" + opts.logPath + "' is not an alpha log (expected alpha_log.csv)");
    }
    struct Row {
      long long step;
      std::size_t block;
      std::string slot, candidate;
      double logit, weight;
    };
    std::vector<Row> rows;
    long long maxStep = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      Row r;
      std::string field;
      std::getline(ls, field, ',');
      r.step = std::stoll(field);
      std::getline(ls, field, ',');
      r.block = std::stoull(field);
      std::getline(ls, r.slot, ',');
      std::getline(ls, r.candidate, ',');
      std::getline(ls, field, ',');
      r.logit = std::stod(field);
      std::getline(ls, field, ',');
      r.weight = std::stod(field);
      maxStep = std::max(maxStep, r.step);
      rows.push_back(std::move(r));
    }
    if (rows.empty()) throw ConfigError("alpha log has no rows");

    out << "final step " << maxStep << "\n";
    // preserve file order per (block, slot); argmax logit with ties to the
    // first listed candidate, matching genotype derivation
    std::vector<std::pair<std::string, std::string>> groups;  // (key, best candidate)
    std::map<std::string, double> bestLogit;
    std::map<std::string, std::size_t> blockOf;
    std::map<std::string, std::string> slotOf;
    for (const Row& r : rows) {
      if (r.step != maxStep) continue;
      const std::string key = std::to_string(r.block) + "." + r.slot;
      if (!bestLogit.count(key)) {
        groups.emplace_back(key, r.candidate);
        bestLogit[key] = r.logit;
        blockOf[key] = r.block;
        slotOf[key] = r.slot;
        out << "block " << r.block << " " << r.slot << ":";
      }
      if (r.logit > bestLogit[key]) {
        bestLogit[key] = r.logit;
        for (auto& g : groups)
          if (g.first == key) g.second = r.candidate;
      }
      out << " " << r.candidate << "=" << formatDouble(r.weight);
      // peek: end the line when the next row starts a new group
      const Row* next = (&r == &rows.back()) ? nullptr : &r + 1;
      if (!next || next->step != maxStep ||
          std::to_string(next->block) + "." + next->slot != key) {
        out << "\n";
      }
    }
    out << "derived genotype:\n";
    std::map<std::size_t, std::map<std::string, std::string>> chosen;
    for (const auto& g : groups) chosen[blockOf[g.first]][slotOf[g.first]] = g.second;
    for (const auto& [block, slots] : chosen) {
      out << "block " << block << ": " << slots.at("mhsa") << " " << slots.at("conv") << " "
          << slots.at("ffn") << "\n";
    }
    return kExitOk;
  });
}

int cmdCompare(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const RunConfig cfg = loadConfig(opts);
    const std::string outDir = resolveOutDir(opts, cfg);
    const Dataset data = generateDataset(cfg.task);

    auto runMode = [&](bool forceOne, const std::string& tag) {
      RunConfig mode = cfg;
      mode.hyper.dss.forceOne = forceOne;
      const SearchResult sr = runSearch(mode.space, mode.hyper, mode.searchEpochs, data,
                                        mode.seed, outDir + "/" + tag, mode.hash());
      const RetrainResult rr = retrain(sr.genotype, mode.space, mode.hyper, mode.retrainEpochs,
                                       data, mode.seed, outDir + "/" + tag + "_retrain",
                                       mode.hash());
      std::size_t alphaUpdates = 0;
      for (const StepLogRow& r : sr.log.rows) alphaUpdates += r.alphaUpdated ? 1 : 0;
      return json{{"mode", tag},
                  {"alpha_updates", alphaUpdates},
                  {"search_steps", sr.steps},
                  {"genotype", genotypeJson(sr.genotype)},
                  {"retrain_valid_loss", rr.metrics.validLoss},
                  {"retrain_valid_ter", terJson(rr.metrics.validTer)}};
    };

    const json dss = runMode(false, "dss");
    const json oneStep = runMode(true, "one_step");
    const json report = {{"paired_seed", cfg.seed}, {"dss", dss}, {"one_step", oneStep}};
    std::filesystem::create_directories(outDir);
    writeFileAtomic(outDir + "/compare_report.json", report.dump(2) + "\n");
    out << "mode       alpha_updates  valid_loss  valid_ter\n";
    for (const json& j : {dss, oneStep}) {
      out << j["mode"].get<std::string>() << (j["mode"] == "dss" ? "        " : "   ")
          << j["alpha_updates"].get<std::size_t>() << "             "
          << formatDouble(j["retrain_valid_loss"].get<double>()) << "  "
          << (j["retrain_valid_ter"].is_string() ? std::string("inf")
                                                 : formatDouble(j["retrain_valid_ter"].get<double>()))
          << "\n";
    }
    out << "report in " << outDir << "/compare_report.json\n";
    return kExitOk;
  });
}

}  // namespace confsearch
