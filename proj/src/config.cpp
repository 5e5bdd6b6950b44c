// SPDX-License-Identifier: Apache-2.0
#include "confsearch/config.hpp"

#include <fstream>
#include <sstream>

#include "confsearch/errors.hpp"

namespace confsearch {

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string joinOps(const std::vector<std::string>& ops) {
  std::string out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (i) out += ",";
    out += ops[i];
  }
  return out;
}

std::vector<std::string> splitOps(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream is(value);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t parseU(const std::string& key, const std::string& value) {
  try {
    return static_cast<std::size_t>(std::stoull(value));
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned value for " + key + ": '" + value + "'");
  }
}

double parseD(const std::string& key, const std::string& value) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + value + "'");
  }
}

bool parseB(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "' (true|false)");
}

std::string fmtD(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (strip(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: '" + line + "'");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));

    if (key == "space.blocks") cfg.space.numBlocks = parseU(key, value);
    else if (key == "space.d_model") cfg.space.dModel = parseU(key, value);
    else if (key == "space.mhsa_ops") cfg.space.mhsaOps = splitOps(value);
    else if (key == "space.conv_ops") cfg.space.convOps = splitOps(value);
    else if (key == "space.ffn_ops") cfg.space.ffnOps = splitOps(value);
    else if (key == "noam.warmup_steps") cfg.hyper.noam.warmupSteps =
        static_cast<long long>(parseU(key, value));
    else if (key == "noam.lr_scale") cfg.hyper.noam.lrScale = parseD(key, value);
    else if (key == "dss.beta") cfg.hyper.dss.beta = parseD(key, value);
    else if (key == "dss.force_one") cfg.hyper.dss.forceOne = parseB(key, value);
    else if (key == "objective.label_smoothing") cfg.hyper.labelSmoothing = parseD(key, value);
    else if (key == "train.alpha_lr") cfg.hyper.alphaLr = parseD(key, value);
    else if (key == "train.clip_norm") cfg.hyper.clipNorm = parseD(key, value);
    else if (key == "train.dropout") cfg.hyper.dropout = parseD(key, value);
    else if (key == "train.batch_size") cfg.hyper.batchSize = parseU(key, value);
    else if (key == "train.relative_bias") cfg.hyper.relativeBias = parseB(key, value);
    else if (key == "train.search_epochs") cfg.searchEpochs = parseU(key, value);
    else if (key == "train.retrain_epochs") cfg.retrainEpochs = parseU(key, value);
    else if (key == "train.trial_epochs") cfg.trialEpochs = parseU(key, value);
    else if (key == "train.trials") cfg.trials = parseU(key, value);
    else if (key == "train.seed") cfg.seed = parseU(key, value);
    else if (key == "out.dir") cfg.outDir = value;
    else if (key.rfind("task.", 0) == 0) cfg.task = parseTaskKey(cfg.task, key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  // single source for the shared dimensions
  cfg.hyper.noam.dModel = cfg.space.dModel;
  cfg.hyper.dss.warmupSteps = cfg.hyper.noam.warmupSteps;
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "space.blocks = " << space.numBlocks << "\n";
  os << "space.d_model = " << space.dModel << "\n";
  os << "space.mhsa_ops = " << joinOps(space.mhsaOps) << "\n";
  os << "space.conv_ops = " << joinOps(space.convOps) << "\n";
  os << "space.ffn_ops = " << joinOps(space.ffnOps) << "\n";
  os << "noam.warmup_steps = " << hyper.noam.warmupSteps << "\n";
  os << "noam.lr_scale = " << fmtD(hyper.noam.lrScale) << "\n";
  os << "dss.beta = " << fmtD(hyper.dss.beta) << "\n";
  os << "dss.force_one = " << (hyper.dss.forceOne ? "true" : "false") << "\n";
  os << "objective.label_smoothing = " << fmtD(hyper.labelSmoothing) << "\n";
  os << "train.alpha_lr = " << fmtD(hyper.alphaLr) << "\n";
  os << "train.clip_norm = " << fmtD(hyper.clipNorm) << "\n";
  os << "train.dropout = " << fmtD(hyper.dropout) << "\n";
  os << "train.batch_size = " << hyper.batchSize << "\n";
  os << "train.relative_bias = " << (hyper.relativeBias ? "true" : "false") << "\n";
  os << "train.search_epochs = " << searchEpochs << "\n";
  os << "train.retrain_epochs = " << retrainEpochs << "\n";
  os << "train.trial_epochs = " << trialEpochs << "\n";
  os << "train.trials = " << trials << "\n";
  os << "train.seed = " << seed << "\n";
  os << serializeTaskSpec(task);
  os << "out.dir = " << outDir << "\n";
  return os.str();
}

std::string RunConfig::hash() const {
  const std::uint64_t h = hashString(serialize());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::validate() const {
  space.validate();
  task.validate();
  if (hyper.noam.warmupSteps < 1) throw ConfigError("noam.warmup_steps must be >= 1");
  if (hyper.noam.lrScale <= 0.0) throw ConfigError("noam.lr_scale must be positive");
  if (hyper.dss.beta <= 0.0) throw ConfigError("dss.beta must be positive");
  if (hyper.batchSize < 1) throw ConfigError("train.batch_size must be >= 1");
  if (hyper.dropout < 0.0 || hyper.dropout >= 1.0) {
    throw ConfigError("train.dropout must be in [0, 1)");
  }
  if (trials < 1) throw ConfigError("train.trials must be >= 1");
  if (task.vocab < 2) throw ConfigError("task.vocab must be >= 2");
}

}  // namespace confsearch
