// SPDX-License-Identifier: Apache-2.0
#include "confsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "confsearch/ctc.hpp"
#include "confsearch/errors.hpp"
#include "confsearch/serialize.hpp"

namespace confsearch {

namespace {

// Acklam's rational approximation of the standard normal quantile; plenty
// for placing bucket edges.
double invPhi(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("invPhi: p in (0,1) required");
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    const double q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

// Planted labeling function, fixed per task seed and shared by all splits.
struct TaskFunction {
  std::vector<double> u;     // unit feature projection
  std::vector<double> taps;  // window taps, offsets -h..h, unit energy
  std::vector<double> edges; // bucket boundaries on the N(0,1) statistic

  static TaskFunction make(const SyntheticTaskSpec& spec) {
    TaskFunction f;
    Rng rng(deriveSeed(spec.seed, "function"));
    f.u.resize(spec.featureDim);
    double norm = 0.0;
    for (double& x : f.u) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : f.u) x /= norm;

    const long long h = static_cast<long long>(spec.window - 1) / 2;
    f.taps.assign(spec.window, 0.0);
    if (h == 0) {
      f.taps[0] = 1.0;
    } else {
      std::vector<long long> inner;
      for (long long j = -(h - 1); j <= h - 1; ++j)
        if (j % 2 == 0) inner.push_back(j);
      const double edgeEnergy = 0.25;
      const double innerEnergy = (1.0 - 2 * edgeEnergy) / static_cast<double>(inner.size());
      auto sign = [&rng]() { return rng.uniform() < 0.5 ? -1.0 : 1.0; };
      f.taps[0] = sign() * std::sqrt(edgeEnergy);                 // offset -h
      f.taps[spec.window - 1] = sign() * std::sqrt(edgeEnergy);   // offset +h
      for (long long j : inner) f.taps[static_cast<std::size_t>(j + h)] = sign() * std::sqrt(innerEnergy);
    }

    const std::size_t buckets = spec.vocab - 1;
    for (std::size_t i = 0; i + 1 < buckets; ++i) {
      f.edges.push_back(invPhi(static_cast<double>(i + 1) / static_cast<double>(buckets)));
    }
    return f;
  }

  // statistic over the window centered at frame t (full window must fit)
  double statistic(const std::vector<double>& clean, std::size_t F, std::size_t t) const {
    const long long h = static_cast<long long>(taps.size() - 1) / 2;
    double g = 0.0;
    for (long long j = -h; j <= h; ++j) {
      const double c = taps[static_cast<std::size_t>(j + h)];
      if (c == 0.0) continue;
      const std::size_t frame = static_cast<std::size_t>(static_cast<long long>(t) + j);
      double proj = 0.0;
      for (std::size_t k = 0; k < F; ++k) proj += u[k] * clean[frame * F + k];
      g += c * proj;
    }
    return g;
  }

  // token for statistic g, or 0 when g sits inside the margin of an edge
  int bucket(double g, double margin) const {
    for (double e : edges)
      if (std::abs(g - e) < margin) return 0;
    int tok = 1;
    for (double e : edges)
      if (g > e) ++tok;
    return tok;
  }
};

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (featureDim < 1) throw ConfigError("task: feature_dim must be >= 1");
  if (vocab < 2) throw ConfigError("task: vocab must be >= 2 (blank plus one token)");
  if (window < 1 || window % 2 == 0) throw ConfigError("task: window must be odd and >= 1");
  if (stride < 1) throw ConfigError("task: stride must be >= 1");
  if (maxFrames < minFrames) throw ConfigError("task: max_frames < min_frames");
  if (minFrames < window) {
    throw ConfigError("task: sequence range too short for the planted window (min_frames " +
                      std::to_string(minFrames) + " < window " + std::to_string(window) + ")");
  }
  if (noise < 0.0 || margin < 0.0) throw ConfigError("task: noise and margin must be >= 0");
  if (trainUtts < 1 || validUtts < 1 || testUtts < 1) {
    throw ConfigError("task: every split needs at least one utterance");
  }
}

const std::vector<Utterance>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (train|valid|test)");
}

namespace {

std::vector<Utterance> generateSplit(const SyntheticTaskSpec& spec, const TaskFunction& f,
                                     const std::string& tag, std::size_t count) {
  Rng rng(deriveSeed(spec.seed, tag));
  const std::size_t F = spec.featureDim;
  const long long h = static_cast<long long>(spec.window - 1) / 2;
  std::vector<Utterance> out;
  out.reserve(count);
  const double denom = std::sqrt(1.0 + spec.noise * spec.noise);
  for (std::size_t i = 0; i < count; ++i) {
    Utterance utt;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const std::size_t T =
          spec.minFrames + static_cast<std::size_t>(rng.below(spec.maxFrames - spec.minFrames + 1));
      std::vector<double> clean(T * F);
      for (double& x : clean) x = rng.normal();
      std::vector<int> labels;
      std::vector<std::pair<std::size_t, int>> alignment;
      for (std::size_t t = static_cast<std::size_t>(h);
           t + static_cast<std::size_t>(h) < T; t += spec.stride) {
        const int tok = f.bucket(f.statistic(clean, F, t), spec.margin);
        if (tok == 0) continue;  // margin filtered
        labels.push_back(tok);
        alignment.emplace_back(t, tok);
      }
      if (labels.empty() || ctcMinFrames(labels) > T) continue;
      std::vector<double> obs(T * F);
      for (std::size_t k = 0; k < obs.size(); ++k) {
        obs[k] = (clean[k] + spec.noise * rng.normal()) / denom;
      }
      utt.features = Tensor::fromVector({T, F}, std::move(obs));
      utt.labels = std::move(labels);
      utt.alignment = std::move(alignment);
      ok = true;
    }
    if (!ok) {
      throw ConfigError("task: failed to generate a feasible utterance after 100 attempts; "
                        "margin or frame range is too restrictive");
    }
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace

Dataset generateDataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  const TaskFunction f = TaskFunction::make(spec);
  Dataset d;
  d.spec = spec;
  d.train = generateSplit(spec, f, "train", spec.trainUtts);
  d.valid = generateSplit(spec, f, "valid", spec.validUtts);
  d.test = generateSplit(spec, f, "test", spec.testUtts);
  return d;
}

Tensor specAugment(const Tensor& features, std::size_t timeMasks, std::size_t freqMasks,
                   std::size_t maxTimeWidth, std::size_t maxFreqWidth, Rng& rng,
                   std::vector<std::pair<std::size_t, std::size_t>>* timeRanges,
                   std::vector<std::pair<std::size_t, std::size_t>>* freqRanges) {
  if (features.rank() != 2) throw std::invalid_argument("specAugment: features must be 2-d");
  const std::size_t T = features.rows(), F = features.cols();
  if (timeMasks > 0 && maxTimeWidth >= T) {
    throw std::invalid_argument("specAugment: max time-mask width must be < T");
  }
  if (freqMasks > 0 && maxFreqWidth >= F) {
    throw std::invalid_argument("specAugment: max freq-mask width must be < F");
  }
  Tensor out = Tensor::fromVector(features.shape(), features.values());
  for (std::size_t m = 0; m < timeMasks; ++m) {
    const std::size_t w = static_cast<std::size_t>(rng.below(maxTimeWidth + 1));
    const std::size_t start = static_cast<std::size_t>(rng.below(T));
    const std::size_t end = std::min(start + w, T);
    if (timeRanges) timeRanges->emplace_back(start, end);
    for (std::size_t t = start; t < end; ++t)
      for (std::size_t c = 0; c < F; ++c) out.mut(t * F + c) = 0.0;
  }
  for (std::size_t m = 0; m < freqMasks; ++m) {
    const std::size_t w = static_cast<std::size_t>(rng.below(maxFreqWidth + 1));
    const std::size_t start = static_cast<std::size_t>(rng.below(F));
    const std::size_t end = std::min(start + w, F);
    if (freqRanges) freqRanges->emplace_back(start, end);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = start; c < end; ++c) out.mut(t * F + c) = 0.0;
  }
  return out;
}

namespace {

void saveSplit(const std::string& dir, const std::string& tag,
               const std::vector<Utterance>& utts) {
  std::ostringstream index;
  std::vector<NamedTensor> blobs;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const std::string id = "utt" + std::to_string(i);
    index << id << " " << utts[i].features.rows();
    for (int tok : utts[i].labels) index << " " << tok;
    index << "\n";
    blobs.push_back({id + ".features", utts[i].features});
  }
  writeFileAtomic(dir + "/" + tag + ".utts", index.str());
  saveTensors(dir + "/" + tag + ".tensors", dir + "/" + tag + ".index", blobs);
}

std::vector<Utterance> loadSplit(const std::string& dir, const std::string& tag) {
  const auto blobs = loadTensors(dir + "/" + tag + ".tensors", dir + "/" + tag + ".index");
  std::vector<Utterance> out;
  std::istringstream is(readFile(dir + "/" + tag + ".utts"));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    std::size_t T = 0;
    if (!(ls >> id >> T)) throw IoError("malformed utterance line: " + line);
    Utterance utt;
    utt.features = findTensor(blobs, id + ".features");
    if (utt.features.rows() != T) throw IoError("frame count mismatch for " + id);
    int tok = 0;
    while (ls >> tok) utt.labels.push_back(tok);
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace

void saveDataset(const std::string& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  writeFileAtomic(dir + "/spec.cfg", serializeTaskSpec(data.spec));
  saveSplit(dir, "train", data.train);
  saveSplit(dir, "valid", data.valid);
  saveSplit(dir, "test", data.test);
}

Dataset loadDataset(const std::string& dir) {
  Dataset d;
  std::istringstream is(readFile(dir + "/spec.cfg"));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed spec line: " + line);
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    d.spec = parseTaskKey(d.spec, strip(key), strip(value));
  }
  d.train = loadSplit(dir, "train");
  d.valid = loadSplit(dir, "valid");
  d.test = loadSplit(dir, "test");
  return d;
}

std::string serializeTaskSpec(const SyntheticTaskSpec& s) {
  std::ostringstream os;
  os << "task.feature_dim = " << s.featureDim << "\n";
  os << "task.vocab = " << s.vocab << "\n";
  os << "task.min_frames = " << s.minFrames << "\n";
  os << "task.max_frames = " << s.maxFrames << "\n";
  os << "task.window = " << s.window << "\n";
  os << "task.stride = " << s.stride << "\n";
  os << "task.noise = " << s.noise << "\n";
  os << "task.margin = " << s.margin << "\n";
  os << "task.train_utts = " << s.trainUtts << "\n";
  os << "task.valid_utts = " << s.validUtts << "\n";
  os << "task.test_utts = " << s.testUtts << "\n";
  os << "task.seed = " << s.seed << "\n";
  os << "task.spec_augment = " << (s.specAugmentOn ? "true" : "false") << "\n";
  os << "task.time_masks = " << s.timeMasks << "\n";
  os << "task.freq_masks = " << s.freqMasks << "\n";
  os << "task.max_time_width = " << s.maxTimeWidth << "\n";
  os << "task.max_freq_width = " << s.maxFreqWidth << "\n";
  return os.str();
}

SyntheticTaskSpec parseTaskKey(SyntheticTaskSpec spec, const std::string& key,
                               const std::string& value) {
  const auto asU = [&](const char* what) -> std::size_t {
    try {
      return static_cast<std::size_t>(std::stoull(value));
    } catch (const std::exception&) {
      throw ConfigError(std::string("task: bad unsigned value for ") + what + ": " + value);
    }
  };
  const auto asD = [&](const char* what) -> double {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError(std::string("task: bad numeric value for ") + what + ": " + value);
    }
  };
  const auto asB = [&](const char* what) -> bool {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError(std::string("task: bad boolean for ") + what + ": " + value);
  };
  if (key == "task.feature_dim") spec.featureDim = asU(key.c_str());
  else if (key == "task.vocab") spec.vocab = asU(key.c_str());
  else if (key == "task.min_frames") spec.minFrames = asU(key.c_str());
  else if (key == "task.max_frames") spec.maxFrames = asU(key.c_str());
  else if (key == "task.window") spec.window = asU(key.c_str());
  else if (key == "task.stride") spec.stride = asU(key.c_str());
  else if (key == "task.noise") spec.noise = asD(key.c_str());
  else if (key == "task.margin") spec.margin = asD(key.c_str());
  else if (key == "task.train_utts") spec.trainUtts = asU(key.c_str());
  else if (key == "task.valid_utts") spec.validUtts = asU(key.c_str());
  else if (key == "task.test_utts") spec.testUtts = asU(key.c_str());
  else if (key == "task.seed") spec.seed = asU(key.c_str());
  else if (key == "task.spec_augment") spec.specAugmentOn = asB(key.c_str());
  else if (key == "task.time_masks") spec.timeMasks = asU(key.c_str());
  else if (key == "task.freq_masks") spec.freqMasks = asU(key.c_str());
  else if (key == "task.max_time_width") spec.maxTimeWidth = asU(key.c_str());
  else if (key == "task.max_freq_width") spec.maxFreqWidth = asU(key.c_str());
  else throw ConfigError("unknown task key '" + key + "'");
  return spec;
}

}  // namespace confsearch
