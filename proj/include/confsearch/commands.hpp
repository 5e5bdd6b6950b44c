// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace confsearch {

// Exit codes shared by all commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitIo = 4;

struct CliOptions {
  std::string configPath;
  std::string outOverride;  // --out beats CONFSEARCH_OUT beats out.dir
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> trials;
  bool forceOne = false;
  std::string genotypePath;      // retrain
  std::string checkpointPrefix;  // eval
  std::string split = "valid";   // eval
  std::string logPath;           // inspect-alpha
};

int cmdSearch(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmdRetrain(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmdRandomSearch(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmdEval(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmdCountSpace(const CliOptions& opts, std::ostream& out, std::ostream& err);
int cmdInspectAlpha(const CliOptions& opts, std::ostream& out, std::ostream& err);
// Runs the gated schedule and the plain one-step alternation from one
// config and writes a paired metrics report.
int cmdCompare(const CliOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace confsearch
