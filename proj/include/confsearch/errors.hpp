// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace confsearch {

// Bad shapes, bad op arguments, malformed names. Exit code 2 at the CLI
// when raised while parsing configs or genotypes.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss during training. Carries the step at which it happened.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, long long step)
      : std::runtime_error(msg), step(step) {}
  long long step;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace confsearch
