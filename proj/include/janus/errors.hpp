#pragma once

#include <stdexcept>
#include <string>

namespace janus {

// Bad argument values (out-of-range stage, invalid k, inconsistent percentiles, ...).
struct domain_error : std::invalid_argument {
  explicit domain_error(const std::string& what) : std::invalid_argument(what) {}
};

// Operation applied to an object in the wrong state (e.g. remapping twice).
struct state_error : std::logic_error {
  explicit state_error(const std::string& what) : std::logic_error(what) {}
};

// Malformed input text; carries a 1-based line number when known.
struct parse_error : std::runtime_error {
  parse_error(const std::string& what, int line_no = 0)
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + what : what),
        line(line_no) {}
  int line = 0;
};

// Replay found no runnable instruction while work remained.
struct deadlock_error : std::runtime_error {
  explicit deadlock_error(const std::string& what) : std::runtime_error(what) {}
};

struct config_error : std::invalid_argument {
  explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace janus
