#pragma once

#include <optional>
#include <string>
#include <vector>

namespace kw {

enum class SolverStatus { Sat, Unsat, Unknown, Timeout, SolverError };
std::string to_string(SolverStatus s);

struct SolverAnswer {
  SolverStatus status = SolverStatus::SolverError;
  std::string raw;
  double wall_time_s = 0.0;
};

struct EngineNotFoundError : std::runtime_error {
  explicit EngineNotFoundError(const std::string& m) : std::runtime_error(m) {}
};

struct SolverConfig {
  std::string path;                   // executable
  std::vector<std::string> args;      // "{file}" is replaced by the input path
  bool use_stdin = false;             // pipe the text instead of a temp file
  double timeout_s = 60.0;

  // Resolution order: KW_SOLVER env, kw.toml, then auto-detection of known
  // engines on PATH (z3, eld, the bundled node wrapper).
  static std::optional<SolverConfig> resolve(const std::string& config_path = "");
};

// Runs the solver on the SMT-LIB text and classifies the first status token.
SolverAnswer solve(const std::string& smt_text, const SolverConfig& config);

}  // namespace kw
