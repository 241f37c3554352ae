#pragma once

#include <set>
#include <string>
#include <vector>

#include "kw/chcgen.hpp"
#include "kw/solver.hpp"

namespace kw {

enum class QueryAnswer { Positive, Negative, Unknown };
std::string to_string(QueryAnswer a);

struct ExitQueryVerdict {
  QueryAnswer answer = QueryAnswer::Unknown;
  SolverAnswer evidence;
  int m = 0, n = 0;
  std::set<ExitStatus> ex;
};

enum class SafetyResult { Safe, Unsafe, Exhausted, Unknown };
std::string to_string(SafetyResult r);

struct MemSafeVerdict {
  SafetyResult result = SafetyResult::Unknown;
  int final_m = 0, final_n = 0;
  std::vector<ExitQueryVerdict> trace;
  std::string to_json() const;
};

struct BudgetExceededError : std::runtime_error {
  explicit BudgetExceededError(const std::string& m) : std::runtime_error(m) {}
};

// Compile, add the query, solve; unsat answers are positive instances.
ExitQueryVerdict exit_status_query(const Program& p, int m, int n,
                                   const std::set<ExitStatus>& ex,
                                   const SolverConfig& solver);

// The iterative verification loop: ask {E}, then {M} (grow m), then {O}
// (grow n) until a verdict or the limits run out.
MemSafeVerdict memsafe(const Program& p, int m0, int n0, int max_m, int max_n,
                       const SolverConfig& solver);

// Brute-force oracle for the clause system's minimal model: every node log of
// every truncation of every build over the bounded input space.
std::set<chc::FlatLog> enumerate_prefixes(const Program& p, int m, int n,
                                          int tree_size_bound,
                                          const std::vector<std::int64_t>& data_domain,
                                          long budget = 2000000);

// All bounded-size data trees of the given arity (used by the enumerator and
// the property tests).
std::vector<DataTree> all_trees(int arity, int max_nodes,
                                const std::vector<std::int64_t>& data_domain);

}  // namespace kw
