#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kw/lang.hpp"

namespace kw {

// Node ids are small integers; 0 is nil.
using NodeId = int;
inline constexpr NodeId kNil = 0;

// ---------------------------------------------------------------------------
// Input data trees
// ---------------------------------------------------------------------------

// A finite prefix-closed set of child-index paths with integer labels.
// Paths are dot-joined 1-based child indices; the root path is "".
struct DataTree {
  int arity = 1;
  std::map<std::vector<int>, std::int64_t> nodes;  // path -> val

  bool empty() const { return nodes.empty(); }
  bool contains(const std::vector<int>& path) const { return nodes.count(path) > 0; }
  void insert(const std::vector<int>& path, std::int64_t val) { nodes[path] = val; }

  // convenience: a singly linked list of the given values (arity 1)
  static DataTree list(const std::vector<std::int64_t>& vals);

  // JSON I/O per the documented schema
  static DataTree from_json(const std::string& text);
  std::string to_json() const;

  // checks prefix-closure and child indices within arity
  void check() const;
};

struct ArityViolationError : std::runtime_error {
  explicit ArityViolationError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// Heaps and configurations
// ---------------------------------------------------------------------------

struct Heap {
  // live non-nil nodes
  std::vector<NodeId> nodes;
  std::map<NodeId, std::int64_t> data;
  // pf[j][node] for each pointer field j
  std::vector<std::map<NodeId, NodeId>> pf;

  bool live(NodeId n) const;
  bool operator==(const Heap& o) const {
    return nodes == o.nodes && data == o.data && pf == o.pf;
  }
};

struct Configuration {
  Heap heap;
  std::map<std::string, NodeId> nu_p;
  std::map<std::string, std::int64_t> nu_d;
  int pc = 0;

  bool operator==(const Configuration& o) const {
    return heap == o.heap && nu_p == o.nu_p && nu_d == o.nu_d && pc == o.pc;
  }
};

enum class Outcome { Final, Error, OutOfFuel };

struct Execution {
  std::vector<Configuration> configs;
  Outcome outcome = Outcome::OutOfFuel;
  std::string error_reason;  // NilDereference / NilFree when outcome==Error
};

// step result
struct StepNext { Configuration config; };
struct StepFinal {};
struct StepError { std::string reason; };
using StepResult = std::variant<StepNext, StepFinal, StepError>;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Heap isomorphic to t (ids breadth-first from 1), p-hat at the root (nil for
// an empty tree), other pointers nil, nu_d = data_seed, pc = entry.
Configuration initial_config(const Program& p, const DataTree& t,
                             const std::map<std::string, std::int64_t>& data_seed);

StepResult step(const Program& p, const Configuration& c);

Execution run(const Program& p, const DataTree& t,
              const std::map<std::string, std::int64_t>& data_seed, int fuel);

// list rendering of a heap starting at `head` following field 0; for tests
std::vector<std::int64_t> read_list(const Heap& h, NodeId head, int max_len = 64);

}  // namespace kw
