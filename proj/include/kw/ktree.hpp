#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kw/interp.hpp"
#include "kw/lang.hpp"

namespace kw {

// ---------------------------------------------------------------------------
// Frame signature
// ---------------------------------------------------------------------------

enum class DirKind : std::uint8_t { Self, Up, Child };

struct Dir {
  DirKind kind = DirKind::Self;
  int child = 0;  // 1-based, valid iff kind == Child

  static Dir self() { return {DirKind::Self, 0}; }
  static Dir up() { return {DirKind::Up, 0}; }
  static Dir down(int j) { return {DirKind::Child, j}; }
  bool operator==(const Dir& o) const { return kind == o.kind && child == o.child; }
  bool operator!=(const Dir& o) const { return !(*this == o); }
};

struct Link {
  Dir dir;
  int index = 0;  // frame index in the referenced log
  bool operator==(const Link& o) const { return dir == o.dir && index == o.index; }
  bool operator!=(const Link& o) const { return !(*this == o); }
};

struct Event {
  enum class Kind : std::uint8_t {
    Nop, Err, Oom,
    FieldAssignNil,  // <pf := nil>
    FieldAssignPtr,  // <pf := p>
    PtrHere,         // <p := here>
    Rwd,             // rwd_i
    RwdP             // rwd_{i,p}
  };
  Kind kind = Kind::Nop;
  int field = -1;  // PF index
  int ptr = -1;    // PV index
  int pos = 0;     // frame index i of Rwd / RwdP

  static Event nop() { return {}; }
  static Event err() { return {Kind::Err, -1, -1, 0}; }
  static Event oom() { return {Kind::Oom, -1, -1, 0}; }
  static Event field_nil(int pf) { return {Kind::FieldAssignNil, pf, -1, 0}; }
  static Event field_ptr(int pf, int p) { return {Kind::FieldAssignPtr, pf, p, 0}; }
  static Event ptr_here(int p) { return {Kind::PtrHere, -1, p, 0}; }
  static Event rwd(int i) { return {Kind::Rwd, -1, -1, i}; }
  static Event rwd_p(int i, int p) { return {Kind::RwdP, -1, p, i}; }

  bool operator==(const Event& o) const {
    return kind == o.kind && field == o.field && ptr == o.ptr && pos == o.pos;
  }
  bool operator!=(const Event& o) const { return !(*this == o); }
  bool is_rwd() const { return kind == Kind::Rwd || kind == Kind::RwdP; }
  bool is_terminal() const { return kind == Kind::Err || kind == Kind::Oom; }
};

struct Frame {
  bool avail = true;
  bool active = false;
  std::int64_t val = 0;
  int pc = 0;
  std::vector<std::int64_t> d;       // |DV|
  std::vector<std::uint8_t> upd;     // |PV|
  std::vector<std::uint8_t> isnil;   // |PV|
  Event event;
  std::vector<std::uint8_t> active_child;  // k+m
  Link next{Dir::self(), 0};
  Link prev{Dir::self(), 0};

  bool operator==(const Frame& o) const;
  bool equal_mod_next(const Frame& o) const;
};

struct Log {
  std::vector<Frame> frames;  // n+1 entries, index 1-based via at()

  Frame& at(int i) { return frames.at(i - 1); }
  const Frame& at(int i) const { return frames.at(i - 1); }
  int size() const { return static_cast<int>(frames.size()); }
  // highest index with avail == false, or 0 when all available
  int top() const;
  bool operator==(const Log& o) const { return frames == o.frames; }
};

struct FrameId {
  int node = -1;  // backbone node id
  int index = 0;  // frame index, 1-based
  bool operator==(const FrameId& o) const { return node == o.node && index == o.index; }
  bool operator!=(const FrameId& o) const { return !(*this == o); }
};

// ---------------------------------------------------------------------------
// Backbone and knitted trees
// ---------------------------------------------------------------------------

struct Backbone {
  // node 0 is the root; children are dense, children[u][j-1] = id or -1
  std::vector<int> parent;                 // -1 for root
  std::vector<std::vector<int>> children;  // each of length k+m or empty (leaf)
  std::vector<std::vector<int>> path;      // child-index path from the root
  std::vector<bool> in_input;              // node was part of the input tree

  int size() const { return static_cast<int>(parent.size()); }
  bool is_leaf(int u) const { return children[u].empty(); }
  int child(int u, int j) const { return children[u].empty() ? -1 : children[u][j - 1]; }
  int child_index_of(int u) const;  // 1-based index of u within its parent
};

struct Params {
  int k = 1, m = 0, n = 1;
  int arity() const { return k + m; }
  int log_size() const { return n + 1; }
};

enum class ExitStatus { C, E, O, M, N };
std::string to_string(ExitStatus s);

struct KnittedTree {
  Params params;
  Backbone backbone;
  std::vector<Log> logs;  // per node

  const Log& log(int u) const { return logs.at(u); }
  Log& log(int u) { return logs.at(u); }

  // the lace in chronological order; position q (1-based) = lace_order[q-1]
  std::vector<FrameId> lace() const;
  FrameId lace_end() const;

  bool operator==(const KnittedTree& o) const;
};

struct MalformedLaceError : std::runtime_error {
  explicit MalformedLaceError(const std::string& m) : std::runtime_error(m) {}
};
struct NotFoundError : std::runtime_error {
  explicit NotFoundError(const std::string& m) : std::runtime_error(m) {}
};
struct NotOnLaceError : std::runtime_error {
  explicit NotOnLaceError(const std::string& m) : std::runtime_error(m) {}
};
struct InconsistentChildError : std::runtime_error {
  explicit InconsistentChildError(const std::string& m) : std::runtime_error(m) {}
};
struct FuelExhaustedError : std::runtime_error {
  explicit FuelExhaustedError(const std::string& m) : std::runtime_error(m) {}
};
struct NoStepApplicableError : std::runtime_error {
  explicit NoStepApplicableError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

// The smallest tree containing the input tree such that input nodes are
// internal, internal nodes have degree k+m, and there is at least one
// internal node.
Backbone backbone(const DataTree& t, int k, int m);

// Base-case labeling: first frames from the input tree, the root's second
// frame holding the initial configuration.
KnittedTree kt_init(const Program& p, const DataTree& t, int m, int n,
                    const std::map<std::string, std::int64_t>& data_seed);

// Runs the inductive labeling to completion (clean exit, error, out of
// memory, or label overflow). `fuel` bounds the number of pushed frames.
KnittedTree build_kt(const Program& p, const DataTree& t, int m, int n,
                     const std::map<std::string, std::int64_t>& data_seed,
                     long fuel = 1000000);

// One lace extension. Terminal when the lace has ended.
struct BuildStep {
  bool terminal = false;
  int target = -1;   // node receiving the new frame
  Frame frame;       // fully computed frame (next = sentinel)
};
BuildStep next_build_step(const Program& p, const KnittedTree& kt);

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

ExitStatus exit_status(const Program& prog, const KnittedTree& kt);

// Backward rewinding shortcut sequence for p from the given frame; empty when
// p points to the node holding `from`.
std::vector<FrameId> find_ptr(const Program& prog, const KnittedTree& kt, int p,
                              FrameId from);

// Claims 1 and 2: observable heap / pointer valuation of a prefix.
Heap heap_of(const Program& prog, const KnittedTree& kt);
std::map<std::string, NodeId> ptrvals_of(const Program& prog, const KnittedTree& kt);

// Decodes the represented execution (one configuration per completed
// statement, plus the initial one).
Execution exec_decode(const Program& prog, const KnittedTree& kt);

// ---------------------------------------------------------------------------
// Locality step functions (next frame up to its `next` field)
// ---------------------------------------------------------------------------

Frame step_internal(const Program& prog, const Params& ps, const Log& sigma);
Frame step_up(const Program& prog, const Params& ps, const Log& child, int j,
              const Log& parent);
Frame step_down(const Program& prog, const Params& ps, const Log& parent, int j,
                const Log& child);

// Parent-child log compatibility (concrete evaluation of the consistency
// predicate used by the clause system).
bool consistent_child(const Program& prog, const Params& ps, const Log& tau, int j,
                      const Log& sigma);

// ---------------------------------------------------------------------------
// Surgery
// ---------------------------------------------------------------------------

// Prefix of kt with the lace cut at `frame` (which must lie on the lace).
KnittedTree truncate(const KnittedTree& kt, FrameId frame);

// Replaces the j-th subtree of t1 in k1 with the subtree rooted at t2 in k2.
KnittedTree splice(const Program& prog, const KnittedTree& k1, int t1, int j,
                   const KnittedTree& k2, int t2);

// Structural well-formedness: stack discipline, lace linkage, terminal
// placement. Throws MalformedLaceError on violation.
void check_well_formed(const KnittedTree& kt);

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

std::string kt_to_json(const Program& prog, const KnittedTree& kt);
KnittedTree kt_from_json(const Program& prog, const std::string& text);
std::string kt_to_dot(const Program& prog, const KnittedTree& kt);

}  // namespace kw
