#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kw/constraint.hpp"
#include "kw/ktree.hpp"
#include "kw/lang.hpp"

namespace kw {

// ---------------------------------------------------------------------------
// Flat log layout shared by evaluation and emission
// ---------------------------------------------------------------------------

struct LogLayout {
  Params params;
  int num_pv = 0, num_dv = 0;
  std::vector<DataSort> dv_sorts;
  std::vector<std::string> pv_names, dv_names;
  int frame_size = 0;

  // per-frame field offsets
  int off_avail = 0, off_active = 1, off_val = 2, off_pc = 3, off_d = 4;
  int off_upd() const { return off_d + num_dv; }
  int off_isnil() const { return off_upd() + num_pv; }
  int off_event() const { return off_isnil() + num_pv; }
  int off_ac() const { return off_event() + 1; }
  int off_next_dir() const { return off_ac() + params.arity(); }
  int off_next_idx() const { return off_next_dir() + 1; }
  int off_prev_dir() const { return off_next_idx() + 1; }
  int off_prev_idx() const { return off_prev_dir() + 1; }

  int slots() const { return params.log_size() * frame_size; }
  int slot(int frame, int off) const { return (frame - 1) * frame_size + off; }

  // Dir encoding: self = 0, up = 1, child j = 1 + j
  static std::int64_t enc_dir(const Dir& d);

  // Event encoding (dense enum over the program's event alphabet)
  std::int64_t enc_event(const Event& e) const;
  int event_count() const;
  int rwd_base() const;   // first Rwd code (subscript 1)
  int rwdp_base() const;  // first RwdP code

  chc::Sort slot_sort(int s) const;
  std::string slot_name(int s) const;
  chc::SlotInfo slot_info(bool datatype_enums = false) const;

  chc::FlatLog flatten(const Log& log) const;
  Log unflatten(const chc::FlatLog& flat) const;

  static LogLayout make(const Program& p, const Params& ps);
};

// ---------------------------------------------------------------------------
// Clauses
// ---------------------------------------------------------------------------

struct ChcClause {
  std::string name;
  int num_logvars = 0;
  int head_logvar = -1;                // -1: false (query)
  std::vector<int> body_logvars;       // Lab(...) atoms
  chc::ExpP constraint;
};

struct ChcSystem {
  Params params;
  LogLayout layout;
  std::vector<chc::Helper> helpers;
  std::vector<ChcClause> clauses;
  bool has_query = false;
  std::set<ExitStatus> query_statuses;
  std::string prog_hash;
  std::vector<int> exit_pcs;  // pcs whose statement is exit
};

struct QueryAlreadyPresentError : std::runtime_error {
  explicit QueryAlreadyPresentError(const std::string& m) : std::runtime_error(m) {}
};
struct UnsupportedStatementError : std::runtime_error {
  explicit UnsupportedStatementError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Emits the clause system over the single relation Lab for a desugared
// program: non-root/root initialization, internal steps, and the
// parent/child step families guarded by the consistency predicate.
ChcSystem compile_system(const Program& p, int m, int n);

// Appends the query: false <- Lab(s) /\ label_exit(s) in Ex.
ChcSystem add_exit_query(ChcSystem s, const std::set<ExitStatus>& ex);

// Concrete truth of the clause's constraint under a binding of its log
// variables. With `lab` given, returns the full implication value
// (bodies-in-lab /\ constraint => head-in-lab).
bool eval_clause_constraint(const ChcSystem& s, const ChcClause& c,
                            const std::vector<const chc::FlatLog*>& binding);
bool eval_clause(const ChcSystem& s, const ChcClause& c,
                 const std::vector<const chc::FlatLog*>& binding,
                 const std::set<chc::FlatLog>* lab = nullptr);

struct EmitOptions {
  bool datatype_enums = false;  // pc and direction slots as declared datatypes
};

std::string emit_smtlib(const ChcSystem& s, const EmitOptions& opts = {});
std::string emit_meta_json(const ChcSystem& s);

// Evaluation-side views of the consistency and step predicates, used by the
// oracle tests to check builder output against the clause templates.
chc::ExpP predicate_consistent_child(const ChcSystem& s, const Program& p, int j);
// new frame lands at index b of the head log; source top at index a
chc::ExpP predicate_psi_internal(const ChcSystem& s, const Program& p, int b);
chc::ExpP predicate_psi_up(const ChcSystem& s, const Program& p, int j, int a, int b);
chc::ExpP predicate_psi_down(const ChcSystem& s, const Program& p, int j, int a, int b);

}  // namespace kw
