#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace kw::chc {

enum class Sort { Bool, Int };

struct Exp;
using ExpP = std::shared_ptr<const Exp>;

// Quantifier-free constraint over the flattened frame slots of named log
// variables. Two interpretations: concrete evaluation and SMT-LIB text.
struct Exp {
  enum class Kind {
    BoolLit, IntLit,
    Slot,              // logvar index + flat slot index
    Not, And, Or, Implies, Iff, Ite,
    Eq, Le, Lt,
    Add, Sub, Mul, Neg,
    Apply              // helper application to log variables
  };
  Kind kind;
  Sort sort = Sort::Bool;
  bool bval = false;
  std::int64_t ival = 0;
  int logvar = -1;
  int slot = -1;
  std::vector<ExpP> kids;
  std::string helper;
  std::vector<int> apply_logs;  // logvar indices passed to the helper
};

ExpP btrue();
ExpP bfalse();
ExpP blit(bool v);
ExpP ilit(std::int64_t v);
ExpP slot(int logvar, int s, Sort sort);
ExpP mk_not(ExpP e);
ExpP mk_and(std::vector<ExpP> es);   // flattens; drops trues; false dominates
ExpP mk_or(std::vector<ExpP> es);
ExpP mk_implies(ExpP a, ExpP b);
ExpP mk_iff(ExpP a, ExpP b);
ExpP mk_ite(ExpP c, ExpP t, ExpP e);
ExpP mk_eq(ExpP a, ExpP b);
ExpP mk_le(ExpP a, ExpP b);
ExpP mk_lt(ExpP a, ExpP b);
ExpP mk_add(ExpP a, ExpP b);
ExpP mk_sub(ExpP a, ExpP b);
ExpP mk_mul(ExpP a, ExpP b);
ExpP mk_neg(ExpP a);
ExpP mk_apply(std::string helper, std::vector<int> logs, Sort sort);

struct SortError : std::runtime_error {
  explicit SortError(const std::string& m) : std::runtime_error(m) {}
};

struct Helper {
  std::string name;
  int num_logs = 1;
  Sort sort = Sort::Bool;
  ExpP body;  // logvar i refers to the i-th formal log
};

// Concrete evaluation: logs are flat slot vectors (bools as 0/1).
using FlatLog = std::vector<std::int64_t>;

struct EvalContext {
  const std::vector<Helper>* helpers = nullptr;  // looked up by name
  std::vector<const FlatLog*> logs;              // per logvar
};

std::int64_t eval(const ExpP& e, const EvalContext& cx);

// ---------------------------------------------------------------------------
// SMT-LIB printing
// ---------------------------------------------------------------------------

// Slot metadata provider: names and SMT sorts for one log's slots.
struct SlotInfo {
  std::vector<std::string> names;       // per slot
  std::vector<std::string> smt_sorts;   // "Bool" / "Int" / datatype name
  std::vector<Sort> sorts;
};

// Prints `e` with slot references rendered as <prefix>_<slotname> for the
// prefix assigned to each logvar.
std::string to_smt(const ExpP& e, const std::vector<std::string>& log_prefixes,
                   const SlotInfo& info);

}  // namespace kw::chc
