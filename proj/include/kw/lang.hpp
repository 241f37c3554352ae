#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace kw {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(int line, int col, const std::string& msg)
      : std::runtime_error("parse error at " + std::to_string(line) + ":" +
                           std::to_string(col) + ": " + msg),
        line(line), col(col) {}
};

struct DuplicateLabelError : ParseError {
  DuplicateLabelError(int line, int col, const std::string& label)
      : ParseError(line, col, "duplicate label '" + label + "'") {}
};

struct UndeclaredIdentifierError : ParseError {
  UndeclaredIdentifierError(int line, int col, const std::string& id)
      : ParseError(line, col, "undeclared identifier '" + id + "'") {}
};

struct ArityMismatchError : std::runtime_error {
  explicit ArityMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Data expressions (linear integer arithmetic + booleans)
// ---------------------------------------------------------------------------

enum class DataSort { Int, Bool };

struct DataExp;
using DataExpP = std::shared_ptr<const DataExp>;

struct DataExp {
  enum class Kind {
    IntLit, BoolLit, Var,
    FieldRead,  // p->val; allowed only inside pre-desugar conditions
    Neg, Not,
    Add, Sub, Mul,
    Eq, Ne, Lt, Le, Gt, Ge,
    And, Or
  };
  Kind kind;
  std::int64_t ival = 0;   // IntLit
  bool bval = false;       // BoolLit
  std::string name;        // Var: data variable; FieldRead: pointer variable
  DataExpP lhs, rhs;

  static DataExpP intlit(std::int64_t v);
  static DataExpP boollit(bool v);
  static DataExpP var(std::string n);
  static DataExpP field_read(std::string p);
  static DataExpP unary(Kind k, DataExpP e);
  static DataExpP binary(Kind k, DataExpP l, DataExpP r);
};

// ---------------------------------------------------------------------------
// Conditions
// ---------------------------------------------------------------------------

// One atom of a (conjunctive) branch condition.
struct CondAtom {
  enum class Kind {
    PtrNil,      // p = nil (neg: p != nil)
    PtrEq,       // p = q   (neg: p != q)
    FieldPtrEq,  // p->pf = q / nil (pre-desugar only)
    DataRel      // boolean-sorted data expression (may contain FieldRead pre-desugar)
  };
  Kind kind;
  bool neg = false;
  std::string p, q, pf;  // as applicable; q empty in FieldPtrEq means nil
  DataExpP exp;          // DataRel
};

using Cond = std::vector<CondAtom>;  // conjunction, short-circuit left to right

// ---------------------------------------------------------------------------
// Statements
// ---------------------------------------------------------------------------

struct Stmt {
  enum class Kind {
    AssignNil,        // p := nil
    AssignPtr,        // p := q
    AssignFromField,  // p := q->pf
    AssignToFieldPtr, // p->pf := q
    AssignToFieldNil, // p->pf := nil
    WriteData,        // p->val := exp
    ReadData,         // d := p->val
    AssignData,       // d := exp
    AssignHeapCond,   // d := (heap condition)
    New, Free, Skip, Goto, Branch, Exit
  };
  Kind kind = Kind::Skip;
  std::string p, q, pf, d;
  DataExpP exp;
  CondAtom hc;   // AssignHeapCond
  Cond cond;     // Branch
};

struct LabeledStmt {
  std::string label;
  Stmt stmt;
  // Successor pcs (indices into Program::stmts). succ1 is the plain/then
  // successor, succ2 the else successor of a branch. -1 where absent.
  int succ1 = -1;
  int succ2 = -1;
};

// ---------------------------------------------------------------------------
// Program
// ---------------------------------------------------------------------------

struct Program {
  std::vector<std::string> pointer_vars;                    // first is p-hat
  std::vector<std::pair<std::string, DataSort>> data_vars;
  std::vector<std::string> pointer_fields;                  // length k
  std::string data_field = "val";
  std::vector<LabeledStmt> stmts;                           // pc = index
  std::map<std::string, int> label_to_pc;

  int entry() const { return 0; }
  int k() const { return static_cast<int>(pointer_fields.size()); }
  int num_pcs() const { return static_cast<int>(stmts.size()); }

  int pv_index(const std::string& name) const;   // -1 if absent
  int dv_index(const std::string& name) const;
  int pf_index(const std::string& name) const;
  DataSort dv_sort(int idx) const { return data_vars[idx].second; }

  const Stmt& at(int pc) const { return stmts.at(pc).stmt; }
  bool is_exit(int pc) const { return stmts.at(pc).stmt.kind == Stmt::Kind::Exit; }
};

struct Diagnostic {
  std::string rule;   // e.g. "MissingExit", "UndeclaredIdentifier"
  std::string label;  // offending label, may be empty
  std::string detail;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Parses the .kw concrete syntax (see docs/lang.md). Block structure is
// flattened into labeled statements with explicit successors.
Program parse_program(const std::string& source);

// Returns an empty list iff the program satisfies all validity rules.
std::vector<Diagnostic> validate(const Program& p);

// Rewrites compound/heap conditions so that every remaining branch condition
// is p=q, !(p=q), or a relation over data variables. Fresh auxiliaries are
// prefixed with "__".
Program desugar(const Program& p);

// succ(pc) for one-successor statements, succ(pc, b) for branches, nullopt
// for exit. Throws ArityMismatchError when `branch` is supplied for a
// non-branch statement (or missing for a branch).
std::optional<int> succ(const Program& p, int pc, std::optional<bool> branch = std::nullopt);

// Emits the normalized .kw form; parse(pretty(parse(s))) == parse(s).
std::string pretty(const Program& p);

bool operator==(const Program& a, const Program& b);

// FNV-1a over the pretty-printed program, as a hex string.
std::string program_hash(const Program& p);

// Sort inference for a data expression; throws on ill-sorted input.
DataSort sort_of(const DataExpP& e, const Program& p);

}  // namespace kw
