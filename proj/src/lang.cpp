#include "kw/lang.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace kw {

DataExpP DataExp::intlit(std::int64_t v) {
  auto e = std::make_shared<DataExp>();
  e->kind = Kind::IntLit;
  e->ival = v;
  return e;
}
DataExpP DataExp::boollit(bool v) {
  auto e = std::make_shared<DataExp>();
  e->kind = Kind::BoolLit;
  e->bval = v;
  return e;
}
DataExpP DataExp::var(std::string n) {
  auto e = std::make_shared<DataExp>();
  e->kind = Kind::Var;
  e->name = std::move(n);
  return e;
}
DataExpP DataExp::field_read(std::string p) {
  auto e = std::make_shared<DataExp>();
  e->kind = Kind::FieldRead;
  e->name = std::move(p);
  return e;
}
DataExpP DataExp::unary(Kind k, DataExpP x) {
  auto e = std::make_shared<DataExp>();
  e->kind = k;
  e->lhs = std::move(x);
  return e;
}
DataExpP DataExp::binary(Kind k, DataExpP l, DataExpP r) {
  auto e = std::make_shared<DataExp>();
  e->kind = k;
  e->lhs = std::move(l);
  e->rhs = std::move(r);
  return e;
}

int Program::pv_index(const std::string& name) const {
  for (size_t i = 0; i < pointer_vars.size(); ++i)
    if (pointer_vars[i] == name) return static_cast<int>(i);
  return -1;
}
int Program::dv_index(const std::string& name) const {
  for (size_t i = 0; i < data_vars.size(); ++i)
    if (data_vars[i].first == name) return static_cast<int>(i);
  return -1;
}
int Program::pf_index(const std::string& name) const {
  for (size_t i = 0; i < pointer_fields.size(); ++i)
    if (pointer_fields[i] == name) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

namespace {

struct Token {
  enum class Kind { Ident, Number, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  std::int64_t value = 0;
  int line = 0, col = 0;
};

struct Lexer {
  const std::string& src;
  size_t pos = 0;
  int line = 1, col = 1;
  Token cur;

  explicit Lexer(const std::string& s) : src(s) { advance(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(cur.line, cur.col, msg);
  }

  struct State { size_t pos; int line, col; Token cur; };
  State save() const { return {pos, line, col, cur}; }
  void restore(const State& s) { pos = s.pos; line = s.line; col = s.col; cur = s.cur; }

  void skip_ws() {
    while (pos < src.size()) {
      char c = src[pos];
      if (c == '\n') { ++line; col = 1; ++pos; }
      else if (std::isspace(static_cast<unsigned char>(c))) { ++col; ++pos; }
      else if (c == '#' || (c == '/' && pos + 1 < src.size() && src[pos + 1] == '/')) {
        while (pos < src.size() && src[pos] != '\n') ++pos;
      } else break;
    }
  }

  void advance() {
    skip_ws();
    cur = Token{};
    cur.line = line;
    cur.col = col;
    if (pos >= src.size()) { cur.kind = Token::Kind::End; return; }
    char c = src[pos];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_' ||
              src[pos] == '.')) {
        ++pos; ++col;
      }
      cur.kind = Token::Kind::Ident;
      cur.text = src.substr(start, pos - start);
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos;
      while (pos < src.size() && (std::isalnum(static_cast<unsigned char>(src[pos])) ||
                                  src[pos] == '.' || src[pos] == '_')) {
        ++pos; ++col;
      }
      cur.text = src.substr(start, pos - start);
      cur.kind = Token::Kind::Number;
      bool pure = std::all_of(cur.text.begin(), cur.text.end(), [](char ch) {
        return std::isdigit(static_cast<unsigned char>(ch));
      });
      if (pure) cur.value = std::stoll(cur.text);
      return;
    }
    static const char* two[] = {":=", "->", "!=", "<=", ">=", "&&", "||"};
    for (const char* t : two) {
      if (src.compare(pos, 2, t) == 0) {
        cur.kind = Token::Kind::Punct;
        cur.text = t;
        pos += 2; col += 2;
        return;
      }
    }
    cur.kind = Token::Kind::Punct;
    cur.text = std::string(1, c);
    ++pos; ++col;
  }

  bool is_punct(const std::string& t) const {
    return cur.kind == Token::Kind::Punct && cur.text == t;
  }
  bool is_ident(const std::string& t) const {
    return cur.kind == Token::Kind::Ident && cur.text == t;
  }
  void expect_punct(const std::string& t) {
    if (!is_punct(t)) fail("expected '" + t + "', got '" + cur.text + "'");
    advance();
  }
  void expect_ident(const std::string& t) {
    if (!is_ident(t)) fail("expected '" + t + "', got '" + cur.text + "'");
    advance();
  }
  std::string take_ident(const std::string& what) {
    if (cur.kind != Token::Kind::Ident) fail("expected " + what);
    std::string s = cur.text;
    advance();
    return s;
  }
};

bool is_keyword(const std::string& s) {
  static const char* kws[] = {"pointer", "int",  "bool", "field", "nil",   "new",
                              "free",    "skip", "exit", "goto",  "if",    "then",
                              "else",    "fi",   "while", "do",   "od",    "true",
                              "false"};
  for (const char* k : kws)
    if (s == k) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
  Lexer lx;
  Program prog;

  struct Raw {
    std::string label;
    Stmt stmt;
    std::string succ1, succ2;  // symbolic successors; empty = unset
    int line = 0, col = 0;
  };
  std::vector<Raw> raws;

  // a dangling successor slot awaiting the label of the following statement
  struct Slot { int raw; int which; };

  explicit Parser(const std::string& src) : lx(src) {}

  bool declared(const std::string& id) const {
    return prog.pv_index(id) >= 0 || prog.dv_index(id) >= 0 || prog.pf_index(id) >= 0;
  }
  bool is_pv(const std::string& id) const { return prog.pv_index(id) >= 0; }
  bool is_dv(const std::string& id) const { return prog.dv_index(id) >= 0; }
  bool is_pf(const std::string& id) const { return prog.pf_index(id) >= 0; }

  void require_pv(const std::string& id) {
    if (!is_pv(id)) throw UndeclaredIdentifierError(lx.cur.line, lx.cur.col, id);
  }
  void require_dv(const std::string& id) {
    if (!is_dv(id)) throw UndeclaredIdentifierError(lx.cur.line, lx.cur.col, id);
  }
  void require_pf(const std::string& id) {
    if (!is_pf(id)) throw UndeclaredIdentifierError(lx.cur.line, lx.cur.col, id);
  }

  void parse_decls() {
    for (;;) {
      if (lx.is_ident("pointer")) {
        lx.advance();
        do {
          std::string id = lx.take_ident("pointer variable name");
          if (declared(id)) lx.fail("redeclared identifier '" + id + "'");
          prog.pointer_vars.push_back(id);
        } while (lx.is_punct(",") && (lx.advance(), true));
        lx.expect_punct(";");
      } else if (lx.is_ident("int") || lx.is_ident("bool")) {
        DataSort s = lx.is_ident("int") ? DataSort::Int : DataSort::Bool;
        lx.advance();
        do {
          std::string id = lx.take_ident("data variable name");
          if (declared(id)) lx.fail("redeclared identifier '" + id + "'");
          prog.data_vars.emplace_back(id, s);
        } while (lx.is_punct(",") && (lx.advance(), true));
        lx.expect_punct(";");
      } else if (lx.is_ident("field")) {
        lx.advance();
        do {
          std::string id = lx.take_ident("pointer field name");
          if (declared(id)) lx.fail("redeclared identifier '" + id + "'");
          prog.pointer_fields.push_back(id);
        } while (lx.is_punct(",") && (lx.advance(), true));
        lx.expect_punct(";");
      } else {
        break;
      }
    }
    if (prog.pointer_vars.empty()) lx.fail("no pointer variables declared");
    if (prog.pointer_fields.empty()) prog.pointer_fields.push_back("next");
  }

  // --- data expressions ------------------------------------------------------

  DataExpP parse_exp() { return parse_or(); }
  DataExpP parse_or() {
    DataExpP e = parse_and_exp();
    while (lx.is_punct("||")) {
      lx.advance();
      e = DataExp::binary(DataExp::Kind::Or, e, parse_and_exp());
    }
    return e;
  }
  DataExpP parse_and_exp() {
    DataExpP e = parse_rel();
    while (lx.is_punct("&&")) {
      lx.advance();
      e = DataExp::binary(DataExp::Kind::And, e, parse_rel());
    }
    return e;
  }
  DataExpP parse_rel() {
    DataExpP e = parse_add();
    static const std::pair<const char*, DataExp::Kind> rels[] = {
        {"=", DataExp::Kind::Eq},  {"!=", DataExp::Kind::Ne},
        {"<=", DataExp::Kind::Le}, {"<", DataExp::Kind::Lt},
        {">=", DataExp::Kind::Ge}, {">", DataExp::Kind::Gt}};
    for (auto& [t, k] : rels) {
      if (lx.is_punct(t)) {
        lx.advance();
        return DataExp::binary(k, e, parse_add());
      }
    }
    return e;
  }
  DataExpP parse_add() {
    DataExpP e = parse_mul();
    while (lx.is_punct("+") || lx.is_punct("-")) {
      auto k = lx.is_punct("+") ? DataExp::Kind::Add : DataExp::Kind::Sub;
      lx.advance();
      e = DataExp::binary(k, e, parse_mul());
    }
    return e;
  }
  DataExpP parse_mul() {
    DataExpP e = parse_unary_exp();
    while (lx.is_punct("*")) {
      lx.advance();
      e = DataExp::binary(DataExp::Kind::Mul, e, parse_unary_exp());
    }
    return e;
  }
  DataExpP parse_unary_exp() {
    if (lx.is_punct("!")) {
      lx.advance();
      return DataExp::unary(DataExp::Kind::Not, parse_unary_exp());
    }
    if (lx.is_punct("-")) {
      lx.advance();
      return DataExp::unary(DataExp::Kind::Neg, parse_unary_exp());
    }
    return parse_primary();
  }
  DataExpP parse_primary() {
    if (lx.is_punct("(")) {
      lx.advance();
      DataExpP e = parse_exp();
      lx.expect_punct(")");
      return e;
    }
    if (lx.cur.kind == Token::Kind::Number) {
      std::int64_t v = lx.cur.value;
      lx.advance();
      return DataExp::intlit(v);
    }
    if (lx.is_ident("true") || lx.is_ident("false")) {
      bool v = lx.is_ident("true");
      lx.advance();
      return DataExp::boollit(v);
    }
    if (lx.cur.kind == Token::Kind::Ident) {
      std::string id = lx.cur.text;
      if (is_pv(id)) {
        lx.advance();
        lx.expect_punct("->");
        std::string f = lx.take_ident("field name");
        if (f != prog.data_field)
          lx.fail("expected data field '" + prog.data_field + "' in expression");
        return DataExp::field_read(id);
      }
      require_dv(id);
      lx.advance();
      return DataExp::var(id);
    }
    lx.fail("expected expression");
  }

  // --- conditions ------------------------------------------------------------

  CondAtom finish_ptr_atom(const std::string& p, bool neg) {
    CondAtom a;
    a.p = p;
    a.neg = neg;
    if (lx.is_ident("nil")) {
      lx.advance();
      a.kind = CondAtom::Kind::PtrNil;
    } else {
      a.kind = CondAtom::Kind::PtrEq;
      a.q = lx.take_ident("pointer variable or nil");
      require_pv(a.q);
    }
    return a;
  }

  CondAtom parse_atom() {
    // !(p = q) form
    if (lx.is_punct("!")) {
      auto st = lx.save();
      lx.advance();
      if (lx.is_punct("(")) {
        lx.advance();
        if (lx.cur.kind == Token::Kind::Ident && is_pv(lx.cur.text)) {
          std::string p = lx.cur.text;
          lx.advance();
          if (lx.is_punct("=")) {
            lx.advance();
            CondAtom a = finish_ptr_atom(p, true);
            lx.expect_punct(")");
            return a;
          }
        }
      }
      lx.restore(st);
    }
    if (lx.cur.kind == Token::Kind::Ident && is_pv(lx.cur.text)) {
      std::string p = lx.cur.text;
      lx.advance();
      if (lx.is_punct("=") || lx.is_punct("!=")) {
        bool ne = lx.is_punct("!=");
        lx.advance();
        return finish_ptr_atom(p, ne);
      }
      if (lx.is_punct("->")) {
        lx.advance();
        std::string f = lx.take_ident("field name");
        if (f == prog.data_field) {
          DataExpP l = DataExp::field_read(p);
          static const std::pair<const char*, DataExp::Kind> rels[] = {
              {"=", DataExp::Kind::Eq},  {"!=", DataExp::Kind::Ne},
              {"<=", DataExp::Kind::Le}, {"<", DataExp::Kind::Lt},
              {">=", DataExp::Kind::Ge}, {">", DataExp::Kind::Gt}};
          for (auto& [t, k] : rels) {
            if (lx.is_punct(t)) {
              lx.advance();
              CondAtom d;
              d.kind = CondAtom::Kind::DataRel;
              d.exp = DataExp::binary(k, l, parse_add());
              return d;
            }
          }
          lx.fail("expected relation after field read");
        }
        require_pf(f);
        CondAtom fa;
        fa.kind = CondAtom::Kind::FieldPtrEq;
        fa.p = p;
        fa.pf = f;
        if (lx.is_punct("=")) fa.neg = false;
        else if (lx.is_punct("!=")) fa.neg = true;
        else lx.fail("expected '=' or '!=' after field");
        lx.advance();
        if (lx.is_ident("nil")) { lx.advance(); fa.q.clear(); }
        else { fa.q = lx.take_ident("pointer variable or nil"); require_pv(fa.q); }
        return fa;
      }
      lx.fail("pointer variable '" + p + "' used outside a pointer comparison");
    }
    CondAtom d;
    d.kind = CondAtom::Kind::DataRel;
    d.exp = parse_exp();
    return d;
  }

  Cond parse_cond() {
    Cond c;
    c.push_back(parse_atom());
    while (lx.is_punct("&&")) {
      lx.advance();
      c.push_back(parse_atom());
    }
    return c;
  }

  // --- statements ------------------------------------------------------------

  std::string parse_label() {
    if (lx.cur.kind != Token::Kind::Number && lx.cur.kind != Token::Kind::Ident)
      lx.fail("expected statement label");
    if (lx.cur.kind == Token::Kind::Ident && is_keyword(lx.cur.text))
      lx.fail("expected statement label, got keyword '" + lx.cur.text + "'");
    std::string lab = lx.cur.text;
    lx.advance();
    lx.expect_punct(":");
    return lab;
  }

  std::string take_label_ref() {
    if (lx.cur.kind != Token::Kind::Number && lx.cur.kind != Token::Kind::Ident)
      lx.fail("expected label");
    std::string s = lx.cur.text;
    lx.advance();
    return s;
  }

  int add_raw(Raw r) {
    raws.push_back(std::move(r));
    return static_cast<int>(raws.size()) - 1;
  }

  void patch(const std::vector<Slot>& slots, const std::string& target) {
    for (const Slot& s : slots) {
      if (s.which == 1) raws[s.raw].succ1 = target;
      else raws[s.raw].succ2 = target;
    }
  }

  // Parses one labeled statement (possibly a block); returns its first label
  // and the dangling successor slots flowing out of it.
  std::pair<std::string, std::vector<Slot>> parse_stmt() {
    int line = lx.cur.line, col = lx.cur.col;
    std::string lab = parse_label();
    if (lx.is_ident("if")) return {lab, parse_if(lab, line, col)};
    if (lx.is_ident("while")) return {lab, parse_while(lab, line, col)};

    Raw r;
    r.label = lab;
    r.line = line;
    r.col = col;
    std::string goto_target;
    r.stmt = parse_simple_stmt(goto_target);
    std::vector<Slot> dangling;
    if (r.stmt.kind == Stmt::Kind::Goto) {
      r.succ1 = goto_target;
    } else if (r.stmt.kind != Stmt::Kind::Exit) {
      if (lx.is_ident("goto")) {  // explicit successor suffix
        lx.advance();
        r.succ1 = take_label_ref();
      } else {
        dangling.push_back(Slot{static_cast<int>(raws.size()), 1});
      }
    }
    lx.expect_punct(";");
    add_raw(std::move(r));
    return {lab, dangling};
  }

  // Parses a `;`-terminated sequence of statements until a closing keyword.
  // Returns (label of first statement, dangling slots of the last one).
  std::pair<std::string, std::vector<Slot>> parse_block(
      std::initializer_list<const char*> closers) {
    std::string first;
    std::vector<Slot> dangling;
    bool any = false;
    for (;;) {
      bool closed = false;
      for (const char* c : closers)
        if (lx.is_ident(c)) closed = true;
      if (closed || lx.cur.kind == Token::Kind::End) break;
      auto [lab, d] = parse_stmt();
      if (!any) { first = lab; any = true; }
      else patch_pending(lab);
      pending = std::move(d);
    }
    dangling = std::move(pending);
    pending.clear();
    return {first, dangling};
  }

  std::vector<Slot> pending;  // dangling slots of the previous statement
  void patch_pending(const std::string& target) { patch(pending, target); pending.clear(); }

  std::vector<Slot> parse_if(const std::string& lab, int line, int col) {
    lx.advance();  // if
    bool parened = lx.is_punct("(");
    if (parened) lx.advance();
    Cond c = parse_cond();
    if (parened) lx.expect_punct(")");
    lx.expect_ident("then");

    Raw br;
    br.label = lab;
    br.line = line;
    br.col = col;
    br.stmt.kind = Stmt::Kind::Branch;
    br.stmt.cond = std::move(c);
    int bidx = add_raw(std::move(br));

    // normalized arms: then goto A else goto B fi
    if (lx.is_ident("goto")) {
      lx.advance();
      raws[bidx].succ1 = take_label_ref();
      lx.expect_ident("else");
      lx.expect_ident("goto");
      raws[bidx].succ2 = take_label_ref();
      lx.expect_ident("fi");
      lx.expect_punct(";");
      return {};
    }

    auto saved = std::move(pending);
    pending.clear();
    auto [thenFirst, thenDangling] = parse_block({"else", "fi"});
    std::vector<Slot> dangling = thenDangling;
    if (thenFirst.empty()) dangling.push_back(Slot{bidx, 1});
    else raws[bidx].succ1 = thenFirst;

    if (lx.is_ident("else")) {
      lx.advance();
      auto [elseFirst, elseDangling] = parse_block({"fi"});
      if (elseFirst.empty()) dangling.push_back(Slot{bidx, 2});
      else raws[bidx].succ2 = elseFirst;
      for (auto& s : elseDangling) dangling.push_back(s);
    } else {
      dangling.push_back(Slot{bidx, 2});
    }
    lx.expect_ident("fi");
    lx.expect_punct(";");
    pending = std::move(saved);
    return dangling;
  }

  std::vector<Slot> parse_while(const std::string& lab, int line, int col) {
    lx.advance();  // while
    bool parened = lx.is_punct("(");
    if (parened) lx.advance();
    Cond c = parse_cond();
    if (parened) lx.expect_punct(")");
    lx.expect_ident("do");

    Raw br;
    br.label = lab;
    br.line = line;
    br.col = col;
    br.stmt.kind = Stmt::Kind::Branch;
    br.stmt.cond = std::move(c);
    int bidx = add_raw(std::move(br));

    auto saved = std::move(pending);
    pending.clear();
    auto [bodyFirst, bodyDangling] = parse_block({"od"});
    lx.expect_ident("od");
    lx.expect_punct(";");
    pending = std::move(saved);

    raws[bidx].succ1 = bodyFirst.empty() ? lab : bodyFirst;
    patch(bodyDangling, lab);  // loop back to the head
    return {Slot{bidx, 2}};
  }

  Stmt parse_simple_stmt(std::string& goto_target) {
    Stmt s;
    if (lx.is_ident("exit")) { lx.advance(); s.kind = Stmt::Kind::Exit; return s; }
    if (lx.is_ident("skip")) { lx.advance(); s.kind = Stmt::Kind::Skip; return s; }
    if (lx.is_ident("goto")) {
      lx.advance();
      s.kind = Stmt::Kind::Goto;
      goto_target = take_label_ref();
      return s;
    }
    if (lx.is_ident("new") || lx.is_ident("free")) {
      bool isnew = lx.is_ident("new");
      lx.advance();
      s.kind = isnew ? Stmt::Kind::New : Stmt::Kind::Free;
      s.p = lx.take_ident("pointer variable");
      require_pv(s.p);
      return s;
    }
    std::string id = lx.take_ident("statement");
    if (is_pv(id)) {
      if (lx.is_punct("->")) {
        lx.advance();
        std::string f = lx.take_ident("field name");
        if (f == prog.data_field) {
          lx.expect_punct(":=");
          s.kind = Stmt::Kind::WriteData;
          s.p = id;
          s.exp = parse_exp();
          return s;
        }
        require_pf(f);
        lx.expect_punct(":=");
        s.p = id;
        s.pf = f;
        if (lx.is_ident("nil")) {
          lx.advance();
          s.kind = Stmt::Kind::AssignToFieldNil;
        } else {
          s.kind = Stmt::Kind::AssignToFieldPtr;
          s.q = lx.take_ident("pointer variable or nil");
          require_pv(s.q);
        }
        return s;
      }
      lx.expect_punct(":=");
      s.p = id;
      if (lx.is_ident("nil")) {
        lx.advance();
        s.kind = Stmt::Kind::AssignNil;
        return s;
      }
      std::string rhs = lx.take_ident("pointer variable");
      require_pv(rhs);
      if (lx.is_punct("->")) {
        lx.advance();
        std::string f = lx.take_ident("field name");
        require_pf(f);
        s.kind = Stmt::Kind::AssignFromField;
        s.q = rhs;
        s.pf = f;
        return s;
      }
      s.kind = Stmt::Kind::AssignPtr;
      s.q = rhs;
      return s;
    }
    require_dv(id);
    lx.expect_punct(":=");
    return parse_data_assign_rhs(id);
  }

  Stmt parse_data_assign_rhs(const std::string& d) {
    Stmt s;
    // d := p->val | d := heapcond | d := exp; heap conditions may be in parens
    bool parened = false;
    auto st = lx.save();
    if (lx.is_punct("(")) { parened = true; lx.advance(); }
    if (lx.cur.kind == Token::Kind::Ident && is_pv(lx.cur.text)) {
      std::string p = lx.cur.text;
      lx.advance();
      if (lx.is_punct("->")) {
        lx.advance();
        std::string f = lx.take_ident("field name");
        if (f == prog.data_field && !parened) {
          s.kind = Stmt::Kind::ReadData;
          s.d = d;
          s.p = p;
          return s;
        }
        if (f != prog.data_field) {
          require_pf(f);
          CondAtom hc;
          hc.kind = CondAtom::Kind::FieldPtrEq;
          hc.p = p;
          hc.pf = f;
          lx.expect_punct("=");
          if (lx.is_ident("nil")) lx.advance();
          else { hc.q = lx.take_ident("pointer variable or nil"); require_pv(hc.q); }
          if (parened) lx.expect_punct(")");
          s.kind = Stmt::Kind::AssignHeapCond;
          s.d = d;
          s.hc = hc;
          return s;
        }
        // (p->val ...) — fall through to expression parse
        lx.restore(st);
      } else if (lx.is_punct("=")) {
        lx.advance();
        CondAtom hc;
        hc.p = p;
        if (lx.is_ident("nil")) {
          lx.advance();
          hc.kind = CondAtom::Kind::PtrNil;
        } else {
          hc.kind = CondAtom::Kind::PtrEq;
          hc.q = lx.take_ident("pointer variable or nil");
          require_pv(hc.q);
        }
        if (parened) lx.expect_punct(")");
        s.kind = Stmt::Kind::AssignHeapCond;
        s.d = d;
        s.hc = hc;
        return s;
      } else {
        lx.restore(st);
      }
    } else {
      lx.restore(st);
    }
    s.kind = Stmt::Kind::AssignData;
    s.d = d;
    s.exp = parse_exp();
    return s;
  }

  Program finish() {
    for (size_t i = 0; i < raws.size(); ++i) {
      const std::string& lab = raws[i].label;
      if (prog.label_to_pc.count(lab))
        throw DuplicateLabelError(raws[i].line, raws[i].col, lab);
      prog.label_to_pc[lab] = static_cast<int>(i);
    }
    for (size_t i = 0; i < raws.size(); ++i) {
      Raw& r = raws[i];
      LabeledStmt ls;
      ls.label = r.label;
      ls.stmt = r.stmt;
      auto resolve = [&](const std::string& lab) -> int {
        if (lab.empty()) return -1;
        auto it = prog.label_to_pc.find(lab);
        if (it == prog.label_to_pc.end())
          throw ParseError(r.line, r.col, "unknown label '" + lab + "'");
        return it->second;
      };
      ls.succ1 = resolve(r.succ1);
      ls.succ2 = resolve(r.succ2);
      prog.stmts.push_back(std::move(ls));
    }
    return std::move(prog);
  }

  Program run() {
    parse_decls();
    while (lx.cur.kind != Token::Kind::End) {
      auto [lab, d] = parse_stmt();
      patch(prev_dangling, lab);
      prev_dangling = std::move(d);
    }
    // trailing dangling slots stay unset; validate() reports MissingExit
    if (raws.empty()) lx.fail("program has no statements");
    return finish();
  }

  std::vector<Slot> prev_dangling;
};

}  // namespace

Program parse_program(const std::string& source) {
  Parser p(source);
  return p.run();
}

// ---------------------------------------------------------------------------
// succ
// ---------------------------------------------------------------------------

std::optional<int> succ(const Program& p, int pc, std::optional<bool> branch) {
  if (pc < 0 || pc >= p.num_pcs()) throw ArityMismatchError("pc out of range");
  const LabeledStmt& ls = p.stmts[pc];
  if (ls.stmt.kind == Stmt::Kind::Exit) {
    if (branch.has_value()) throw ArityMismatchError("branch argument for exit");
    return std::nullopt;
  }
  if (ls.stmt.kind == Stmt::Kind::Branch) {
    if (!branch.has_value())
      throw ArityMismatchError("branch statement requires a branch argument");
    int s = *branch ? ls.succ1 : ls.succ2;
    if (s < 0) return std::nullopt;
    return s;
  }
  if (branch.has_value())
    throw ArityMismatchError("branch argument for non-branch statement");
  if (ls.succ1 < 0) return std::nullopt;
  return ls.succ1;
}

// ---------------------------------------------------------------------------
// Sorts
// ---------------------------------------------------------------------------

DataSort sort_of(const DataExpP& e, const Program& p) {
  using K = DataExp::Kind;
  switch (e->kind) {
    case K::IntLit: return DataSort::Int;
    case K::BoolLit: return DataSort::Bool;
    case K::Var: {
      int i = p.dv_index(e->name);
      if (i < 0) throw std::runtime_error("unknown data variable " + e->name);
      return p.dv_sort(i);
    }
    case K::FieldRead: return DataSort::Int;
    case K::Neg:
      if (sort_of(e->lhs, p) != DataSort::Int) throw std::runtime_error("ill-sorted -");
      return DataSort::Int;
    case K::Not:
      if (sort_of(e->lhs, p) != DataSort::Bool) throw std::runtime_error("ill-sorted !");
      return DataSort::Bool;
    case K::Add: case K::Sub: case K::Mul:
      if (sort_of(e->lhs, p) != DataSort::Int || sort_of(e->rhs, p) != DataSort::Int)
        throw std::runtime_error("ill-sorted arithmetic");
      return DataSort::Int;
    case K::Lt: case K::Le: case K::Gt: case K::Ge:
      if (sort_of(e->lhs, p) != DataSort::Int || sort_of(e->rhs, p) != DataSort::Int)
        throw std::runtime_error("ill-sorted comparison");
      return DataSort::Bool;
    case K::Eq: case K::Ne:
      if (sort_of(e->lhs, p) != sort_of(e->rhs, p))
        throw std::runtime_error("ill-sorted equality");
      return DataSort::Bool;
    case K::And: case K::Or:
      if (sort_of(e->lhs, p) != DataSort::Bool || sort_of(e->rhs, p) != DataSort::Bool)
        throw std::runtime_error("ill-sorted connective");
      return DataSort::Bool;
  }
  throw std::runtime_error("bad expression");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

void check_exp(const DataExpP& e, const Program& p, const std::string& lab,
               std::vector<Diagnostic>& out, bool allow_field_read) {
  if (!e) return;
  if (e->kind == DataExp::Kind::Var && p.dv_index(e->name) < 0)
    out.push_back({"UndeclaredIdentifier", lab, e->name});
  if (e->kind == DataExp::Kind::FieldRead) {
    if (!allow_field_read)
      out.push_back({"FieldReadOutsideCondition", lab, e->name});
    if (p.pv_index(e->name) < 0)
      out.push_back({"UndeclaredIdentifier", lab, e->name});
  }
  check_exp(e->lhs, p, lab, out, allow_field_read);
  check_exp(e->rhs, p, lab, out, allow_field_read);
}

}  // namespace

std::vector<Diagnostic> validate(const Program& p) {
  std::vector<Diagnostic> out;
  if (p.pointer_vars.empty())
    out.push_back({"NoPointerVariables", "", "a program declares at least p-hat"});
  if (p.k() < 1) out.push_back({"NoPointerFields", "", "k must be at least 1"});

  auto pv = [&](const std::string& id, const std::string& lab) {
    if (!id.empty() && p.pv_index(id) < 0)
      out.push_back({"UndeclaredIdentifier", lab, id});
  };
  auto dv = [&](const std::string& id, const std::string& lab) {
    if (!id.empty() && p.dv_index(id) < 0)
      out.push_back({"UndeclaredIdentifier", lab, id});
  };
  auto pf = [&](const std::string& id, const std::string& lab) {
    if (!id.empty() && p.pf_index(id) < 0)
      out.push_back({"UndeclaredIdentifier", lab, id});
  };

  for (int pc = 0; pc < p.num_pcs(); ++pc) {
    const LabeledStmt& ls = p.stmts[pc];
    const Stmt& s = ls.stmt;
    const std::string& lab = ls.label;
    using K = Stmt::Kind;
    switch (s.kind) {
      case K::AssignNil: pv(s.p, lab); break;
      case K::AssignPtr: pv(s.p, lab); pv(s.q, lab); break;
      case K::AssignFromField: pv(s.p, lab); pv(s.q, lab); pf(s.pf, lab); break;
      case K::AssignToFieldPtr: pv(s.p, lab); pv(s.q, lab); pf(s.pf, lab); break;
      case K::AssignToFieldNil: pv(s.p, lab); pf(s.pf, lab); break;
      case K::WriteData:
        pv(s.p, lab);
        check_exp(s.exp, p, lab, out, false);
        break;
      case K::ReadData: dv(s.d, lab); pv(s.p, lab); break;
      case K::AssignData: {
        dv(s.d, lab);
        check_exp(s.exp, p, lab, out, false);
        int di = p.dv_index(s.d);
        if (di >= 0) {
          try {
            if (sort_of(s.exp, p) != p.dv_sort(di))
              out.push_back({"SortMismatch", lab, s.d});
          } catch (const std::exception& e) {
            out.push_back({"SortMismatch", lab, e.what()});
          }
        }
        break;
      }
      case K::AssignHeapCond: {
        dv(s.d, lab);
        int di = p.dv_index(s.d);
        if (di >= 0 && p.dv_sort(di) != DataSort::Bool)
          out.push_back({"SortMismatch", lab, s.d + " must be bool"});
        pv(s.hc.p, lab);
        if (s.hc.kind == CondAtom::Kind::PtrEq) pv(s.hc.q, lab);
        if (s.hc.kind == CondAtom::Kind::FieldPtrEq) {
          pf(s.hc.pf, lab);
          if (!s.hc.q.empty()) pv(s.hc.q, lab);
        }
        break;
      }
      case K::New: case K::Free: pv(s.p, lab); break;
      case K::Skip: case K::Goto: case K::Exit: break;
      case K::Branch: {
        for (const CondAtom& a : s.cond) {
          switch (a.kind) {
            case CondAtom::Kind::PtrNil: pv(a.p, lab); break;
            case CondAtom::Kind::PtrEq: pv(a.p, lab); pv(a.q, lab); break;
            case CondAtom::Kind::FieldPtrEq:
              pv(a.p, lab); pf(a.pf, lab);
              if (!a.q.empty()) pv(a.q, lab);
              break;
            case CondAtom::Kind::DataRel: {
              check_exp(a.exp, p, lab, out, true);
              break;
            }
          }
        }
        break;
      }
    }
    // successor presence: every non-exit statement ends somewhere
    if (s.kind == K::Exit) continue;
    bool ok1 = ls.succ1 >= 0 && ls.succ1 < p.num_pcs();
    if (!ok1) out.push_back({"MissingExit", lab, "statement has no successor"});
    if (s.kind == K::Branch) {
      bool ok2 = ls.succ2 >= 0 && ls.succ2 < p.num_pcs();
      if (!ok2) out.push_back({"MissingExit", lab, "branch has no else successor"});
    }
  }
  bool has_exit = false;
  for (const auto& ls : p.stmts)
    if (ls.stmt.kind == Stmt::Kind::Exit) has_exit = true;
  if (!has_exit) out.push_back({"MissingExit", "", "program has no exit statement"});
  return out;
}

// ---------------------------------------------------------------------------
// Pretty printer
// ---------------------------------------------------------------------------

namespace {

void print_exp(std::ostream& os, const DataExpP& e, int parent_prec = 0);

int prec_of(DataExp::Kind k) {
  using K = DataExp::Kind;
  switch (k) {
    case K::Or: return 1;
    case K::And: return 2;
    case K::Eq: case K::Ne: case K::Lt: case K::Le: case K::Gt: case K::Ge: return 3;
    case K::Add: case K::Sub: return 4;
    case K::Mul: return 5;
    case K::Neg: case K::Not: return 6;
    default: return 7;
  }
}
const char* op_of(DataExp::Kind k) {
  using K = DataExp::Kind;
  switch (k) {
    case K::Or: return "||"; case K::And: return "&&";
    case K::Eq: return "="; case K::Ne: return "!=";
    case K::Lt: return "<"; case K::Le: return "<=";
    case K::Gt: return ">"; case K::Ge: return ">=";
    case K::Add: return "+"; case K::Sub: return "-";
    case K::Mul: return "*";
    default: return "?";
  }
}

void print_exp(std::ostream& os, const DataExpP& e, int parent_prec) {
  using K = DataExp::Kind;
  int myprec = prec_of(e->kind);
  bool paren = myprec < parent_prec;
  switch (e->kind) {
    case K::IntLit: os << e->ival; return;
    case K::BoolLit: os << (e->bval ? "true" : "false"); return;
    case K::Var: os << e->name; return;
    case K::FieldRead: os << e->name << "->val"; return;
    case K::Neg:
      os << "-";
      print_exp(os, e->lhs, myprec + 1);
      return;
    case K::Not:
      os << "!";
      print_exp(os, e->lhs, myprec + 1);
      return;
    default: break;
  }
  if (paren) os << "(";
  print_exp(os, e->lhs, myprec);
  os << " " << op_of(e->kind) << " ";
  print_exp(os, e->rhs, myprec + 1);
  if (paren) os << ")";
}

void print_atom(std::ostream& os, const CondAtom& a) {
  switch (a.kind) {
    case CondAtom::Kind::PtrNil:
      os << a.p << (a.neg ? " != " : " = ") << "nil";
      break;
    case CondAtom::Kind::PtrEq:
      os << a.p << (a.neg ? " != " : " = ") << a.q;
      break;
    case CondAtom::Kind::FieldPtrEq:
      os << a.p << "->" << a.pf << (a.neg ? " != " : " = ")
         << (a.q.empty() ? "nil" : a.q);
      break;
    case CondAtom::Kind::DataRel:
      print_exp(os, a.exp);
      break;
  }
}

}  // namespace

std::string pretty(const Program& p) {
  std::ostringstream os;
  if (!p.pointer_vars.empty()) {
    os << "pointer ";
    for (size_t i = 0; i < p.pointer_vars.size(); ++i)
      os << (i ? ", " : "") << p.pointer_vars[i];
    os << ";\n";
  }
  for (auto sort : {DataSort::Int, DataSort::Bool}) {
    std::vector<std::string> names;
    for (auto& [n, s] : p.data_vars)
      if (s == sort) names.push_back(n);
    if (!names.empty()) {
      os << (sort == DataSort::Int ? "int " : "bool ");
      for (size_t i = 0; i < names.size(); ++i) os << (i ? ", " : "") << names[i];
      os << ";\n";
    }
  }
  os << "field ";
  for (size_t i = 0; i < p.pointer_fields.size(); ++i)
    os << (i ? ", " : "") << p.pointer_fields[i];
  os << ";\n";

  for (int pc = 0; pc < p.num_pcs(); ++pc) {
    const LabeledStmt& ls = p.stmts[pc];
    const Stmt& s = ls.stmt;
    os << ls.label << ": ";
    using K = Stmt::Kind;
    switch (s.kind) {
      case K::AssignNil: os << s.p << " := nil"; break;
      case K::AssignPtr: os << s.p << " := " << s.q; break;
      case K::AssignFromField: os << s.p << " := " << s.q << "->" << s.pf; break;
      case K::AssignToFieldPtr: os << s.p << "->" << s.pf << " := " << s.q; break;
      case K::AssignToFieldNil: os << s.p << "->" << s.pf << " := nil"; break;
      case K::WriteData:
        os << s.p << "->val := ";
        print_exp(os, s.exp);
        break;
      case K::ReadData: os << s.d << " := " << s.p << "->val"; break;
      case K::AssignData:
        os << s.d << " := ";
        print_exp(os, s.exp);
        break;
      case K::AssignHeapCond:
        os << s.d << " := (";
        print_atom(os, s.hc);
        os << ")";
        break;
      case K::New: os << "new " << s.p; break;
      case K::Free: os << "free " << s.p; break;
      case K::Skip: os << "skip"; break;
      case K::Goto: os << "goto " << p.stmts[ls.succ1].label; break;
      case K::Exit: os << "exit"; break;
      case K::Branch: {
        os << "if (";
        for (size_t i = 0; i < s.cond.size(); ++i) {
          if (i) os << " && ";
          print_atom(os, s.cond[i]);
        }
        os << ") then goto " << (ls.succ1 >= 0 ? p.stmts[ls.succ1].label : "?")
           << " else goto " << (ls.succ2 >= 0 ? p.stmts[ls.succ2].label : "?") << " fi";
        break;
      }
    }
    // explicit successor where fallthrough does not apply
    if (s.kind != K::Exit && s.kind != K::Branch && s.kind != K::Goto) {
      if (ls.succ1 != pc + 1 && ls.succ1 >= 0)
        os << " goto " << p.stmts[ls.succ1].label;
    }
    os << ";\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Equality / hash
// ---------------------------------------------------------------------------

namespace {
bool exp_eq(const DataExpP& a, const DataExpP& b) {
  if (!a || !b) return !a && !b;
  if (a->kind != b->kind || a->ival != b->ival || a->bval != b->bval ||
      a->name != b->name)
    return false;
  return exp_eq(a->lhs, b->lhs) && exp_eq(a->rhs, b->rhs);
}
bool atom_eq(const CondAtom& a, const CondAtom& b) {
  return a.kind == b.kind && a.neg == b.neg && a.p == b.p && a.q == b.q &&
         a.pf == b.pf && exp_eq(a.exp, b.exp);
}
}  // namespace

bool operator==(const Program& a, const Program& b) {
  if (a.pointer_vars != b.pointer_vars || a.data_vars != b.data_vars ||
      a.pointer_fields != b.pointer_fields || a.num_pcs() != b.num_pcs())
    return false;
  for (int i = 0; i < a.num_pcs(); ++i) {
    const LabeledStmt& x = a.stmts[i];
    const LabeledStmt& y = b.stmts[i];
    if (x.label != y.label || x.succ1 != y.succ1 || x.succ2 != y.succ2) return false;
    const Stmt& s = x.stmt;
    const Stmt& t = y.stmt;
    if (s.kind != t.kind || s.p != t.p || s.q != t.q || s.pf != t.pf || s.d != t.d)
      return false;
    if (!exp_eq(s.exp, t.exp) || !atom_eq(s.hc, t.hc)) return false;
    if (s.cond.size() != t.cond.size()) return false;
    for (size_t j = 0; j < s.cond.size(); ++j)
      if (!atom_eq(s.cond[j], t.cond[j])) return false;
  }
  return true;
}

std::string program_hash(const Program& p) {
  std::string text = pretty(p);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Desugaring
// ---------------------------------------------------------------------------

namespace {

// Collects FieldRead(p) occurrences in an expression.
void collect_field_reads(const DataExpP& e, std::vector<std::string>& ps) {
  if (!e) return;
  if (e->kind == DataExp::Kind::FieldRead) ps.push_back(e->name);
  collect_field_reads(e->lhs, ps);
  collect_field_reads(e->rhs, ps);
}

// Replaces FieldRead(p) with Var(dv) (all occurrences read the same temp,
// which is sound because atoms dereference a single pointer).
DataExpP replace_field_reads(const DataExpP& e, const std::string& dv) {
  if (!e) return e;
  if (e->kind == DataExp::Kind::FieldRead) return DataExp::var(dv);
  auto c = std::make_shared<DataExp>(*e);
  c->lhs = replace_field_reads(e->lhs, dv);
  c->rhs = replace_field_reads(e->rhs, dv);
  return c;
}

struct Desugarer {
  const Program& in;
  Program out;
  std::string nil_var;
  int fresh_counter = 0;

  struct OutStmt {
    std::string label;
    Stmt stmt;
    // symbolic successors: either a label of `in`, or an internal out-label
    std::string succ1, succ2;
  };
  std::vector<OutStmt> outs;

  explicit Desugarer(const Program& p) : in(p) {}

  std::string fresh_label(const std::string& base) {
    return base + "." + std::to_string(++fresh_counter);
  }

  std::string fresh_dv(DataSort s) {
    std::string n = (s == DataSort::Int ? "__d" : "__b") +
                    std::to_string(out.data_vars.size());
    out.data_vars.emplace_back(n, s);
    return n;
  }
  std::string fresh_pv() {
    std::string n = "__p" + std::to_string(out.pointer_vars.size());
    out.pointer_vars.push_back(n);
    return n;
  }

  bool needs_nil_var() const {
    auto atom_needs = [](const CondAtom& a) {
      return a.kind == CondAtom::Kind::PtrNil ||
             (a.kind == CondAtom::Kind::FieldPtrEq && a.q.empty());
    };
    for (const auto& ls : in.stmts) {
      const Stmt& s = ls.stmt;
      if (s.kind == Stmt::Kind::Branch)
        for (const auto& a : s.cond)
          if (atom_needs(a)) return true;
      if (s.kind == Stmt::Kind::AssignHeapCond && atom_needs(s.hc)) return true;
    }
    return false;
  }

  Program run() {
    out.pointer_vars = in.pointer_vars;
    out.data_vars = in.data_vars;
    out.pointer_fields = in.pointer_fields;
    out.data_field = in.data_field;

    if (needs_nil_var()) {
      nil_var = "__nil";
      out.pointer_vars.push_back(nil_var);
      OutStmt init;
      init.label = "__entry";
      init.stmt.kind = Stmt::Kind::AssignNil;
      init.stmt.p = nil_var;
      init.succ1 = in.stmts[in.entry()].label;
      outs.push_back(std::move(init));
    }

    for (const auto& ls : in.stmts) emit_stmt(ls);

    // resolve
    std::map<std::string, int> l2pc;
    for (size_t i = 0; i < outs.size(); ++i) l2pc[outs[i].label] = static_cast<int>(i);
    for (auto& o : outs) {
      LabeledStmt ls;
      ls.label = o.label;
      ls.stmt = o.stmt;
      ls.succ1 = o.succ1.empty() ? -1 : l2pc.at(o.succ1);
      ls.succ2 = o.succ2.empty() ? -1 : l2pc.at(o.succ2);
      out.stmts.push_back(std::move(ls));
    }
    out.label_to_pc = std::move(l2pc);
    return std::move(out);
  }

  std::string label_of(int pc) const { return in.stmts[pc].label; }

  void emit_stmt(const LabeledStmt& ls) {
    const Stmt& s = ls.stmt;
    std::string s1 = ls.succ1 >= 0 ? label_of(ls.succ1) : "";
    std::string s2 = ls.succ2 >= 0 ? label_of(ls.succ2) : "";
    if (s.kind == Stmt::Kind::Branch) {
      emit_branch(ls.label, s.cond, s1, s2);
      return;
    }
    if (s.kind == Stmt::Kind::AssignHeapCond) {
      emit_heapcond(ls.label, s, s1);
      return;
    }
    OutStmt o;
    o.label = ls.label;
    o.stmt = s;
    o.succ1 = s1;
    o.succ2 = s2;
    outs.push_back(std::move(o));
  }

  // emits the atom chain for a conjunction: true -> next atom (or thenL),
  // false -> elseL
  void emit_branch(const std::string& label, const Cond& cond,
                   const std::string& thenL, const std::string& elseL) {
    std::string curLabel = label;
    for (size_t i = 0; i < cond.size(); ++i) {
      bool last = i + 1 == cond.size();
      std::string passL = last ? thenL : fresh_label(label);
      emit_atom(curLabel, cond[i], passL, elseL);
      curLabel = passL;
    }
  }

  void emit_atom(const std::string& label, const CondAtom& a,
                 const std::string& passL, const std::string& failL) {
    switch (a.kind) {
      case CondAtom::Kind::PtrNil: {
        // p = nil  ==>  p = __nil
        OutStmt o;
        o.label = label;
        o.stmt.kind = Stmt::Kind::Branch;
        CondAtom b;
        b.kind = CondAtom::Kind::PtrEq;
        b.p = a.p;
        b.q = nil_var;
        b.neg = a.neg;
        o.stmt.cond = {b};
        o.succ1 = passL;
        o.succ2 = failL;
        outs.push_back(std::move(o));
        break;
      }
      case CondAtom::Kind::PtrEq: {
        OutStmt o;
        o.label = label;
        o.stmt.kind = Stmt::Kind::Branch;
        o.stmt.cond = {a};
        o.succ1 = passL;
        o.succ2 = failL;
        outs.push_back(std::move(o));
        break;
      }
      case CondAtom::Kind::FieldPtrEq: {
        // __p := p->pf ; branch __p = q (or __nil)
        std::string t = fresh_pv();
        OutStmt rd;
        rd.label = label;
        rd.stmt.kind = Stmt::Kind::AssignFromField;
        rd.stmt.p = t;
        rd.stmt.q = a.p;
        rd.stmt.pf = a.pf;
        std::string brL = fresh_label(label);
        rd.succ1 = brL;
        outs.push_back(std::move(rd));
        OutStmt br;
        br.label = brL;
        br.stmt.kind = Stmt::Kind::Branch;
        CondAtom b;
        b.kind = CondAtom::Kind::PtrEq;
        b.p = t;
        b.q = a.q.empty() ? nil_var : a.q;
        b.neg = a.neg;
        br.stmt.cond = {b};
        br.succ1 = passL;
        br.succ2 = failL;
        outs.push_back(std::move(br));
        break;
      }
      case CondAtom::Kind::DataRel: {
        std::vector<std::string> reads;
        collect_field_reads(a.exp, reads);
        DataExpP exp = a.exp;
        std::string curLabel = label;
        if (!reads.empty()) {
          // all reads dereference the same pointer (enforced at parse)
          std::string t = fresh_dv(DataSort::Int);
          OutStmt rd;
          rd.label = curLabel;
          rd.stmt.kind = Stmt::Kind::ReadData;
          rd.stmt.d = t;
          rd.stmt.p = reads.front();
          std::string brL = fresh_label(label);
          rd.succ1 = brL;
          outs.push_back(std::move(rd));
          curLabel = brL;
          exp = replace_field_reads(exp, t);
        }
        OutStmt br;
        br.label = curLabel;
        br.stmt.kind = Stmt::Kind::Branch;
        CondAtom b;
        b.kind = CondAtom::Kind::DataRel;
        b.exp = exp;
        if (a.neg) b.exp = DataExp::unary(DataExp::Kind::Not, b.exp);
        br.stmt.cond = {b};
        br.succ1 = passL;
        br.succ2 = failL;
        outs.push_back(std::move(br));
        break;
      }
    }
  }

  void emit_heapcond(const std::string& label, const Stmt& s, const std::string& succL) {
    const CondAtom& a = s.hc;
    switch (a.kind) {
      case CondAtom::Kind::PtrEq: {
        OutStmt o;
        o.label = label;
        o.stmt = s;
        o.succ1 = succL;
        outs.push_back(std::move(o));
        break;
      }
      case CondAtom::Kind::PtrNil: {
        OutStmt o;
        o.label = label;
        o.stmt.kind = Stmt::Kind::AssignHeapCond;
        o.stmt.d = s.d;
        o.stmt.hc.kind = CondAtom::Kind::PtrEq;
        o.stmt.hc.p = a.p;
        o.stmt.hc.q = nil_var;
        o.succ1 = succL;
        outs.push_back(std::move(o));
        break;
      }
      case CondAtom::Kind::FieldPtrEq: {
        std::string t = fresh_pv();
        OutStmt rd;
        rd.label = label;
        rd.stmt.kind = Stmt::Kind::AssignFromField;
        rd.stmt.p = t;
        rd.stmt.q = a.p;
        rd.stmt.pf = a.pf;
        std::string asL = fresh_label(label);
        rd.succ1 = asL;
        outs.push_back(std::move(rd));
        OutStmt as;
        as.label = asL;
        as.stmt.kind = Stmt::Kind::AssignHeapCond;
        as.stmt.d = s.d;
        as.stmt.hc.kind = CondAtom::Kind::PtrEq;
        as.stmt.hc.p = t;
        as.stmt.hc.q = a.q.empty() ? nil_var : a.q;
        as.succ1 = succL;
        outs.push_back(std::move(as));
        break;
      }
      default: break;
    }
  }
};

}  // namespace

Program desugar(const Program& p) {
  // already in desugared form?
  bool needs = false;
  for (const auto& ls : p.stmts) {
    const Stmt& s = ls.stmt;
    if (s.kind == Stmt::Kind::Branch) {
      if (s.cond.size() != 1) needs = true;
      else {
        const CondAtom& a = s.cond.front();
        if (a.kind == CondAtom::Kind::PtrNil || a.kind == CondAtom::Kind::FieldPtrEq)
          needs = true;
        if (a.kind == CondAtom::Kind::DataRel) {
          std::vector<std::string> reads;
          collect_field_reads(a.exp, reads);
          if (!reads.empty()) needs = true;
        }
      }
    }
    if (s.kind == Stmt::Kind::AssignHeapCond &&
        s.hc.kind != CondAtom::Kind::PtrEq)
      needs = true;
  }
  if (!needs) return p;
  Desugarer d(p);
  return d.run();
}

}  // namespace kw
