#include "kw/constraint.hpp"

#include <sstream>

namespace kw::chc {

namespace {
std::shared_ptr<Exp> mut(Exp::Kind k, Sort s) {
  auto e = std::make_shared<Exp>();
  e->kind = k;
  e->sort = s;
  return e;
}
void want(const ExpP& e, Sort s, const char* where) {
  if (e->sort != s) throw SortError(std::string("ill-sorted operand in ") + where);
}
}  // namespace

ExpP btrue() { return blit(true); }
ExpP bfalse() { return blit(false); }

ExpP blit(bool v) {
  auto e = mut(Exp::Kind::BoolLit, Sort::Bool);
  e->bval = v;
  return e;
}
ExpP ilit(std::int64_t v) {
  auto e = mut(Exp::Kind::IntLit, Sort::Int);
  e->ival = v;
  return e;
}
ExpP slot(int logvar, int s, Sort sort) {
  auto e = mut(Exp::Kind::Slot, sort);
  e->logvar = logvar;
  e->slot = s;
  return e;
}
ExpP mk_not(ExpP x) {
  want(x, Sort::Bool, "not");
  if (x->kind == Exp::Kind::BoolLit) return blit(!x->bval);
  if (x->kind == Exp::Kind::Not) return x->kids[0];
  auto e = mut(Exp::Kind::Not, Sort::Bool);
  e->kids = {std::move(x)};
  return e;
}
ExpP mk_and(std::vector<ExpP> es) {
  std::vector<ExpP> kids;
  for (auto& x : es) {
    want(x, Sort::Bool, "and");
    if (x->kind == Exp::Kind::BoolLit) {
      if (!x->bval) return bfalse();
      continue;
    }
    if (x->kind == Exp::Kind::And) {
      for (auto& k : x->kids) kids.push_back(k);
      continue;
    }
    kids.push_back(x);
  }
  if (kids.empty()) return btrue();
  if (kids.size() == 1) return kids[0];
  auto e = mut(Exp::Kind::And, Sort::Bool);
  e->kids = std::move(kids);
  return e;
}
ExpP mk_or(std::vector<ExpP> es) {
  std::vector<ExpP> kids;
  for (auto& x : es) {
    want(x, Sort::Bool, "or");
    if (x->kind == Exp::Kind::BoolLit) {
      if (x->bval) return btrue();
      continue;
    }
    if (x->kind == Exp::Kind::Or) {
      for (auto& k : x->kids) kids.push_back(k);
      continue;
    }
    kids.push_back(x);
  }
  if (kids.empty()) return bfalse();
  if (kids.size() == 1) return kids[0];
  auto e = mut(Exp::Kind::Or, Sort::Bool);
  e->kids = std::move(kids);
  return e;
}
ExpP mk_implies(ExpP a, ExpP b) {
  want(a, Sort::Bool, "=>");
  want(b, Sort::Bool, "=>");
  if (a->kind == Exp::Kind::BoolLit) return a->bval ? b : btrue();
  if (b->kind == Exp::Kind::BoolLit && b->bval) return btrue();
  auto e = mut(Exp::Kind::Implies, Sort::Bool);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_iff(ExpP a, ExpP b) {
  want(a, Sort::Bool, "iff");
  want(b, Sort::Bool, "iff");
  auto e = mut(Exp::Kind::Iff, Sort::Bool);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_ite(ExpP c, ExpP t, ExpP f) {
  want(c, Sort::Bool, "ite");
  if (t->sort != f->sort) throw SortError("ite branches disagree");
  if (c->kind == Exp::Kind::BoolLit) return c->bval ? t : f;
  auto e = mut(Exp::Kind::Ite, t->sort);
  e->kids = {std::move(c), std::move(t), std::move(f)};
  return e;
}
ExpP mk_eq(ExpP a, ExpP b) {
  if (a->sort != b->sort) throw SortError("= operands disagree");
  if (a->sort == Sort::Bool) return mk_iff(std::move(a), std::move(b));
  if (a->kind == Exp::Kind::IntLit && b->kind == Exp::Kind::IntLit)
    return blit(a->ival == b->ival);
  auto e = mut(Exp::Kind::Eq, Sort::Bool);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_le(ExpP a, ExpP b) {
  want(a, Sort::Int, "<=");
  want(b, Sort::Int, "<=");
  auto e = mut(Exp::Kind::Le, Sort::Bool);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_lt(ExpP a, ExpP b) {
  want(a, Sort::Int, "<");
  want(b, Sort::Int, "<");
  auto e = mut(Exp::Kind::Lt, Sort::Bool);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_add(ExpP a, ExpP b) {
  want(a, Sort::Int, "+");
  want(b, Sort::Int, "+");
  auto e = mut(Exp::Kind::Add, Sort::Int);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_sub(ExpP a, ExpP b) {
  want(a, Sort::Int, "-");
  want(b, Sort::Int, "-");
  auto e = mut(Exp::Kind::Sub, Sort::Int);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_mul(ExpP a, ExpP b) {
  want(a, Sort::Int, "*");
  want(b, Sort::Int, "*");
  auto e = mut(Exp::Kind::Mul, Sort::Int);
  e->kids = {std::move(a), std::move(b)};
  return e;
}
ExpP mk_neg(ExpP a) {
  want(a, Sort::Int, "neg");
  auto e = mut(Exp::Kind::Neg, Sort::Int);
  e->kids = {std::move(a)};
  return e;
}
ExpP mk_apply(std::string helper, std::vector<int> logs, Sort sort) {
  auto e = mut(Exp::Kind::Apply, sort);
  e->helper = std::move(helper);
  e->apply_logs = std::move(logs);
  return e;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::int64_t eval(const ExpP& e, const EvalContext& cx) {
  using K = Exp::Kind;
  switch (e->kind) {
    case K::BoolLit: return e->bval;
    case K::IntLit: return e->ival;
    case K::Slot: return (*cx.logs.at(e->logvar))[e->slot];
    case K::Not: return !eval(e->kids[0], cx);
    case K::And:
      for (auto& k : e->kids)
        if (!eval(k, cx)) return 0;
      return 1;
    case K::Or:
      for (auto& k : e->kids)
        if (eval(k, cx)) return 1;
      return 0;
    case K::Implies: return !eval(e->kids[0], cx) || eval(e->kids[1], cx);
    case K::Iff: return !eval(e->kids[0], cx) == !eval(e->kids[1], cx);
    case K::Ite: return eval(e->kids[0], cx) ? eval(e->kids[1], cx) : eval(e->kids[2], cx);
    case K::Eq: return eval(e->kids[0], cx) == eval(e->kids[1], cx);
    case K::Le: return eval(e->kids[0], cx) <= eval(e->kids[1], cx);
    case K::Lt: return eval(e->kids[0], cx) < eval(e->kids[1], cx);
    case K::Add: return eval(e->kids[0], cx) + eval(e->kids[1], cx);
    case K::Sub: return eval(e->kids[0], cx) - eval(e->kids[1], cx);
    case K::Mul: return eval(e->kids[0], cx) * eval(e->kids[1], cx);
    case K::Neg: return -eval(e->kids[0], cx);
    case K::Apply: {
      const Helper* h = nullptr;
      for (const Helper& cand : *cx.helpers)
        if (cand.name == e->helper) { h = &cand; break; }
      if (!h) throw std::runtime_error("unknown helper " + e->helper);
      EvalContext inner;
      inner.helpers = cx.helpers;
      for (int lv : e->apply_logs) inner.logs.push_back(cx.logs.at(lv));
      return eval(h->body, inner);
    }
  }
  throw std::runtime_error("bad expression");
}

// ---------------------------------------------------------------------------
// SMT-LIB text
// ---------------------------------------------------------------------------

namespace {

void print(std::ostringstream& os, const ExpP& e,
           const std::vector<std::string>& prefixes, const SlotInfo& info) {
  using K = Exp::Kind;
  switch (e->kind) {
    case K::BoolLit: os << (e->bval ? "true" : "false"); return;
    case K::IntLit:
      if (e->ival < 0) os << "(- " << -e->ival << ")";
      else os << e->ival;
      return;
    case K::Slot:
      os << prefixes.at(e->logvar) << "_" << info.names.at(e->slot);
      return;
    case K::Not:
      os << "(not ";
      print(os, e->kids[0], prefixes, info);
      os << ")";
      return;
    case K::And:
    case K::Or: {
      os << (e->kind == K::And ? "(and" : "(or");
      for (auto& k : e->kids) {
        os << " ";
        print(os, k, prefixes, info);
      }
      os << ")";
      return;
    }
    case K::Implies: os << "(=> "; break;
    case K::Iff: os << "(= "; break;
    case K::Eq: os << "(= "; break;
    case K::Le: os << "(<= "; break;
    case K::Lt: os << "(< "; break;
    case K::Add: os << "(+ "; break;
    case K::Sub: os << "(- "; break;
    case K::Mul: os << "(* "; break;
    case K::Neg:
      os << "(- ";
      print(os, e->kids[0], prefixes, info);
      os << ")";
      return;
    case K::Ite:
      os << "(ite ";
      print(os, e->kids[0], prefixes, info);
      os << " ";
      print(os, e->kids[1], prefixes, info);
      os << " ";
      print(os, e->kids[2], prefixes, info);
      os << ")";
      return;
    case K::Apply: {
      if (e->apply_logs.empty()) {
        os << e->helper;
        return;
      }
      os << "(" << e->helper;
      for (int lv : e->apply_logs)
        for (size_t s = 0; s < info.names.size(); ++s)
          os << " " << prefixes.at(lv) << "_" << info.names[s];
      os << ")";
      return;
    }
  }
  // binary operators falling through
  print(os, e->kids[0], prefixes, info);
  os << " ";
  print(os, e->kids[1], prefixes, info);
  os << ")";
}

}  // namespace

std::string to_smt(const ExpP& e, const std::vector<std::string>& log_prefixes,
                   const SlotInfo& info) {
  std::ostringstream os;
  print(os, e, log_prefixes, info);
  return os.str();
}

}  // namespace kw::chc
