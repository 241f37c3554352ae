#include "kw/interp.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kw {

DataTree DataTree::list(const std::vector<std::int64_t>& vals) {
  DataTree t;
  t.arity = 1;
  std::vector<int> path;
  for (auto v : vals) {
    t.nodes[path] = v;
    path.push_back(1);
  }
  return t;
}

void DataTree::check() const {
  for (const auto& [path, _] : nodes) {
    for (int c : path)
      if (c < 1 || c > arity)
        throw ArityViolationError("child index out of arity in data tree");
    if (!path.empty()) {
      std::vector<int> parent(path.begin(), path.end() - 1);
      if (!contains(parent))
        throw ArityViolationError("data tree is not prefix-closed");
    }
  }
}

static std::string path_to_string(const std::vector<int>& p) {
  std::string s;
  for (size_t i = 0; i < p.size(); ++i) {
    if (i) s += '.';
    s += std::to_string(p[i]);
  }
  return s;
}

static std::vector<int> path_from_string(const std::string& s) {
  std::vector<int> p;
  if (s.empty()) return p;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '.')) p.push_back(std::stoi(part));
  return p;
}

DataTree DataTree::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  DataTree t;
  t.arity = j.at("arity").get<int>();
  for (const auto& n : j.at("nodes"))
    t.nodes[path_from_string(n.at("path").get<std::string>())] =
        n.at("val").get<std::int64_t>();
  t.check();
  return t;
}

std::string DataTree::to_json() const {
  nlohmann::json j;
  j["arity"] = arity;
  j["nodes"] = nlohmann::json::array();
  for (const auto& [path, val] : nodes)
    j["nodes"].push_back({{"path", path_to_string(path)}, {"val", val}});
  return j.dump(2);
}

bool Heap::live(NodeId n) const {
  return std::find(nodes.begin(), nodes.end(), n) != nodes.end();
}

// ---------------------------------------------------------------------------

Configuration initial_config(const Program& p, const DataTree& t,
                             const std::map<std::string, std::int64_t>& data_seed) {
  t.check();
  if (t.arity > p.k())
    throw ArityViolationError("data tree wider than the program's field count");
  Configuration c;
  c.heap.pf.resize(p.k());

  // breadth-first ids starting from 1
  std::map<std::vector<int>, NodeId> id_of;
  std::deque<std::vector<int>> queue;
  if (t.contains({})) queue.push_back({});
  NodeId next_id = 1;
  while (!queue.empty()) {
    auto path = queue.front();
    queue.pop_front();
    id_of[path] = next_id++;
    for (int j = 1; j <= t.arity; ++j) {
      auto child = path;
      child.push_back(j);
      if (t.contains(child)) queue.push_back(child);
    }
  }
  for (const auto& [path, val] : t.nodes) {
    NodeId id = id_of.at(path);
    c.heap.nodes.push_back(id);
    c.heap.data[id] = val;
    for (int j = 0; j < p.k(); ++j) {
      auto child = path;
      child.push_back(j + 1);
      c.heap.pf[j][id] = t.contains(child) ? id_of.at(child) : kNil;
    }
  }
  std::sort(c.heap.nodes.begin(), c.heap.nodes.end());

  for (size_t i = 0; i < p.pointer_vars.size(); ++i)
    c.nu_p[p.pointer_vars[i]] = kNil;
  if (!t.empty()) c.nu_p[p.pointer_vars.front()] = id_of.at({});

  for (const auto& [name, sort] : p.data_vars) {
    auto it = data_seed.find(name);
    c.nu_d[name] = it != data_seed.end() ? it->second : 0;
    (void)sort;
  }
  c.pc = p.entry();
  return c;
}

// ---------------------------------------------------------------------------
// Expression evaluation
// ---------------------------------------------------------------------------

namespace {

struct NilDeref {};  // thrown when a condition dereferences nil

std::int64_t eval_exp(const DataExpP& e, const Configuration& c) {
  using K = DataExp::Kind;
  switch (e->kind) {
    case K::IntLit: return e->ival;
    case K::BoolLit: return e->bval ? 1 : 0;
    case K::Var: return c.nu_d.at(e->name);
    case K::FieldRead: {
      NodeId n = c.nu_p.at(e->name);
      if (n == kNil) throw NilDeref{};
      return c.heap.data.at(n);
    }
    case K::Neg: return -eval_exp(e->lhs, c);
    case K::Not: return eval_exp(e->lhs, c) ? 0 : 1;
    case K::Add: return eval_exp(e->lhs, c) + eval_exp(e->rhs, c);
    case K::Sub: return eval_exp(e->lhs, c) - eval_exp(e->rhs, c);
    case K::Mul: return eval_exp(e->lhs, c) * eval_exp(e->rhs, c);
    case K::Eq: return eval_exp(e->lhs, c) == eval_exp(e->rhs, c);
    case K::Ne: return eval_exp(e->lhs, c) != eval_exp(e->rhs, c);
    case K::Lt: return eval_exp(e->lhs, c) < eval_exp(e->rhs, c);
    case K::Le: return eval_exp(e->lhs, c) <= eval_exp(e->rhs, c);
    case K::Gt: return eval_exp(e->lhs, c) > eval_exp(e->rhs, c);
    case K::Ge: return eval_exp(e->lhs, c) >= eval_exp(e->rhs, c);
    case K::And: return eval_exp(e->lhs, c) && eval_exp(e->rhs, c);
    case K::Or: return eval_exp(e->lhs, c) || eval_exp(e->rhs, c);
  }
  throw std::runtime_error("bad expression");
}

// Evaluates one condition atom; throws NilDeref on nil dereference.
bool eval_atom(const CondAtom& a, const Configuration& c) {
  bool v = false;
  switch (a.kind) {
    case CondAtom::Kind::PtrNil:
      v = c.nu_p.at(a.p) == kNil;
      break;
    case CondAtom::Kind::PtrEq:
      v = c.nu_p.at(a.p) == c.nu_p.at(a.q);
      break;
    case CondAtom::Kind::FieldPtrEq: {
      NodeId n = c.nu_p.at(a.p);
      if (n == kNil) throw NilDeref{};
      // pf index resolved by the caller's program; field maps keyed by index
      // are not available here, so the caller pre-resolves. Handled in step().
      throw std::logic_error("FieldPtrEq must be handled by step()");
    }
    case CondAtom::Kind::DataRel:
      v = eval_exp(a.exp, c) != 0;
      break;
  }
  return a.neg ? !v : v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Small-step semantics
// ---------------------------------------------------------------------------

StepResult step(const Program& p, const Configuration& c) {
  const LabeledStmt& ls = p.stmts.at(c.pc);
  const Stmt& s = ls.stmt;
  using K = Stmt::Kind;

  auto next = [&](std::optional<bool> b = std::nullopt) -> std::optional<int> {
    return succ(p, c.pc, b);
  };
  auto advance = [&](Configuration cfg, std::optional<bool> b = std::nullopt) -> StepResult {
    auto n = next(b);
    if (!n) return StepError{"statement has no successor"};
    cfg.pc = *n;
    return StepNext{std::move(cfg)};
  };

  switch (s.kind) {
    case K::Exit:
      return StepFinal{};
    case K::Skip:
    case K::Goto:
      return advance(c);
    case K::AssignNil: {
      Configuration n = c;
      n.nu_p[s.p] = kNil;
      return advance(std::move(n));
    }
    case K::AssignPtr: {
      Configuration n = c;
      n.nu_p[s.p] = c.nu_p.at(s.q);
      return advance(std::move(n));
    }
    case K::AssignFromField: {
      NodeId q = c.nu_p.at(s.q);
      if (q == kNil) return StepError{"NilDereference"};
      Configuration n = c;
      n.nu_p[s.p] = c.heap.pf[p.pf_index(s.pf)].at(q);
      return advance(std::move(n));
    }
    case K::AssignToFieldPtr: {
      NodeId tgt = c.nu_p.at(s.p);
      if (tgt == kNil) return StepError{"NilDereference"};
      Configuration n = c;
      n.heap.pf[p.pf_index(s.pf)][tgt] = c.nu_p.at(s.q);
      return advance(std::move(n));
    }
    case K::AssignToFieldNil: {
      NodeId tgt = c.nu_p.at(s.p);
      if (tgt == kNil) return StepError{"NilDereference"};
      Configuration n = c;
      n.heap.pf[p.pf_index(s.pf)][tgt] = kNil;
      return advance(std::move(n));
    }
    case K::WriteData: {
      NodeId tgt = c.nu_p.at(s.p);
      if (tgt == kNil) return StepError{"NilDereference"};
      Configuration n = c;
      try {
        n.heap.data[tgt] = eval_exp(s.exp, c);
      } catch (const NilDeref&) {
        return StepError{"NilDereference"};
      }
      return advance(std::move(n));
    }
    case K::ReadData: {
      NodeId src = c.nu_p.at(s.p);
      if (src == kNil) return StepError{"NilDereference"};
      Configuration n = c;
      n.nu_d[s.d] = c.heap.data.at(src);
      return advance(std::move(n));
    }
    case K::AssignData: {
      Configuration n = c;
      try {
        n.nu_d[s.d] = eval_exp(s.exp, c);
      } catch (const NilDeref&) {
        return StepError{"NilDereference"};
      }
      return advance(std::move(n));
    }
    case K::AssignHeapCond: {
      Configuration n = c;
      bool v = false;
      switch (s.hc.kind) {
        case CondAtom::Kind::PtrNil:
          v = c.nu_p.at(s.hc.p) == kNil;
          break;
        case CondAtom::Kind::PtrEq:
          v = c.nu_p.at(s.hc.p) == c.nu_p.at(s.hc.q);
          break;
        case CondAtom::Kind::FieldPtrEq: {
          NodeId base = c.nu_p.at(s.hc.p);
          if (base == kNil) return StepError{"NilDereference"};
          NodeId f = c.heap.pf[p.pf_index(s.hc.pf)].at(base);
          NodeId rhs = s.hc.q.empty() ? kNil : c.nu_p.at(s.hc.q);
          v = f == rhs;
          break;
        }
        default:
          return StepError{"bad heap condition"};
      }
      n.nu_d[s.d] = v ? 1 : 0;
      return advance(std::move(n));
    }
    case K::New: {
      Configuration n = c;
      NodeId id = 1;
      for (NodeId x : c.heap.nodes) id = std::max(id, x + 1);
      n.heap.nodes.push_back(id);
      std::sort(n.heap.nodes.begin(), n.heap.nodes.end());
      n.heap.data[id] = 0;  // fresh data initialized to 0
      for (int j = 0; j < p.k(); ++j) n.heap.pf[j][id] = kNil;
      n.nu_p[s.p] = id;
      return advance(std::move(n));
    }
    case K::Free: {
      NodeId tgt = c.nu_p.at(s.p);
      if (tgt == kNil) return StepError{"NilFree"};
      Configuration n = c;
      n.heap.nodes.erase(std::remove(n.heap.nodes.begin(), n.heap.nodes.end(), tgt),
                         n.heap.nodes.end());
      n.heap.data.erase(tgt);
      for (int j = 0; j < p.k(); ++j) {
        n.heap.pf[j].erase(tgt);
        for (auto& [node, v] : n.heap.pf[j])
          if (v == tgt) v = kNil;
      }
      for (auto& [var, v] : n.nu_p)
        if (v == tgt) v = kNil;
      return advance(std::move(n));
    }
    case K::Branch: {
      // short-circuit conjunction; dereferences may fault
      bool value = true;
      for (const CondAtom& a : s.cond) {
        bool v;
        if (a.kind == CondAtom::Kind::FieldPtrEq) {
          NodeId base = c.nu_p.at(a.p);
          if (base == kNil) return StepError{"NilDereference"};
          NodeId f = c.heap.pf[p.pf_index(a.pf)].at(base);
          NodeId rhs = a.q.empty() ? kNil : c.nu_p.at(a.q);
          v = (f == rhs);
          if (a.neg) v = !v;
        } else {
          try {
            v = eval_atom(a, c);
          } catch (const NilDeref&) {
            return StepError{"NilDereference"};
          }
        }
        if (!v) { value = false; break; }
      }
      return advance(c, value);
    }
  }
  return StepError{"unhandled statement"};
}

Execution run(const Program& p, const DataTree& t,
              const std::map<std::string, std::int64_t>& data_seed, int fuel) {
  Execution e;
  e.configs.push_back(initial_config(p, t, data_seed));
  for (int i = 0; i < fuel; ++i) {
    StepResult r = step(p, e.configs.back());
    if (std::holds_alternative<StepFinal>(r)) {
      e.outcome = Outcome::Final;
      return e;
    }
    if (auto* err = std::get_if<StepError>(&r)) {
      e.outcome = Outcome::Error;
      e.error_reason = err->reason;
      return e;
    }
    e.configs.push_back(std::move(std::get<StepNext>(r).config));
  }
  e.outcome = Outcome::OutOfFuel;
  return e;
}

std::vector<std::int64_t> read_list(const Heap& h, NodeId head, int max_len) {
  std::vector<std::int64_t> out;
  NodeId cur = head;
  while (cur != kNil && static_cast<int>(out.size()) < max_len) {
    out.push_back(h.data.at(cur));
    cur = h.pf.at(0).at(cur);
  }
  return out;
}

}  // namespace kw
