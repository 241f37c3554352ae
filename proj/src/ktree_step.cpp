#include <algorithm>
#include <functional>

#include "kw/ktree.hpp"

namespace kw {
namespace {

// ---------------------------------------------------------------------------
// Log queries
// ---------------------------------------------------------------------------

// latest position <= bound whose upd flag for q is set; 2 when none
int last_upd(const Log& L, int bound, int q) {
  for (int i = bound; i >= 2; --i)
    if (L.at(i).upd[q]) return i;
  return 2;
}

// rewinding position encoded in the top frame, if any
int cur_rewind_pos(const Log& L, int a) {
  const Event& e = L.at(a).event;
  if (e.kind == Event::Kind::Rwd || e.kind == Event::Kind::RwdP) return e.pos;
  return a;
}

// index of the last <pf := ...> event in [2, bound]; 0 when none
int last_field_event(const Log& L, int bound, int pf) {
  for (int i = bound; i >= 2; --i) {
    const Event& e = L.at(i).event;
    if ((e.kind == Event::Kind::FieldAssignNil ||
         e.kind == Event::Kind::FieldAssignPtr) &&
        e.field == pf)
      return i;
  }
  return 0;
}

// q points to this node as of frame `bound`: an unrevoked <q := here>
bool points_here(const Log& L, int bound, int q) {
  for (int i = 2; i <= bound; ++i) {
    const Frame& f = L.at(i);
    if (f.event.kind == Event::Kind::PtrHere && f.event.ptr == q) {
      bool clean = true;
      for (int w = i + 1; w <= bound; ++w)
        if (L.at(w).upd[q]) { clean = false; break; }
      if (clean) return true;
    }
  }
  return false;
}

// witness of points_here: the position of the unrevoked assignment
int points_here_pos(const Log& L, int bound, int q) {
  for (int i = bound; i >= 2; --i) {
    const Frame& f = L.at(i);
    if (f.event.kind == Event::Kind::PtrHere && f.event.ptr == q) {
      bool clean = true;
      for (int w = i + 1; w <= bound; ++w)
        if (L.at(w).upd[q]) { clean = false; break; }
      if (clean) return i;
      return 0;  // later updates revoke every earlier assignment too
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

struct Decision {
  bool terminal = false;
  bool inapplicable = false;  // needed a neighbor the caller cannot provide
  Dir move = Dir::self();

  enum class Act {
    AdvanceOnly,  // skip / goto
    DataAssign,   // d := exp
    SetNil,       // isnil[pv] := true, pc advances
    SetHere,      // <pv := here>, pc advances
    FieldWrite,   // <pf := q> or <pf := nil>, pc advances
    ValWrite,     // val := exp, pc advances
    ValRead,      // d := node val, pc advances
    FreeHere,     // deallocation completes here
    NewHere,      // allocation lands here
    BranchGo,     // pc := succ(pc, value)
    CondSet,      // d := value, pc advances
    Rwd,          // rewinding hop, pc unchanged
    RwdP,         // second-phase rewinding hop, pc unchanged
    Err, Oom
  } act = Act::AdvanceOnly;

  int pv = -1;       // pointer operand
  int pf = -1;       // field operand
  int dv = -1;       // data operand
  bool field_nil = false;
  bool value = false;
  int rwd_sub = 0;
  int rwd_ptr = -1;
  DataExpP exp;
};

using NeighborFn = std::function<const Log*(Dir)>;

struct Walker {
  int p1 = -1, p2 = -1;  // one or two pointers

  bool stop(const Log& L, int pos) const {
    if (points_here(L, pos, p1)) return true;
    return p2 >= 0 && points_here(L, pos, p2);
  }
  int relevant(const Log& L, int pos) const {
    int r = last_upd(L, pos, p1);
    if (p2 >= 0) r = std::max(r, last_upd(L, pos, p2));
    return r;
  }
};

struct HopInfo {
  bool ok = false;        // neighbor resolved
  Dir dir;                // direction of the hop (from the source node)
  int b_prime = 0;        // entry position within the target log
  const Log* tau = nullptr;
  bool stop_at_target = false;
  int subscript = 0;      // rwd subscript when continuing
};

HopInfo compute_hop(const Log& sigma, int pos, const Walker& w,
                    const NeighborFn& neighbor) {
  HopInfo h;
  int a2 = w.relevant(sigma, pos);
  const Link& link = sigma.at(a2).prev;
  if (link.dir.kind == DirKind::Self)
    throw MalformedLaceError("rewinding fell off the start of the lace");
  h.dir = link.dir;
  h.b_prime = link.index;
  h.tau = neighbor(link.dir);
  if (!h.tau) return h;  // caller cannot provide this neighbor
  h.ok = true;
  h.stop_at_target = w.stop(*h.tau, h.b_prime);
  if (!h.stop_at_target) h.subscript = w.relevant(*h.tau, h.b_prime);
  return h;
}

// Branch-condition evaluation. Global state (isnil flags, data variables)
// comes from `f`, the current lace-end frame; pointer locality is judged
// against the log `L` at position `pos` (the node the lace is inspecting).
struct BranchOutcome {
  enum class Kind { Err, Local, NeedWalk } kind = Kind::Local;
  bool value = false;
  Walker walker;
  size_t walk_atom = 0;
};

BranchOutcome eval_branch(const Program& prog, const Cond& cond, const Frame& f,
                          const Log& L, int pos) {
  BranchOutcome out;
  for (size_t idx = 0; idx < cond.size(); ++idx) {
    const CondAtom& atom = cond[idx];
    bool v = false;
    switch (atom.kind) {
      case CondAtom::Kind::PtrNil: {
        int p = prog.pv_index(atom.p);
        v = f.isnil[p];
        if (atom.neg) v = !v;
        break;
      }
      case CondAtom::Kind::PtrEq: {
        int p = prog.pv_index(atom.p), q = prog.pv_index(atom.q);
        if (f.isnil[p] || f.isnil[q]) {
          v = f.isnil[p] == f.isnil[q];
        } else if (points_here(L, pos, p) || points_here(L, pos, q)) {
          v = points_here(L, pos, p) && points_here(L, pos, q);
        } else {
          out.kind = BranchOutcome::Kind::NeedWalk;
          out.walker = {p, q};
          out.walk_atom = idx;
          return out;
        }
        if (atom.neg) v = !v;
        break;
      }
      case CondAtom::Kind::DataRel: {
        // find the dereferenced pointer, if any
        std::function<const DataExp*(const DataExpP&)> find_read =
            [&](const DataExpP& e) -> const DataExp* {
          if (!e) return nullptr;
          if (e->kind == DataExp::Kind::FieldRead) return e.get();
          if (const DataExp* l = find_read(e->lhs)) return l;
          return find_read(e->rhs);
        };
        const DataExp* rd = find_read(atom.exp);
        std::int64_t node_val = 0;
        if (rd) {
          int p = prog.pv_index(rd->name);
          if (f.isnil[p]) {
            out.kind = BranchOutcome::Kind::Err;
            return out;
          }
          if (!points_here(L, pos, p)) {
            out.kind = BranchOutcome::Kind::NeedWalk;
            out.walker = {p, -1};
            out.walk_atom = idx;
            return out;
          }
          node_val = L.at(L.top()).val;
        }
        std::function<std::int64_t(const DataExpP&)> ev =
            [&](const DataExpP& e) -> std::int64_t {
          using K = DataExp::Kind;
          switch (e->kind) {
            case K::IntLit: return e->ival;
            case K::BoolLit: return e->bval;
            case K::Var: return f.d[prog.dv_index(e->name)];
            case K::FieldRead: return node_val;
            case K::Neg: return -ev(e->lhs);
            case K::Not: return !ev(e->lhs);
            case K::Add: return ev(e->lhs) + ev(e->rhs);
            case K::Sub: return ev(e->lhs) - ev(e->rhs);
            case K::Mul: return ev(e->lhs) * ev(e->rhs);
            case K::Eq: return ev(e->lhs) == ev(e->rhs);
            case K::Ne: return ev(e->lhs) != ev(e->rhs);
            case K::Lt: return ev(e->lhs) < ev(e->rhs);
            case K::Le: return ev(e->lhs) <= ev(e->rhs);
            case K::Gt: return ev(e->lhs) > ev(e->rhs);
            case K::Ge: return ev(e->lhs) >= ev(e->rhs);
            case K::And: return ev(e->lhs) && ev(e->rhs);
            case K::Or: return ev(e->lhs) || ev(e->rhs);
          }
          return 0;
        };
        v = ev(atom.exp) != 0;
        if (atom.neg) v = !v;
        break;
      }
      case CondAtom::Kind::FieldPtrEq:
        throw NoStepApplicableError("compound field conditions require desugaring");
    }
    if (!v) {
      out.kind = BranchOutcome::Kind::Local;
      out.value = false;
      return out;
    }
  }
  out.kind = BranchOutcome::Kind::Local;
  out.value = true;
  return out;
}

Decision decide(const Program& prog, const Params& ps, const Log& sigma,
                const NeighborFn& neighbor) {
  Decision d;
  int a = sigma.top();
  if (a < 2) throw MalformedLaceError("dispatch on a log without lace frames");
  const Frame& f = sigma.at(a);
  if (a == ps.n + 1 || f.event.is_terminal() || prog.is_exit(f.pc)) {
    d.terminal = true;
    return d;
  }
  const Stmt& stmt = prog.at(f.pc);
  using SK = Stmt::Kind;

  auto internal = [&](Decision::Act act) {
    d.move = Dir::self();
    d.act = act;
  };
  auto hop_or = [&](const Walker& w, int pos,
                    const std::function<void(const HopInfo&)>& on_arrival_stop) {
    HopInfo h = compute_hop(sigma, pos, w, neighbor);
    if (!h.tau) { d.inapplicable = true; return; }
    d.move = h.dir;
    if (h.stop_at_target) {
      on_arrival_stop(h);
    } else {
      d.act = Decision::Act::Rwd;
      d.rwd_sub = h.subscript;
    }
  };

  switch (stmt.kind) {
    case SK::Exit:
      d.terminal = true;
      return d;

    case SK::Skip:
    case SK::Goto:
      internal(Decision::Act::AdvanceOnly);
      return d;

    case SK::AssignData:
      internal(Decision::Act::DataAssign);
      d.dv = prog.dv_index(stmt.d);
      d.exp = stmt.exp;
      return d;

    case SK::AssignNil:
      internal(Decision::Act::SetNil);
      d.pv = prog.pv_index(stmt.p);
      return d;

    case SK::AssignPtr: {
      int p = prog.pv_index(stmt.p), q = prog.pv_index(stmt.q);
      if (f.isnil[q]) {
        internal(Decision::Act::SetNil);
        d.pv = p;
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      if (points_here(sigma, pos, q)) {
        internal(Decision::Act::SetHere);
        d.pv = p;
        return d;
      }
      hop_or({q, -1}, pos, [&](const HopInfo&) {
        d.act = Decision::Act::SetHere;
        d.pv = p;
      });
      return d;
    }

    case SK::AssignToFieldPtr:
    case SK::AssignToFieldNil: {
      int p = prog.pv_index(stmt.p);
      int pf = prog.pf_index(stmt.pf);
      bool write_nil = stmt.kind == SK::AssignToFieldNil ||
                       f.isnil[prog.pv_index(stmt.q)];
      int q = stmt.kind == SK::AssignToFieldPtr ? prog.pv_index(stmt.q) : -1;
      if (f.isnil[p]) {
        internal(Decision::Act::Err);
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      auto complete = [&]() {
        d.act = Decision::Act::FieldWrite;
        d.pf = pf;
        d.pv = q;
        d.field_nil = write_nil;
      };
      if (points_here(sigma, pos, p)) {
        d.move = Dir::self();
        complete();
        return d;
      }
      hop_or({p, -1}, pos, [&](const HopInfo&) { complete(); });
      return d;
    }

    case SK::WriteData: {
      int p = prog.pv_index(stmt.p);
      if (f.isnil[p]) {
        internal(Decision::Act::Err);
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      auto complete = [&]() {
        d.act = Decision::Act::ValWrite;
        d.exp = stmt.exp;
      };
      if (points_here(sigma, pos, p)) {
        d.move = Dir::self();
        complete();
        return d;
      }
      hop_or({p, -1}, pos, [&](const HopInfo&) { complete(); });
      return d;
    }

    case SK::ReadData: {
      int p = prog.pv_index(stmt.p);
      if (f.isnil[p]) {
        internal(Decision::Act::Err);
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      auto complete = [&]() {
        d.act = Decision::Act::ValRead;
        d.dv = prog.dv_index(stmt.d);
      };
      if (points_here(sigma, pos, p)) {
        d.move = Dir::self();
        complete();
        return d;
      }
      hop_or({p, -1}, pos, [&](const HopInfo&) { complete(); });
      return d;
    }

    case SK::Free: {
      int p = prog.pv_index(stmt.p);
      if (f.isnil[p]) {
        internal(Decision::Act::Err);
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      if (points_here(sigma, pos, p)) {
        internal(Decision::Act::FreeHere);
        return d;
      }
      hop_or({p, -1}, pos, [&](const HopInfo&) { d.act = Decision::Act::FreeHere; });
      return d;
    }

    case SK::New: {
      int p = prog.pv_index(stmt.p);
      int target = 0;
      for (int j = ps.k + 1; j <= ps.arity(); ++j)
        if (!f.active_child[j - 1]) { target = j; break; }
      if (target == 0) {
        internal(Decision::Act::Oom);
        return d;
      }
      d.move = Dir::down(target);
      d.act = Decision::Act::NewHere;
      d.pv = p;
      if (!neighbor(d.move)) d.inapplicable = true;
      return d;
    }

    case SK::AssignHeapCond: {
      int dvi = prog.dv_index(stmt.d);
      if (stmt.hc.kind == CondAtom::Kind::PtrNil) {
        internal(Decision::Act::CondSet);
        d.dv = dvi;
        d.value = f.isnil[prog.pv_index(stmt.hc.p)];
        return d;
      }
      if (stmt.hc.kind != CondAtom::Kind::PtrEq)
        throw NoStepApplicableError("heap-condition assignment requires desugaring");
      int p = prog.pv_index(stmt.hc.p), q = prog.pv_index(stmt.hc.q);
      if (f.isnil[p] || f.isnil[q]) {
        internal(Decision::Act::CondSet);
        d.dv = dvi;
        d.value = f.isnil[p] == f.isnil[q];
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      if (points_here(sigma, pos, p) || points_here(sigma, pos, q)) {
        internal(Decision::Act::CondSet);
        d.dv = dvi;
        d.value = points_here(sigma, pos, p) && points_here(sigma, pos, q);
        return d;
      }
      hop_or({p, q}, pos, [&](const HopInfo& h) {
        d.act = Decision::Act::CondSet;
        d.dv = dvi;
        d.value = points_here(*h.tau, h.b_prime, p) && points_here(*h.tau, h.b_prime, q);
      });
      return d;
    }

    case SK::Branch: {
      int pos = cur_rewind_pos(sigma, a);
      BranchOutcome bo = eval_branch(prog, stmt.cond, f, sigma, pos);
      if (bo.kind == BranchOutcome::Kind::Err) {
        internal(Decision::Act::Err);
        return d;
      }
      if (bo.kind == BranchOutcome::Kind::Local) {
        internal(Decision::Act::BranchGo);
        d.value = bo.value;
        return d;
      }
      hop_or(bo.walker, pos, [&](const HopInfo& h) {
        // resume evaluation at the target with the walk atom resolved there
        Cond rest(stmt.cond.begin() + bo.walk_atom, stmt.cond.end());
        BranchOutcome res = eval_branch(prog, rest, f, *h.tau, h.b_prime);
        if (res.kind != BranchOutcome::Kind::Local)
          throw NoStepApplicableError("chained rewinds in one condition");
        d.act = Decision::Act::BranchGo;
        d.value = res.value;
      });
      return d;
    }

    case SK::AssignFromField: {
      int p = prog.pv_index(stmt.p), q = prog.pv_index(stmt.q);
      int pf = prog.pf_index(stmt.pf);

      // completion of a pointer-chase with the target node known: respect
      // deallocation, a field into a freed node reads as nil
      auto complete_here = [&](bool target_active) {
        d.move = Dir::self();
        if (target_active) {
          d.act = Decision::Act::SetHere;
          d.pv = p;
        } else {
          d.act = Decision::Act::SetNil;
          d.pv = p;
        }
      };
      auto complete_at = [&](const HopInfo& h) {
        if (h.tau->at(h.tau->top()).active) {
          d.act = Decision::Act::SetHere;
          d.pv = p;
        } else {
          d.act = Decision::Act::SetNil;
          d.pv = p;
        }
      };

      if (f.event.kind == Event::Kind::RwdP) {
        // phase two: chasing r from the recorded position
        int r = f.event.ptr;
        int i = f.event.pos;
        if (points_here(sigma, i, r)) {
          complete_here(f.active);
          return d;
        }
        HopInfo h = compute_hop(sigma, i, Walker{r, -1}, neighbor);
        if (!h.tau) { d.inapplicable = true; return d; }
        d.move = h.dir;
        if (h.stop_at_target) {
          complete_at(h);
        } else {
          d.act = Decision::Act::RwdP;
          d.rwd_sub = h.subscript;
          d.rwd_ptr = r;
        }
        return d;
      }

      // phase one: find q's node
      if (f.isnil[q]) {
        internal(Decision::Act::Err);
        return d;
      }
      int pos = cur_rewind_pos(sigma, a);
      if (!points_here(sigma, pos, q)) {
        HopInfo h = compute_hop(sigma, pos, Walker{q, -1}, neighbor);
        if (!h.tau) { d.inapplicable = true; return d; }
        d.move = h.dir;
        d.act = Decision::Act::Rwd;
        // on arrival at q's node the position is recorded verbatim so the
        // next step resolves the field there
        d.rwd_sub = h.stop_at_target ? h.b_prime : h.subscript;
        return d;
      }

      // at q's node: resolve the field
      int ev = last_field_event(sigma, a, pf);
      if (ev == 0) {
        // implicit: the original j-th child, when still allocated
        int jf = pf + 1;
        if (f.active_child[jf - 1]) {
          d.move = Dir::down(jf);
          d.act = Decision::Act::SetHere;
          d.pv = p;
          if (!neighbor(d.move)) d.inapplicable = true;
        } else {
          internal(Decision::Act::SetNil);
          d.pv = p;
        }
        return d;
      }
      const Event& fe = sigma.at(ev).event;
      if (fe.kind == Event::Kind::FieldAssignNil) {
        internal(Decision::Act::SetNil);
        d.pv = p;
        return d;
      }
      // <pf := r> recorded at position ev: find where r pointed then
      int r = fe.ptr;
      if (points_here(sigma, ev, r)) {
        complete_here(f.active);
        return d;
      }
      HopInfo h = compute_hop(sigma, ev, Walker{r, -1}, neighbor);
      if (!h.tau) { d.inapplicable = true; return d; }
      d.move = h.dir;
      if (h.stop_at_target) {
        complete_at(h);
      } else {
        d.act = Decision::Act::RwdP;
        d.rwd_sub = h.subscript;
        d.rwd_ptr = r;
      }
      return d;
    }
  }
  throw NoStepApplicableError("unhandled statement kind");
}

// ---------------------------------------------------------------------------
// Frame construction
// ---------------------------------------------------------------------------

std::int64_t eval_data_exp(const Program& prog, const DataExpP& e,
                           const std::vector<std::int64_t>& dvals) {
  using K = DataExp::Kind;
  switch (e->kind) {
    case K::IntLit: return e->ival;
    case K::BoolLit: return e->bval;
    case K::Var: return dvals[prog.dv_index(e->name)];
    case K::FieldRead: throw NoStepApplicableError("field read in plain expression");
    case K::Neg: return -eval_data_exp(prog, e->lhs, dvals);
    case K::Not: return !eval_data_exp(prog, e->lhs, dvals);
    case K::Add: return eval_data_exp(prog, e->lhs, dvals) + eval_data_exp(prog, e->rhs, dvals);
    case K::Sub: return eval_data_exp(prog, e->lhs, dvals) - eval_data_exp(prog, e->rhs, dvals);
    case K::Mul: return eval_data_exp(prog, e->lhs, dvals) * eval_data_exp(prog, e->rhs, dvals);
    case K::Eq: return eval_data_exp(prog, e->lhs, dvals) == eval_data_exp(prog, e->rhs, dvals);
    case K::Ne: return eval_data_exp(prog, e->lhs, dvals) != eval_data_exp(prog, e->rhs, dvals);
    case K::Lt: return eval_data_exp(prog, e->lhs, dvals) < eval_data_exp(prog, e->rhs, dvals);
    case K::Le: return eval_data_exp(prog, e->lhs, dvals) <= eval_data_exp(prog, e->rhs, dvals);
    case K::Gt: return eval_data_exp(prog, e->lhs, dvals) > eval_data_exp(prog, e->rhs, dvals);
    case K::Ge: return eval_data_exp(prog, e->lhs, dvals) >= eval_data_exp(prog, e->rhs, dvals);
    case K::And: return eval_data_exp(prog, e->lhs, dvals) && eval_data_exp(prog, e->rhs, dvals);
    case K::Or: return eval_data_exp(prog, e->lhs, dvals) || eval_data_exp(prog, e->rhs, dvals);
  }
  return 0;
}

// Builds the new frame for a decided move. For across moves, `tau` is the
// target log and `child_of_target` the child slot the source occupies in the
// target (Up moves) — 0 otherwise.
Frame make_frame(const Program& prog, const Params& ps, const Log& sigma,
                 const Decision& d, const Log* tau, int child_of_target) {
  int a = sigma.top();
  const Frame& fprev = sigma.at(a);
  bool internal = d.move.kind == DirKind::Self;
  const Log& target = internal ? sigma : *tau;
  int b = target.top() + 1;
  const Frame& fbelow = target.at(b - 1);

  Frame f;
  f.avail = false;
  f.active = fbelow.active;
  f.val = fbelow.val;
  f.pc = fprev.pc;
  f.d = fprev.d;
  f.isnil = fprev.isnil;
  f.event = Event::nop();
  f.upd.assign(prog.pointer_vars.size(), 0);
  f.next = {Dir::self(), b};  // sentinel until the lace is extended

  // prev and active_child depend on the hop direction
  if (internal) {
    f.prev = {Dir::self(), a};
    f.active_child = fbelow.active_child;
  } else {
    if (d.move.kind == DirKind::Up) {
      // the new frame sits on the parent; the source is its child
      f.prev = {Dir::down(child_of_target), a};
    } else {
      f.prev = {Dir::up(), a};
    }
    f.active_child = fbelow.active_child;
    if (f.prev.dir.kind == DirKind::Child)
      f.active_child[f.prev.dir.child - 1] = fprev.active ? 1 : 0;
  }

  // raw update bridge: was each pointer assigned inside the excursion the
  // lace made since this node's previous frame?
  std::vector<std::uint8_t> raw(prog.pointer_vars.size(), 0);
  if (!internal && b > 2) {
    const Link& dep = target.at(b - 1).next;
    bool points_to_source =
        (d.move.kind == DirKind::Up && dep.dir.kind == DirKind::Child &&
         dep.dir.child == child_of_target) ||
        (d.move.kind == DirKind::Child && dep.dir.kind == DirKind::Up);
    if (points_to_source) {
      int aq = dep.index;  // entry position of the excursion in the source log
      for (size_t p = 0; p < raw.size(); ++p) {
        bool hit = false;
        for (int c = aq; c <= a && !hit; ++c) {
          const Event& e = sigma.at(c).event;
          if (e.kind == Event::Kind::PtrHere && e.ptr == static_cast<int>(p))
            hit = true;
        }
        for (int c = aq + 1; c <= a && !hit; ++c)
          if (sigma.at(c).upd[p]) hit = true;
        raw[p] = hit;
      }
    }
  }

  auto advance = [&](std::optional<bool> br = std::nullopt) {
    auto nx = succ(prog, fprev.pc, br);
    if (!nx) throw MalformedLaceError("advancing past a statement with no successor");
    f.pc = *nx;
  };

  switch (d.act) {
    case Decision::Act::AdvanceOnly:
      advance();
      break;
    case Decision::Act::DataAssign:
      advance();
      f.d[d.dv] = eval_data_exp(prog, d.exp, fprev.d);
      break;
    case Decision::Act::SetNil:
      advance();
      f.isnil[d.pv] = 1;
      break;
    case Decision::Act::SetHere:
      advance();
      f.event = Event::ptr_here(d.pv);
      f.isnil[d.pv] = 0;
      break;
    case Decision::Act::FieldWrite:
      advance();
      f.event = d.field_nil ? Event::field_nil(d.pf) : Event::field_ptr(d.pf, d.pv);
      break;
    case Decision::Act::ValWrite:
      advance();
      f.val = eval_data_exp(prog, d.exp, fprev.d);
      break;
    case Decision::Act::ValRead:
      advance();
      f.d[d.dv] = fbelow.val;
      break;
    case Decision::Act::FreeHere: {
      advance();
      f.active = false;
      for (size_t q = 0; q < f.isnil.size(); ++q) {
        bool here = points_here(target, b - 1, static_cast<int>(q)) && !raw[q];
        if (here) f.isnil[q] = 1;
      }
      break;
    }
    case Decision::Act::NewHere:
      advance();
      f.event = Event::ptr_here(d.pv);
      f.active = true;
      f.isnil[d.pv] = 0;
      break;
    case Decision::Act::BranchGo:
      advance(d.value);
      break;
    case Decision::Act::CondSet:
      advance();
      f.d[d.dv] = d.value ? 1 : 0;
      break;
    case Decision::Act::Rwd:
      f.event = Event::rwd(d.rwd_sub);
      break;
    case Decision::Act::RwdP:
      f.event = Event::rwd_p(d.rwd_sub, d.rwd_ptr);
      break;
    case Decision::Act::Err:
      f.event = Event::err();
      break;
    case Decision::Act::Oom:
      f.event = Event::oom();
      break;
  }

  // final update flags: assigned in the bridged excursion and non-nil now
  for (size_t p = 0; p < raw.size(); ++p)
    f.upd[p] = raw[p] && !f.isnil[p] ? 1 : 0;
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public stepping interface
// ---------------------------------------------------------------------------

BuildStep next_build_step(const Program& prog, const KnittedTree& kt) {
  FrameId end = kt.lace_end();
  int u = end.node;
  const Log& sigma = kt.logs[u];
  NeighborFn nb = [&](Dir dir) -> const Log* {
    int v = -1;
    if (dir.kind == DirKind::Up) v = kt.backbone.parent[u];
    else if (dir.kind == DirKind::Child) v = kt.backbone.child(u, dir.child);
    if (v < 0) return nullptr;
    return &kt.logs[v];
  };
  Decision d = decide(prog, kt.params, sigma, nb);
  BuildStep out;
  if (d.terminal) {
    out.terminal = true;
    return out;
  }
  if (d.inapplicable)
    throw MalformedLaceError("step requires a neighbor outside the backbone");
  int target = u;
  int child_of_target = 0;
  const Log* tau = nullptr;
  if (d.move.kind == DirKind::Up) {
    target = kt.backbone.parent[u];
    tau = &kt.logs[target];
    child_of_target = kt.backbone.child_index_of(u);
  } else if (d.move.kind == DirKind::Child) {
    target = kt.backbone.child(u, d.move.child);
    tau = &kt.logs[target];
  }
  out.target = target;
  out.frame = make_frame(prog, kt.params, sigma, d, tau, child_of_target);
  return out;
}

KnittedTree build_kt(const Program& p, const DataTree& t, int m, int n,
                     const std::map<std::string, std::int64_t>& data_seed,
                     long fuel) {
  KnittedTree kt = kt_init(p, t, m, n, data_seed);
  for (;;) {
    BuildStep s = next_build_step(p, kt);
    if (s.terminal) return kt;
    if (fuel-- <= 0) throw FuelExhaustedError("frame budget exhausted");
    FrameId end = kt.lace_end();
    Log& target = kt.logs[s.target];
    int b = target.top() + 1;
    if (b > kt.params.log_size())
      throw MalformedLaceError("push into a full log");
    target.at(b) = s.frame;
    // finalize the previous frame's next link
    Dir dir = Dir::self();
    if (s.target != end.node) {
      if (kt.backbone.parent[end.node] == s.target) dir = Dir::up();
      else dir = Dir::down(kt.backbone.child_index_of(s.target));
    }
    kt.logs[end.node].at(end.index).next = {dir, b};
  }
}

Frame step_internal(const Program& prog, const Params& ps, const Log& sigma) {
  NeighborFn none = [](Dir) -> const Log* { return nullptr; };
  Decision d = decide(prog, ps, sigma, none);
  if (d.terminal) throw NoStepApplicableError("terminal frame");
  if (d.inapplicable || d.move.kind != DirKind::Self)
    throw NoStepApplicableError("next step is not internal");
  return make_frame(prog, ps, sigma, d, nullptr, 0);
}

Frame step_up(const Program& prog, const Params& ps, const Log& child, int j,
              const Log& parent) {
  NeighborFn nb = [&](Dir dir) -> const Log* {
    return dir.kind == DirKind::Up ? &parent : nullptr;
  };
  Decision d = decide(prog, ps, child, nb);
  if (d.terminal) throw NoStepApplicableError("terminal frame");
  if (d.inapplicable || d.move.kind != DirKind::Up)
    throw NoStepApplicableError("next step does not go up");
  return make_frame(prog, ps, child, d, &parent, j);
}

Frame step_down(const Program& prog, const Params& ps, const Log& parent, int j,
                const Log& child) {
  NeighborFn nb = [&](Dir dir) -> const Log* {
    return dir.kind == DirKind::Child && dir.child == j ? &child : nullptr;
  };
  Decision d = decide(prog, ps, parent, nb);
  if (d.terminal) throw NoStepApplicableError("terminal frame");
  if (d.inapplicable || d.move.kind != DirKind::Child || d.move.child != j)
    throw NoStepApplicableError("next step does not go down to this child");
  return make_frame(prog, ps, parent, d, &child, 0);
}

// ---------------------------------------------------------------------------
// consistent_child
// ---------------------------------------------------------------------------

namespace {

Log view_at_most(const Log& L, int bound) {
  Log v = L;
  for (int i = bound + 1; i <= v.size(); ++i) {
    Frame& f = v.at(i);
    Frame blank;
    blank.avail = true;
    blank.d.assign(f.d.size(), 0);
    blank.upd.assign(f.upd.size(), 0);
    blank.isnil.assign(f.isnil.size(), 0);
    blank.active_child.assign(f.active_child.size(), 0);
    f = blank;
  }
  return v;
}

bool frame_continues(const Program& prog, const Frame& f) {
  return !f.avail && !f.event.is_terminal() && !prog.is_exit(f.pc);
}

// does the recomputed down-step from (sigma,a) into child j reproduce tau^b?
bool psi_down_holds(const Program& prog, const Params& ps, const Log& sigma, int a,
                    int j, const Log& tau, int b) {
  if (sigma.at(a).avail || !frame_continues(prog, sigma.at(a))) return false;
  if (sigma.at(a).next != Link{Dir::down(j), b}) return false;
  if (b >= 3 && tau.at(b - 1).avail) return false;
  if (tau.at(b).prev != Link{Dir::up(), a}) return false;
  Log sv = view_at_most(sigma, a);
  Log tv = view_at_most(tau, b - 1);
  try {
    Frame expected = step_down(prog, ps, sv, j, tv);
    return tau.at(b).equal_mod_next(expected);
  } catch (const NoStepApplicableError&) {
    return false;
  } catch (const MalformedLaceError&) {
    return false;
  }
}

bool psi_up_holds(const Program& prog, const Params& ps, const Log& tau, int a,
                  int j, const Log& sigma, int b) {
  if (tau.at(a).avail || !frame_continues(prog, tau.at(a))) return false;
  if (tau.at(a).next != Link{Dir::up(), b}) return false;
  if (b >= 3 && sigma.at(b - 1).avail) return false;
  if (sigma.at(b).prev != Link{Dir::down(j), a}) return false;
  Log tv = view_at_most(tau, a);
  Log sv = view_at_most(sigma, b - 1);
  try {
    Frame expected = step_up(prog, ps, tv, j, sv);
    return sigma.at(b).equal_mod_next(expected);
  } catch (const NoStepApplicableError&) {
    return false;
  } catch (const MalformedLaceError&) {
    return false;
  }
}

}  // namespace

bool consistent_child(const Program& prog, const Params& ps, const Log& tau, int j,
                      const Log& sigma) {
  // first frames: activity must follow the backbone rules
  bool initial_sigma = !sigma.at(2).avail && sigma.at(2).prev == Link{Dir::self(), 2};
  if (!(initial_sigma || sigma.at(1).active)) return false;
  if (tau.at(1).active && !sigma.at(1).active) return false;
  if (j > ps.k && tau.at(1).active) return false;
  if ((sigma.at(1).active_child[j - 1] != 0) != (tau.at(1).active != 0)) return false;

  int n = ps.n;
  for (int a = 2; a <= n; ++a) {
    for (int b = 2; b <= n + 1; ++b) {
      bool down_trigger =
          (!sigma.at(a).avail && sigma.at(a).next == Link{Dir::down(j), b} &&
           !tau.at(b).avail) ||
          (!tau.at(b).avail && tau.at(b).prev == Link{Dir::up(), a});
      if (down_trigger && !psi_down_holds(prog, ps, sigma, a, j, tau, b))
        return false;
      bool up_trigger =
          (!tau.at(a).avail && tau.at(a).next == Link{Dir::up(), b} &&
           !sigma.at(b).avail) ||
          (!sigma.at(b).avail && sigma.at(b).prev == Link{Dir::down(j), a});
      if (up_trigger && !psi_up_holds(prog, ps, tau, a, j, sigma, b))
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Observation: find_ptr, heap_of, ptrvals_of, exec_decode
// ---------------------------------------------------------------------------

namespace {

int neighbor_node(const Backbone& b, int u, const Dir& dir) {
  if (dir.kind == DirKind::Up) return b.parent[u];
  if (dir.kind == DirKind::Child) return b.child(u, dir.child);
  return u;
}

// Walks backward from (node, pos) to the node q currently points to (as of
// that position); optionally records the shortcut sequence.
int walk_to(const KnittedTree& kt, int q, int node, int pos,
            std::vector<FrameId>* trail) {
  const Log* L = &kt.logs[node];
  for (;;) {
    if (points_here(*L, pos, q)) return node;
    int a2 = last_upd(*L, pos, q);
    const Link& link = L->at(a2).prev;
    if (link.dir.kind == DirKind::Self)
      throw NotFoundError("no assignment found while rewinding");
    int v = neighbor_node(kt.backbone, node, link.dir);
    if (v < 0) throw NotFoundError("rewinding left the backbone");
    const Log& Lv = kt.logs[v];
    int bp = link.index;
    if (points_here(Lv, bp, q)) {
      if (trail) trail->push_back({v, points_here_pos(Lv, bp, q)});
      return v;
    }
    int s = last_upd(Lv, bp, q);
    if (trail) trail->push_back({v, s});
    node = v;
    L = &kt.logs[v];
    pos = s;
  }
}

}  // namespace

std::vector<FrameId> find_ptr(const Program& prog, const KnittedTree& kt, int p,
                              FrameId from) {
  const Log& L = kt.logs[from.node];
  if (L.at(from.index).isnil[p]) throw NotFoundError("pointer is nil");
  int pos = cur_rewind_pos(L, from.index);
  std::vector<FrameId> trail;
  walk_to(kt, p, from.node, pos, &trail);
  return trail;
}

namespace {

// node-id assignment mirroring the interpreter: input nodes breadth-first,
// then allocations in lace order
std::map<int, NodeId> decode_ids(const KnittedTree& kt) {
  std::map<int, NodeId> ids;
  NodeId next = 1;
  for (int u = 0; u < kt.backbone.size(); ++u)
    if (kt.logs[u].at(1).active) ids[u] = next++;
  for (const FrameId& fid : kt.lace()) {
    const Log& L = kt.logs[fid.node];
    if (fid.index >= 2 && L.at(fid.index).active && !L.at(fid.index - 1).active)
      ids[fid.node] = next++;
  }
  return ids;
}

}  // namespace

Heap heap_of(const Program& prog, const KnittedTree& kt) {
  Heap h;
  h.pf.resize(prog.k());
  auto ids = decode_ids(kt);
  for (int u = 0; u < kt.backbone.size(); ++u) {
    const Log& L = kt.logs[u];
    int top = L.top();
    if (!L.at(top).active) continue;
    NodeId id = ids.at(u);
    h.nodes.push_back(id);
    h.data[id] = L.at(top).val;
    for (int pf = 0; pf < prog.k(); ++pf) {
      NodeId target = kNil;
      int ev = last_field_event(L, top, pf);
      if (ev == 0) {
        int c = kt.backbone.child(u, pf + 1);
        if (c >= 0 && kt.logs[c].at(kt.logs[c].top()).active &&
            kt.logs[c].at(1).active)
          target = ids.at(c);
      } else if (L.at(ev).event.kind == Event::Kind::FieldAssignPtr) {
        int r = L.at(ev).event.ptr;
        int w = walk_to(kt, r, u, ev, nullptr);
        if (kt.logs[w].at(kt.logs[w].top()).active) target = ids.at(w);
      }
      h.pf[pf][id] = target;
    }
  }
  std::sort(h.nodes.begin(), h.nodes.end());
  return h;
}

std::map<std::string, NodeId> ptrvals_of(const Program& prog, const KnittedTree& kt) {
  std::map<std::string, NodeId> out;
  auto ids = decode_ids(kt);
  FrameId end = kt.lace_end();
  const Frame& f = kt.logs[end.node].at(end.index);
  for (size_t p = 0; p < prog.pointer_vars.size(); ++p) {
    if (f.isnil[p]) {
      out[prog.pointer_vars[p]] = kNil;
    } else {
      int w = walk_to(kt, static_cast<int>(p), end.node, end.index, nullptr);
      out[prog.pointer_vars[p]] = ids.at(w);
    }
  }
  return out;
}

Execution exec_decode(const Program& prog, const KnittedTree& kt) {
  Execution e;
  auto lace = kt.lace();
  if (lace.empty()) throw MalformedLaceError("knitted tree has no lace");

  auto config_at = [&](const FrameId& fid) {
    KnittedTree prefix = truncate(kt, fid);
    Configuration c;
    c.heap = heap_of(prog, prefix);
    c.nu_p = ptrvals_of(prog, prefix);
    const Frame& f = prefix.logs[fid.node].at(fid.index);
    c.pc = f.pc;
    for (size_t i = 0; i < prog.data_vars.size(); ++i)
      c.nu_d[prog.data_vars[i].first] = f.d[i];
    return c;
  };

  e.configs.push_back(config_at(lace.front()));
  e.outcome = Outcome::OutOfFuel;
  for (size_t q = 1; q < lace.size(); ++q) {
    const Frame& f = kt.logs[lace[q].node].at(lace[q].index);
    if (f.event.is_rwd()) continue;
    if (f.event.kind == Event::Kind::Err) {
      e.outcome = Outcome::Error;
      e.error_reason = prog.at(f.pc).kind == Stmt::Kind::Free ? "NilFree"
                                                              : "NilDereference";
      return e;
    }
    if (f.event.kind == Event::Kind::Oom) {
      e.outcome = Outcome::OutOfFuel;  // truncated: the encoding ran out of room
      return e;
    }
    e.configs.push_back(config_at(lace[q]));
  }
  ExitStatus st = exit_status(prog, kt);
  if (st == ExitStatus::C) e.outcome = Outcome::Final;
  else if (st == ExitStatus::E) e.outcome = Outcome::Error;
  else e.outcome = Outcome::OutOfFuel;
  return e;
}

}  // namespace kw
