#include "kw/chcgen.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace kw {

using chc::ExpP;
using chc::Sort;
using chc::blit;
using chc::btrue;
using chc::bfalse;
using chc::ilit;
using chc::mk_add;
using chc::mk_and;
using chc::mk_apply;
using chc::mk_eq;
using chc::mk_iff;
using chc::mk_implies;
using chc::mk_ite;
using chc::mk_le;
using chc::mk_lt;
using chc::mk_mul;
using chc::mk_neg;
using chc::mk_not;
using chc::mk_or;
using chc::mk_sub;

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

LogLayout LogLayout::make(const Program& p, const Params& ps) {
  LogLayout l;
  l.params = ps;
  l.num_pv = static_cast<int>(p.pointer_vars.size());
  l.num_dv = static_cast<int>(p.data_vars.size());
  l.pv_names = p.pointer_vars;
  for (auto& [n, s] : p.data_vars) {
    l.dv_names.push_back(n);
    l.dv_sorts.push_back(s);
  }
  l.frame_size = 4 + l.num_dv + 2 * l.num_pv + 1 + ps.arity() + 4;
  return l;
}

std::int64_t LogLayout::enc_dir(const Dir& d) {
  switch (d.kind) {
    case DirKind::Self: return 0;
    case DirKind::Up: return 1;
    case DirKind::Child: return 1 + d.child;
  }
  return 0;
}

int LogLayout::rwd_base() const {
  // nop, err, oom, k field-nil, k*|PV| field-ptr, |PV| ptr-here
  return 3 + params.k + params.k * num_pv + num_pv;
}
int LogLayout::rwdp_base() const { return rwd_base() + params.n; }
int LogLayout::event_count() const { return rwdp_base() + params.n * num_pv; }

std::int64_t LogLayout::enc_event(const Event& e) const {
  switch (e.kind) {
    case Event::Kind::Nop: return 0;
    case Event::Kind::Err: return 1;
    case Event::Kind::Oom: return 2;
    case Event::Kind::FieldAssignNil: return 3 + e.field;
    case Event::Kind::FieldAssignPtr: return 3 + params.k + e.field * num_pv + e.ptr;
    case Event::Kind::PtrHere: return 3 + params.k + params.k * num_pv + e.ptr;
    case Event::Kind::Rwd: return rwd_base() + (e.pos - 1);
    case Event::Kind::RwdP: return rwdp_base() + (e.pos - 1) * num_pv + e.ptr;
  }
  return 0;
}

chc::Sort LogLayout::slot_sort(int s) const {
  int off = s % frame_size;
  if (off == off_avail || off == off_active) return Sort::Bool;
  if (off >= off_d && off < off_d + num_dv)
    return dv_sorts[off - off_d] == DataSort::Bool ? Sort::Bool : Sort::Int;
  if (off >= off_upd() && off < off_event()) return Sort::Bool;
  if (off >= off_ac() && off < off_next_dir()) return Sort::Bool;
  return Sort::Int;
}

std::string LogLayout::slot_name(int s) const {
  int frame = s / frame_size + 1;
  int off = s % frame_size;
  std::string base = "f" + std::to_string(frame) + "_";
  if (off == off_avail) return base + "avail";
  if (off == off_active) return base + "active";
  if (off == off_val) return base + "val";
  if (off == off_pc) return base + "pc";
  if (off >= off_d && off < off_d + num_dv) return base + "d_" + dv_names[off - off_d];
  if (off >= off_upd() && off < off_isnil())
    return base + "upd_" + pv_names[off - off_upd()];
  if (off >= off_isnil() && off < off_event())
    return base + "isnil_" + pv_names[off - off_isnil()];
  if (off == off_event()) return base + "event";
  if (off >= off_ac() && off < off_next_dir())
    return base + "ac" + std::to_string(off - off_ac() + 1);
  if (off == off_next_dir()) return base + "next_dir";
  if (off == off_next_idx()) return base + "next_idx";
  if (off == off_prev_dir()) return base + "prev_dir";
  return base + "prev_idx";
}

chc::SlotInfo LogLayout::slot_info(bool datatype_enums) const {
  chc::SlotInfo info;
  for (int s = 0; s < slots(); ++s) {
    info.names.push_back(slot_name(s));
    chc::Sort so = slot_sort(s);
    info.sorts.push_back(so);
    int off = s % frame_size;
    bool is_dir = off == off_next_dir() || off == off_prev_dir();
    if (so == Sort::Bool) info.smt_sorts.push_back("Bool");
    else if (is_dir && datatype_enums) info.smt_sorts.push_back("Dirv");
    else info.smt_sorts.push_back("Int");
  }
  return info;
}

chc::FlatLog LogLayout::flatten(const Log& log) const {
  chc::FlatLog flat(slots(), 0);
  for (int i = 1; i <= params.log_size(); ++i) {
    const Frame& f = log.at(i);
    auto put = [&](int off, std::int64_t v) { flat[slot(i, off)] = v; };
    put(off_avail, f.avail);
    put(off_active, f.active);
    put(off_val, f.val);
    put(off_pc, f.pc);
    for (int d = 0; d < num_dv; ++d) put(off_d + d, f.d[d]);
    for (int p = 0; p < num_pv; ++p) put(off_upd() + p, f.upd[p]);
    for (int p = 0; p < num_pv; ++p) put(off_isnil() + p, f.isnil[p]);
    put(off_event(), enc_event(f.event));
    for (int j = 0; j < params.arity(); ++j) put(off_ac() + j, f.active_child[j]);
    put(off_next_dir(), enc_dir(f.next.dir));
    put(off_next_idx(), f.next.index);
    put(off_prev_dir(), enc_dir(f.prev.dir));
    put(off_prev_idx(), f.prev.index);
  }
  return flat;
}

Log LogLayout::unflatten(const chc::FlatLog& flat) const {
  Log log;
  auto dec_dir = [&](std::int64_t v) {
    if (v == 0) return Dir::self();
    if (v == 1) return Dir::up();
    return Dir::down(static_cast<int>(v - 1));
  };
  auto dec_event = [&](std::int64_t v) {
    if (v == 0) return Event::nop();
    if (v == 1) return Event::err();
    if (v == 2) return Event::oom();
    std::int64_t x = v - 3;
    if (x < params.k) return Event::field_nil(static_cast<int>(x));
    x -= params.k;
    if (x < params.k * num_pv)
      return Event::field_ptr(static_cast<int>(x / num_pv),
                              static_cast<int>(x % num_pv));
    x -= params.k * num_pv;
    if (x < num_pv) return Event::ptr_here(static_cast<int>(x));
    x -= num_pv;
    if (x < params.n) return Event::rwd(static_cast<int>(x + 1));
    x -= params.n;
    return Event::rwd_p(static_cast<int>(x / num_pv) + 1,
                        static_cast<int>(x % num_pv));
  };
  for (int i = 1; i <= params.log_size(); ++i) {
    Frame f;
    auto get = [&](int off) { return flat[slot(i, off)]; };
    f.avail = get(off_avail);
    f.active = get(off_active);
    f.val = get(off_val);
    f.pc = static_cast<int>(get(off_pc));
    f.d.resize(num_dv);
    for (int d = 0; d < num_dv; ++d) f.d[d] = get(off_d + d);
    f.upd.resize(num_pv);
    f.isnil.resize(num_pv);
    for (int p = 0; p < num_pv; ++p) f.upd[p] = get(off_upd() + p) != 0;
    for (int p = 0; p < num_pv; ++p) f.isnil[p] = get(off_isnil() + p) != 0;
    f.event = dec_event(get(off_event()));
    f.active_child.resize(params.arity());
    for (int j = 0; j < params.arity(); ++j) f.active_child[j] = get(off_ac() + j) != 0;
    f.next = {dec_dir(get(off_next_dir())), static_cast<int>(get(off_next_idx()))};
    f.prev = {dec_dir(get(off_prev_dir())), static_cast<int>(get(off_prev_idx()))};
    log.frames.push_back(std::move(f));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Formula generator
// ---------------------------------------------------------------------------

namespace {

enum class Rel { Internal, Down, Up };  // direction of the lace extension

struct Gen {
  const Program& prog;
  Params ps;
  LogLayout lay;
  std::vector<chc::Helper> helpers;
  std::map<std::string, Sort> helper_sorts;

  Gen(const Program& p, const Params& params)
      : prog(p), ps(params), lay(LogLayout::make(p, params)) {}

  // --- slot accessors ------------------------------------------------------
  ExpP av(int lv, int i) { return chc::slot(lv, lay.slot(i, lay.off_avail), Sort::Bool); }
  ExpP act(int lv, int i) { return chc::slot(lv, lay.slot(i, lay.off_active), Sort::Bool); }
  ExpP val(int lv, int i) { return chc::slot(lv, lay.slot(i, lay.off_val), Sort::Int); }
  ExpP pc(int lv, int i) { return chc::slot(lv, lay.slot(i, lay.off_pc), Sort::Int); }
  ExpP dvar(int lv, int i, int d) {
    return chc::slot(lv, lay.slot(i, lay.off_d + d),
                     lay.dv_sorts[d] == DataSort::Bool ? Sort::Bool : Sort::Int);
  }
  ExpP upd(int lv, int i, int p) {
    return chc::slot(lv, lay.slot(i, lay.off_upd() + p), Sort::Bool);
  }
  ExpP isnil(int lv, int i, int p) {
    return chc::slot(lv, lay.slot(i, lay.off_isnil() + p), Sort::Bool);
  }
  ExpP ev(int lv, int i) {
    return chc::slot(lv, lay.slot(i, lay.off_event()), Sort::Int);
  }
  ExpP ac(int lv, int i, int j) {
    return chc::slot(lv, lay.slot(i, lay.off_ac() + j - 1), Sort::Bool);
  }
  ExpP ndir(int lv, int i) {
    return chc::slot(lv, lay.slot(i, lay.off_next_dir()), Sort::Int);
  }
  ExpP nidx(int lv, int i) {
    return chc::slot(lv, lay.slot(i, lay.off_next_idx()), Sort::Int);
  }
  ExpP pdir(int lv, int i) {
    return chc::slot(lv, lay.slot(i, lay.off_prev_dir()), Sort::Int);
  }
  ExpP pidx(int lv, int i) {
    return chc::slot(lv, lay.slot(i, lay.off_prev_idx()), Sort::Int);
  }

  ExpP next_is(int lv, int i, const Dir& d, int idx) {
    return mk_and({mk_eq(ndir(lv, i), ilit(LogLayout::enc_dir(d))),
                   mk_eq(nidx(lv, i), ilit(idx))});
  }
  ExpP prev_is(int lv, int i, const Dir& d, int idx) {
    return mk_and({mk_eq(pdir(lv, i), ilit(LogLayout::enc_dir(d))),
                   mk_eq(pidx(lv, i), ilit(idx))});
  }
  ExpP ev_is(int lv, int i, const Event& e) {
    return mk_eq(ev(lv, i), ilit(lay.enc_event(e)));
  }

  ExpP len(int lv, int i) {
    std::vector<ExpP> c{mk_not(av(lv, i))};
    for (int j = i + 1; j <= ps.log_size(); ++j) c.push_back(av(lv, j));
    return mk_and(std::move(c));
  }

  // --- helper registry -----------------------------------------------------

  bool has_helper(const std::string& name) const {
    return helper_sorts.count(name) > 0;
  }
  ExpP call(const std::string& name, std::vector<int> logs) {
    return mk_apply(name, std::move(logs), helper_sorts.at(name));
  }
  void def_helper(const std::string& name, int nlogs, Sort sort, ExpP body) {
    helper_sorts[name] = sort;
    helpers.push_back({name, nlogs, sort, std::move(body)});
  }

  // points_here: unrevoked <q := here> within [2, pos] of log 0
  ExpP ph(int lv, int q, int pos) {
    std::string name = "ph_" + std::to_string(q) + "_" + std::to_string(pos);
    if (!has_helper(name)) {
      std::vector<ExpP> ors;
      for (int i = 2; i <= pos; ++i) {
        std::vector<ExpP> c{ev_is(0, i, Event::ptr_here(q))};
        for (int w = i + 1; w <= pos; ++w) c.push_back(mk_not(upd(0, w, q)));
        ors.push_back(mk_and(std::move(c)));
      }
      def_helper(name, 1, Sort::Bool, mk_or(std::move(ors)));
    }
    return call(name, {lv});
  }

  // last_upd as an integer
  ExpP lu(int lv, int q, int pos) {
    std::string name = "lu_" + std::to_string(q) + "_" + std::to_string(pos);
    if (!has_helper(name)) {
      ExpP e = ilit(2);
      for (int i = 3; i <= pos; ++i) e = mk_ite(upd(0, i, q), ilit(i), e);
      def_helper(name, 1, Sort::Int, e);
    }
    return call(name, {lv});
  }

  // no <pf := ...> event anywhere in [lo, hi]
  ExpP nofield(int lv, int pf, int lo, int hi) {
    if (lo > hi) return btrue();
    std::string name = "nf_" + std::to_string(pf) + "_" + std::to_string(lo) + "_" +
                       std::to_string(hi);
    if (!has_helper(name)) {
      std::int64_t nil_code = lay.enc_event(Event::field_nil(pf));
      std::int64_t fp_lo = lay.enc_event(Event::field_ptr(pf, 0));
      std::int64_t fp_hi = fp_lo + lay.num_pv;  // exclusive
      std::vector<ExpP> c;
      for (int i = lo; i <= hi; ++i) {
        c.push_back(mk_not(mk_eq(ev(0, i), ilit(nil_code))));
        c.push_back(mk_not(mk_and({mk_le(ilit(fp_lo), ev(0, i)),
                                   mk_lt(ev(0, i), ilit(fp_hi))})));
      }
      def_helper(name, 1, Sort::Bool, mk_and(std::move(c)));
    }
    return call(name, {lv});
  }

  ExpP is_pfield_nil(int lv, int pf, int bound) {
    std::vector<ExpP> ors;
    for (int i = 2; i <= bound; ++i)
      ors.push_back(mk_and(
          {ev_is(lv, i, Event::field_nil(pf)), nofield(lv, pf, i + 1, bound)}));
    return mk_or(std::move(ors));
  }
  ExpP is_pfield_ptr(int lv, int pf, int r, int i, int bound) {
    return mk_and(
        {ev_is(lv, i, Event::field_ptr(pf, r)), nofield(lv, pf, i + 1, bound)});
  }
  ExpP is_pfield_implicit(int lv, int pf, int bound) {
    return nofield(lv, pf, 2, bound);
  }

  // event is not a rewinding marker (rewind codes occupy the enum's tail)
  ExpP not_rwd(int lv, int i) { return mk_lt(ev(lv, i), ilit(lay.rwd_base())); }
  ExpP not_rwdp(int lv, int i) { return mk_lt(ev(lv, i), ilit(lay.rwdp_base())); }

  ExpP frame_exit_none(int lv, int i) {
    std::vector<ExpP> c{mk_not(ev_is(lv, i, Event::err())),
                        mk_not(ev_is(lv, i, Event::oom()))};
    for (int L = 0; L < prog.num_pcs(); ++L)
      if (prog.is_exit(L)) c.push_back(mk_not(mk_eq(pc(lv, i), ilit(L))));
    return mk_and(std::move(c));
  }
  ExpP continues(int lv, int i) {
    return mk_and({mk_not(av(lv, i)), frame_exit_none(lv, i)});
  }

  // --- base predicates -------------------------------------------------------

  ExpP first_frame(int lv) {
    std::vector<ExpP> actv, inact;
    actv.push_back(act(lv, 1));
    inact.push_back(mk_not(act(lv, 1)));
    for (int j = ps.k + 1; j <= ps.arity(); ++j) {
      actv.push_back(mk_not(ac(lv, 1, j)));
      inact.push_back(ac(lv, 1, j));
    }
    return mk_or({mk_and(std::move(actv)), mk_and(std::move(inact))});
  }

  ExpP initial(int lv) {
    return mk_and({mk_not(av(lv, 2)), prev_is(lv, 2, Dir::self(), 2)});
  }

  ExpP start(int lv) {
    std::vector<ExpP> c{initial(lv),
                        mk_eq(act(lv, 2), act(lv, 1)),
                        mk_eq(val(lv, 2), val(lv, 1)),
                        mk_eq(pc(lv, 2), ilit(prog.entry()))};
    for (int p = 1; p < lay.num_pv; ++p) c.push_back(isnil(lv, 2, p));
    for (int j = 1; j <= ps.arity(); ++j)
      c.push_back(mk_eq(ac(lv, 2, j), ac(lv, 1, j)));
    std::vector<ExpP> nonempty{act(lv, 1), ev_is(lv, 2, Event::ptr_here(0)),
                               mk_not(isnil(lv, 2, 0))};
    for (int j = ps.k + 1; j <= ps.arity(); ++j)
      nonempty.push_back(mk_not(ac(lv, 2, j)));
    std::vector<ExpP> empty{mk_not(act(lv, 1)), ev_is(lv, 2, Event::nop()),
                            isnil(lv, 2, 0)};
    for (int j = 1; j <= ps.arity(); ++j) empty.push_back(mk_not(ac(lv, 2, j)));
    c.push_back(mk_or({mk_and(std::move(nonempty)), mk_and(std::move(empty))}));
    return mk_and(std::move(c));
  }

  ExpP label_exit_in(int lv, const std::set<ExitStatus>& ex) {
    std::vector<ExpP> ors;
    for (ExitStatus s : ex) {
      if (s == ExitStatus::O) {
        ors.push_back(mk_not(av(lv, ps.n + 1)));
        continue;
      }
      for (int i = 2; i <= ps.n; ++i) {
        ExpP frame_cond;
        if (s == ExitStatus::C) {
          std::vector<ExpP> pcs;
          for (int L = 0; L < prog.num_pcs(); ++L)
            if (prog.is_exit(L)) pcs.push_back(mk_eq(pc(lv, i), ilit(L)));
          frame_cond = mk_or(std::move(pcs));
        } else if (s == ExitStatus::E) {
          frame_cond = ev_is(lv, i, Event::err());
        } else {
          frame_cond = ev_is(lv, i, Event::oom());
        }
        ors.push_back(mk_and({mk_not(av(lv, i)), frame_cond}));
      }
    }
    return mk_or(std::move(ors));
  }

  // --- frame defaults --------------------------------------------------------

  enum Field { FActive, FVal, FD, FIsnil, FEvent, FPc, FAc };

  // default constraints for the new frame (T, b) pushed from (S, a)
  ExpP defaults(int S, int a, int T, int b, Rel rel, int j,
                const std::set<int>& except) {
    std::vector<ExpP> c;
    if (!except.count(FActive)) c.push_back(mk_eq(act(T, b), act(T, b - 1)));
    if (!except.count(FVal)) c.push_back(mk_eq(val(T, b), val(T, b - 1)));
    if (!except.count(FD))
      for (int d = 0; d < lay.num_dv; ++d)
        c.push_back(mk_eq(dvar(T, b, d), dvar(S, a, d)));
    if (!except.count(FIsnil))
      for (int p = 0; p < lay.num_pv; ++p)
        c.push_back(mk_eq(isnil(T, b, p), isnil(S, a, p)));
    if (!except.count(FEvent)) c.push_back(ev_is(T, b, Event::nop()));
    if (!except.count(FPc)) c.push_back(mk_eq(pc(T, b), pc(S, a)));
    if (!except.count(FAc)) {
      for (int i = 1; i <= ps.arity(); ++i) {
        if (rel == Rel::Up && i == j)
          c.push_back(mk_eq(ac(T, b, i), act(S, a)));
        else
          c.push_back(mk_eq(ac(T, b, i), ac(T, b - 1, i)));
      }
    }
    return mk_and(std::move(c));
  }

  ExpP advance_pc(int S, int a, int T, int b, std::optional<ExpP> branch = {}) {
    int L = cur_pc;  // set by the dispatcher
    if (branch) {
      int st = prog.stmts[L].succ1, sf = prog.stmts[L].succ2;
      return mk_eq(pc(T, b), mk_ite(*branch, ilit(st), ilit(sf)));
    }
    auto nx = succ(prog, L);
    return mk_eq(pc(T, b), ilit(nx ? *nx : -1));
  }

  int cur_pc = 0;  // statement being translated

  // compile a data expression against the d slots of (S, a)
  ExpP cexp(const DataExpP& e, int S, int a) {
    using K = DataExp::Kind;
    switch (e->kind) {
      case K::IntLit: return ilit(e->ival);
      case K::BoolLit: return blit(e->bval);
      case K::Var: return dvar(S, a, prog.dv_index(e->name));
      case K::FieldRead:
        throw UnsupportedStatementError("field read requires desugaring");
      case K::Neg: return mk_neg(cexp(e->lhs, S, a));
      case K::Not: return mk_not(cexp(e->lhs, S, a));
      case K::Add: return mk_add(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Sub: return mk_sub(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Mul: return mk_mul(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Eq: return mk_eq(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Ne: return mk_not(mk_eq(cexp(e->lhs, S, a), cexp(e->rhs, S, a)));
      case K::Lt: return mk_lt(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Le: return mk_le(cexp(e->lhs, S, a), cexp(e->rhs, S, a));
      case K::Gt: return mk_lt(cexp(e->rhs, S, a), cexp(e->lhs, S, a));
      case K::Ge: return mk_le(cexp(e->rhs, S, a), cexp(e->lhs, S, a));
      case K::And: return mk_and({cexp(e->lhs, S, a), cexp(e->rhs, S, a)});
      case K::Or: return mk_or({cexp(e->lhs, S, a), cexp(e->rhs, S, a)});
    }
    throw UnsupportedStatementError("bad expression");
  }

  // rewinding position cases: (guard on the source frame's event, position)
  std::vector<std::pair<ExpP, int>> crp_cases(int S, int a) {
    std::vector<std::pair<ExpP, int>> cases;
    cases.emplace_back(not_rwd(S, a), a);
    for (int w = 2; w <= ps.n; ++w)
      cases.emplace_back(ev_is(S, a, Event::rwd(w)), w);
    return cases;
  }

  // --- rule fragments -------------------------------------------------------
  // naming: S/a source log and top, T/b target log and new index

  ExpP frag_err(int S, int a, int T, int b, Rel rel, int j) {
    return mk_and({ev_is(T, b, Event::err()),
                   defaults(S, a, T, b, rel, j, {FEvent})});
  }
  ExpP frag_oom(int S, int a, int T, int b, Rel rel, int j) {
    return mk_and({ev_is(T, b, Event::oom()),
                   defaults(S, a, T, b, rel, j, {FEvent})});
  }
  ExpP frag_set_nil(int S, int a, int T, int b, Rel rel, int j, int p,
                    std::optional<ExpP> branch = {}) {
    std::vector<ExpP> c{advance_pc(S, a, T, b, branch), isnil(T, b, p),
                        defaults(S, a, T, b, rel, j, {FPc, FIsnil})};
    for (int q = 0; q < lay.num_pv; ++q)
      if (q != p) c.push_back(mk_eq(isnil(T, b, q), isnil(S, a, q)));
    return mk_and(std::move(c));
  }
  ExpP frag_set_here(int S, int a, int T, int b, Rel rel, int j, int p) {
    std::vector<ExpP> c{advance_pc(S, a, T, b), ev_is(T, b, Event::ptr_here(p)),
                        mk_not(isnil(T, b, p)),
                        defaults(S, a, T, b, rel, j, {FPc, FIsnil, FEvent})};
    for (int q = 0; q < lay.num_pv; ++q)
      if (q != p) c.push_back(mk_eq(isnil(T, b, q), isnil(S, a, q)));
    return mk_and(std::move(c));
  }

  // one rewinding hop for pointer q with logical position `pos`; either the
  // target resolves q (then `complete` pins the new frame) or a rwd marker is
  // pushed. `special_r` switches to the second-phase marker rwd_{i,r}.
  ExpP frag_hop(int S, int a, int T, int b, Rel rel, int j, int q, int pos,
                const std::function<ExpP(int /*b_prime*/)>& complete,
                int special_r = -1, bool arrival_verbatim = false) {
    Dir toward = rel == Rel::Down ? Dir::down(j) : Dir::up();
    Dir back = rel == Rel::Down ? Dir::up() : Dir::down(j);
    std::vector<ExpP> ors;
    for (int a2 = 2; a2 <= pos; ++a2) {
      for (int bp = 2; bp <= ps.n; ++bp) {
        std::vector<ExpP> c{mk_not(isnil(S, a, q)),
                            mk_eq(lu(S, q, pos), ilit(a2)),
                            prev_is(S, a2, toward, bp),
                            next_is(T, bp, back, a2)};
        ExpP rwd_ev;
        if (special_r >= 0) {
          // event = rwd_{last_upd(T, bp, q), r}
          ExpP i_exp = lu(T, q, bp);
          rwd_ev = mk_eq(
              ev(T, b),
              mk_add(ilit(lay.rwdp_base() + special_r - lay.num_pv),
                     mk_mul(i_exp, ilit(lay.num_pv))));
        } else if (arrival_verbatim) {
          rwd_ev = mk_eq(ev(T, b),
                         mk_ite(ph(T, q, bp), ilit(lay.enc_event(Event::rwd(bp))),
                                mk_add(ilit(lay.rwd_base() - 1), lu(T, q, bp))));
        } else {
          rwd_ev = mk_eq(ev(T, b), mk_add(ilit(lay.rwd_base() - 1), lu(T, q, bp)));
        }
        ExpP rwd_frame = mk_and(
            {mk_not(ph(T, q, bp)), rwd_ev,
             defaults(S, a, T, b, rel, j, {FEvent})});
        if (arrival_verbatim) {
          // from-field phase one: the arrival also pushes a marker, recording
          // the entry position verbatim so the field resolves next step
          rwd_frame = mk_and(
              {rwd_ev, defaults(S, a, T, b, rel, j, {FEvent})});
          c.push_back(rwd_frame);
        } else {
          c.push_back(mk_or({mk_and({ph(T, q, bp), complete(bp)}), rwd_frame}));
        }
        ors.push_back(mk_and(std::move(c)));
      }
    }
    return mk_or(std::move(ors));
  }

  // two-pointer hop (pointer comparisons)
  ExpP frag_hop2(int S, int a, int T, int b, Rel rel, int j, int p, int q, int pos,
                 const std::function<ExpP(ExpP /*equal*/)>& complete) {
    Dir toward = rel == Rel::Down ? Dir::down(j) : Dir::up();
    Dir back = rel == Rel::Down ? Dir::up() : Dir::down(j);
    ExpP maxlu_src = mk_ite(mk_le(lu(S, q, pos), lu(S, p, pos)), lu(S, p, pos),
                            lu(S, q, pos));
    std::vector<ExpP> ors;
    for (int a2 = 2; a2 <= pos; ++a2) {
      for (int bp = 2; bp <= ps.n; ++bp) {
        ExpP maxlu_tgt = mk_ite(mk_le(lu(T, q, bp), lu(T, p, bp)), lu(T, p, bp),
                                lu(T, q, bp));
        std::vector<ExpP> c{mk_not(isnil(S, a, p)), mk_not(isnil(S, a, q)),
                            mk_eq(maxlu_src, ilit(a2)),
                            prev_is(S, a2, toward, bp),
                            next_is(T, bp, back, a2)};
        ExpP found = mk_or({ph(T, p, bp), ph(T, q, bp)});
        ExpP equal = mk_and({ph(T, p, bp), ph(T, q, bp)});
        ExpP rwd_frame =
            mk_and({mk_not(found),
                    mk_eq(ev(T, b), mk_add(ilit(lay.rwd_base() - 1), maxlu_tgt)),
                    defaults(S, a, T, b, rel, j, {FEvent})});
        c.push_back(mk_or({mk_and({found, complete(equal)}), rwd_frame}));
        ors.push_back(mk_and(std::move(c)));
      }
    }
    return mk_or(std::move(ors));
  }

  // --- per-statement step rules ----------------------------------------------

  // the step rule for statement at pc L, source (S, a), new frame (T, b)
  ExpP rule(int L, int S, int a, int T, int b, Rel rel, int j) {
    cur_pc = L;
    const Stmt& s = prog.at(L);
    using SK = Stmt::Kind;
    bool internal = rel == Rel::Internal;

    switch (s.kind) {
      case SK::Exit:
        return bfalse();
      case SK::Skip:
      case SK::Goto:
        if (!internal) return bfalse();
        return mk_and({advance_pc(S, a, T, b), defaults(S, a, T, b, rel, j, {FPc})});
      case SK::AssignData: {
        if (!internal) return bfalse();
        int d = prog.dv_index(s.d);
        std::vector<ExpP> c{advance_pc(S, a, T, b),
                            mk_eq(dvar(T, b, d), cexp(s.exp, S, a)),
                            defaults(S, a, T, b, rel, j, {FPc, FD})};
        for (int o = 0; o < lay.num_dv; ++o)
          if (o != d) c.push_back(mk_eq(dvar(T, b, o), dvar(S, a, o)));
        return mk_and(std::move(c));
      }
      case SK::AssignNil:
        if (!internal) return bfalse();
        return frag_set_nil(S, a, T, b, rel, j, prog.pv_index(s.p));
      case SK::AssignPtr: {
        int p = prog.pv_index(s.p), q = prog.pv_index(s.q);
        if (internal) {
          std::vector<ExpP> ors{
              mk_and({isnil(S, a, q), frag_set_nil(S, a, T, b, rel, j, p)})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(mk_and({cond, mk_not(isnil(S, a, q)), ph(S, q, pos),
                                  frag_set_here(S, a, T, b, rel, j, p)}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and(
              {cond, mk_not(ph(S, q, pos)),
               frag_hop(S, a, T, b, rel, j, q, pos, [&](int) {
                 return frag_set_here(S, a, T, b, rel, j, p);
               })}));
        return mk_or(std::move(ors));
      }
      case SK::AssignToFieldPtr:
      case SK::AssignToFieldNil: {
        int p = prog.pv_index(s.p);
        int pf = prog.pf_index(s.pf);
        int q = s.kind == SK::AssignToFieldPtr ? prog.pv_index(s.q) : -1;
        auto write = [&]() {
          ExpP evc;
          if (q < 0) {
            evc = ev_is(T, b, Event::field_nil(pf));
          } else {
            evc = mk_or({mk_and({mk_not(isnil(S, a, q)),
                                 ev_is(T, b, Event::field_ptr(pf, q))}),
                         mk_and({isnil(S, a, q), ev_is(T, b, Event::field_nil(pf))})});
          }
          return mk_and({advance_pc(S, a, T, b), evc,
                         defaults(S, a, T, b, rel, j, {FPc, FEvent})});
        };
        if (internal) {
          std::vector<ExpP> ors{
              mk_and({isnil(S, a, p), frag_err(S, a, T, b, rel, j)})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(
                mk_and({cond, mk_not(isnil(S, a, p)), ph(S, p, pos), write()}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and({cond, mk_not(ph(S, p, pos)),
                                frag_hop(S, a, T, b, rel, j, p, pos,
                                         [&](int) { return write(); })}));
        return mk_or(std::move(ors));
      }
      case SK::WriteData: {
        int p = prog.pv_index(s.p);
        auto write = [&]() {
          return mk_and({advance_pc(S, a, T, b),
                         mk_eq(val(T, b), cexp(s.exp, S, a)),
                         defaults(S, a, T, b, rel, j, {FPc, FVal})});
        };
        if (internal) {
          std::vector<ExpP> ors{
              mk_and({isnil(S, a, p), frag_err(S, a, T, b, rel, j)})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(
                mk_and({cond, mk_not(isnil(S, a, p)), ph(S, p, pos), write()}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and({cond, mk_not(ph(S, p, pos)),
                                frag_hop(S, a, T, b, rel, j, p, pos,
                                         [&](int) { return write(); })}));
        return mk_or(std::move(ors));
      }
      case SK::ReadData: {
        int p = prog.pv_index(s.p);
        int d = prog.dv_index(s.d);
        auto read = [&]() {
          std::vector<ExpP> c{advance_pc(S, a, T, b),
                              mk_eq(dvar(T, b, d), val(T, b - 1)),
                              defaults(S, a, T, b, rel, j, {FPc, FD})};
          for (int o = 0; o < lay.num_dv; ++o)
            if (o != d) c.push_back(mk_eq(dvar(T, b, o), dvar(S, a, o)));
          return mk_and(std::move(c));
        };
        if (internal) {
          std::vector<ExpP> ors{
              mk_and({isnil(S, a, p), frag_err(S, a, T, b, rel, j)})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(
                mk_and({cond, mk_not(isnil(S, a, p)), ph(S, p, pos), read()}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and({cond, mk_not(ph(S, p, pos)),
                                frag_hop(S, a, T, b, rel, j, p, pos,
                                         [&](int) { return read(); })}));
        return mk_or(std::move(ors));
      }
      case SK::Free: {
        int p = prog.pv_index(s.p);
        auto free_frame = [&](ExpP extra_isnil_rule) {
          return mk_and({advance_pc(S, a, T, b), mk_not(act(T, b)),
                         extra_isnil_rule,
                         defaults(S, a, T, b, rel, j, {FPc, FActive, FIsnil})});
        };
        if (internal) {
          std::vector<ExpP> isr;
          for (int q = 0; q < lay.num_pv; ++q)
            isr.push_back(mk_iff(isnil(T, b, q),
                                 mk_or({isnil(S, a, q), ph(S, q, a)})));
          std::vector<ExpP> ors{
              mk_and({isnil(S, a, p), frag_err(S, a, T, b, rel, j)})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(mk_and({cond, mk_not(isnil(S, a, p)), ph(S, p, pos),
                                  free_frame(mk_and(std::vector<ExpP>(isr)))}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and(
              {cond, mk_not(ph(S, p, pos)),
               frag_hop(S, a, T, b, rel, j, p, pos, [&](int) {
                 // nil every pointer that still points to the freed node,
                 // unless it was reassigned in the bridged excursion
                 std::vector<ExpP> isr;
                 for (int q = 0; q < lay.num_pv; ++q) {
                   ExpP raw = bridge_raw(S, a, T, b, rel, j, q);
                   isr.push_back(mk_iff(
                       isnil(T, b, q),
                       mk_or({isnil(S, a, q),
                              mk_and({ph(T, q, b - 1), mk_not(raw)})})));
                 }
                 return free_frame(mk_and(std::move(isr)));
               })}));
        return mk_or(std::move(ors));
      }
      case SK::New: {
        int p = prog.pv_index(s.p);
        if (internal) {
          // only the out-of-memory case stays on this node
          std::vector<ExpP> c;
          for (int i = ps.k + 1; i <= ps.arity(); ++i) c.push_back(ac(S, a, i));
          c.push_back(frag_oom(S, a, T, b, rel, j));
          return mk_and(std::move(c));
        }
        if (rel != Rel::Down || j <= ps.k) return bfalse();
        std::vector<ExpP> c{mk_not(ac(S, a, j))};
        for (int i = ps.k + 1; i < j; ++i) c.push_back(ac(S, a, i));
        c.push_back(advance_pc(S, a, T, b));
        c.push_back(ev_is(T, b, Event::ptr_here(p)));
        c.push_back(act(T, b));
        c.push_back(mk_not(isnil(T, b, p)));
        for (int q = 0; q < lay.num_pv; ++q)
          if (q != p) c.push_back(mk_eq(isnil(T, b, q), isnil(S, a, q)));
        c.push_back(defaults(S, a, T, b, rel, j, {FPc, FEvent, FActive, FIsnil}));
        return mk_and(std::move(c));
      }
      case SK::AssignHeapCond: {
        if (s.hc.kind != CondAtom::Kind::PtrEq)
          throw UnsupportedStatementError("heap condition requires desugaring");
        int d = prog.dv_index(s.d);
        int p = prog.pv_index(s.hc.p), q = prog.pv_index(s.hc.q);
        auto setb = [&](ExpP value) {
          std::vector<ExpP> c{advance_pc(S, a, T, b),
                              mk_iff(dvar(T, b, d), value),
                              defaults(S, a, T, b, rel, j, {FPc, FD})};
          for (int o = 0; o < lay.num_dv; ++o)
            if (o != d) c.push_back(mk_eq(dvar(T, b, o), dvar(S, a, o)));
          return mk_and(std::move(c));
        };
        if (internal) {
          std::vector<ExpP> ors{mk_and(
              {mk_or({isnil(S, a, p), isnil(S, a, q)}),
               setb(mk_iff(isnil(S, a, p), isnil(S, a, q)))})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(mk_and(
                {cond, mk_not(isnil(S, a, p)), mk_not(isnil(S, a, q)),
                 mk_or({ph(S, p, pos), ph(S, q, pos)}),
                 setb(mk_and({ph(S, p, pos), ph(S, q, pos)}))}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(mk_and(
              {cond, mk_not(ph(S, p, pos)), mk_not(ph(S, q, pos)),
               frag_hop2(S, a, T, b, rel, j, p, q, pos,
                         [&](ExpP equal) { return setb(equal); })}));
        return mk_or(std::move(ors));
      }
      case SK::Branch: {
        if (s.cond.size() != 1)
          throw UnsupportedStatementError("compound condition requires desugaring");
        const CondAtom& atom = s.cond.front();
        if (atom.kind == CondAtom::Kind::DataRel) {
          if (!internal) return bfalse();
          ExpP cond = cexp(atom.exp, S, a);
          if (atom.neg) cond = mk_not(cond);
          return mk_and({advance_pc(S, a, T, b, cond),
                         defaults(S, a, T, b, rel, j, {FPc})});
        }
        if (atom.kind != CondAtom::Kind::PtrEq)
          throw UnsupportedStatementError("branch condition requires desugaring");
        int p = prog.pv_index(atom.p), q = prog.pv_index(atom.q);
        auto go = [&](ExpP equal) {
          ExpP cond = atom.neg ? mk_not(equal) : equal;
          return mk_and({advance_pc(S, a, T, b, cond),
                         defaults(S, a, T, b, rel, j, {FPc})});
        };
        if (internal) {
          std::vector<ExpP> ors{mk_and(
              {mk_or({isnil(S, a, p), isnil(S, a, q)}),
               go(mk_iff(isnil(S, a, p), isnil(S, a, q)))})};
          for (auto& [cond, pos] : crp_cases(S, a))
            ors.push_back(mk_and(
                {cond, mk_not(isnil(S, a, p)), mk_not(isnil(S, a, q)),
                 mk_or({ph(S, p, pos), ph(S, q, pos)}),
                 go(mk_and({ph(S, p, pos), ph(S, q, pos)}))}));
          return mk_or(std::move(ors));
        }
        std::vector<ExpP> ors;
        for (auto& [cond, pos] : crp_cases(S, a))
          ors.push_back(
              mk_and({cond, mk_not(ph(S, p, pos)), mk_not(ph(S, q, pos)),
                      frag_hop2(S, a, T, b, rel, j, p, q, pos,
                                [&](ExpP equal) { return go(equal); })}));
        return mk_or(std::move(ors));
      }
      case SK::AssignFromField:
        return rule_from_field(S, a, T, b, rel, j);
    }
    throw UnsupportedStatementError("unhandled statement");
  }

  // the raw bridge condition: was p assigned during the excursion the lace
  // made since the target's previous frame?
  ExpP bridge_raw(int S, int a, int T, int b, Rel rel, int j, int p) {
    if (b <= 2) return bfalse();
    Dir dep = rel == Rel::Down ? Dir::up() : Dir::down(j);
    std::vector<ExpP> ors;
    for (int ap = 2; ap <= ps.n; ++ap) {
      std::vector<ExpP> inner;
      for (int c = ap; c <= a; ++c)
        inner.push_back(ev_is(S, c, Event::ptr_here(p)));
      for (int c = ap + 1; c <= a; ++c) inner.push_back(upd(S, c, p));
      if (inner.empty()) continue;
      ors.push_back(mk_and({next_is(T, b - 1, dep, ap), mk_or(std::move(inner))}));
    }
    return mk_or(std::move(ors));
  }

  ExpP rule_from_field(int S, int a, int T, int b, Rel rel, int j) {
    const Stmt& s = prog.at(cur_pc);
    int p = prog.pv_index(s.p), q = prog.pv_index(s.q);
    int pf = prog.pf_index(s.pf);
    int jf = pf + 1;
    bool internal = rel == Rel::Internal;

    // activity-guarded completion at the node holding the field's target
    auto complete_guarded = [&](ExpP active_exp) {
      return mk_or({mk_and({active_exp, frag_set_here(S, a, T, b, rel, j, p)}),
                    mk_and({mk_not(active_exp),
                            frag_set_nil(S, a, T, b, rel, j, p)})});
    };

    std::vector<ExpP> ors;
    if (internal) {
      // phase one: q is nil -> error
      ors.push_back(mk_and({not_rwdp(S, a), isnil(S, a, q),
                            frag_err(S, a, T, b, rel, j)}));
      // phase one at q's node: resolve the field without moving
      for (auto& [cond, pos] : crp_cases(S, a)) {
        ExpP base = mk_and({cond, mk_not(isnil(S, a, q)), ph(S, q, pos)});
        // nil field, or implicit field with the child gone
        ors.push_back(mk_and(
            {base,
             mk_or({is_pfield_nil(S, pf, a),
                    mk_and({is_pfield_implicit(S, pf, a), mk_not(ac(S, a, jf))})}),
             frag_set_nil(S, a, T, b, rel, j, p)}));
        // <pf := r> with r pointing at this very node back then
        for (int r = 0; r < lay.num_pv; ++r)
          for (int i = 2; i <= ps.n; ++i) {
            if (i > a) continue;
            ors.push_back(mk_and({base, is_pfield_ptr(S, pf, r, i, a),
                                  ph(S, r, i), complete_guarded(act(S, a))}));
          }
      }
      // phase two completed at this node
      for (int r = 0; r < lay.num_pv; ++r)
        for (int i = 2; i <= ps.n; ++i)
          ors.push_back(mk_and({ev_is(S, a, Event::rwd_p(i, r)), ph(S, r, i),
                                complete_guarded(act(S, a))}));
      return mk_or(std::move(ors));
    }

    // across rules
    // phase-one hop toward q (arrival marker records the entry verbatim)
    for (auto& [cond, pos] : crp_cases(S, a))
      ors.push_back(
          mk_and({not_rwdp_guard(cond), mk_not(isnil(S, a, q)),
                  mk_not(ph(S, q, pos)),
                  frag_hop(S, a, T, b, rel, j, q, pos,
                           [&](int) { return bfalse(); }, -1,
                           /*arrival_verbatim=*/true)}));
    // phase-two start: field resolved to <pf := r>, r points elsewhere
    for (auto& [cond, pos] : crp_cases(S, a)) {
      for (int r = 0; r < lay.num_pv; ++r)
        for (int i = 2; i <= ps.n; ++i) {
          if (i > a) continue;
          ors.push_back(mk_and(
              {cond, mk_not(isnil(S, a, q)), ph(S, q, pos),
               is_pfield_ptr(S, pf, r, i, a), mk_not(ph(S, r, i)),
               frag_hop(S, a, T, b, rel, j, r, i,
                        [&](int bp) {
                          return complete_guarded(act(T, b - 1));
                          (void)bp;
                        },
                        r)}));
        }
    }
    // phase-two continuation
    for (int r = 0; r < lay.num_pv; ++r)
      for (int i = 2; i <= ps.n; ++i)
        ors.push_back(mk_and(
            {ev_is(S, a, Event::rwd_p(i, r)), mk_not(ph(S, r, i)),
             frag_hop(S, a, T, b, rel, j, r, i,
                      [&](int bp) {
                        (void)bp;
                        return complete_guarded(act(T, b - 1));
                      },
                      r)}));
    // implicit field: move down to the original child
    if (rel == Rel::Down && j == jf) {
      for (auto& [cond, pos] : crp_cases(S, a))
        ors.push_back(mk_and({cond, mk_not(isnil(S, a, q)), ph(S, q, pos),
                              is_pfield_implicit(S, pf, a), ac(S, a, jf),
                              frag_set_here(S, a, T, b, rel, j, p)}));
    }
    return mk_or(std::move(ors));
  }

  ExpP not_rwdp_guard(ExpP crp_cond) {
    // crp cases already exclude rwd_{i,r} markers (they only match rwd_i or
    // non-rewind events)
    return crp_cond;
  }

  // --- dispatch and psi predicates --------------------------------------------

  ExpP step_dispatch(int S, int a, int T, int b, Rel rel, int j) {
    std::vector<ExpP> c;
    std::vector<ExpP> range;
    for (int L = 0; L < prog.num_pcs(); ++L) {
      range.push_back(mk_eq(pc(S, a), ilit(L)));
      c.push_back(mk_implies(mk_eq(pc(S, a), ilit(L)), rule(L, S, a, T, b, rel, j)));
    }
    c.push_back(mk_or(std::move(range)));
    return mk_and(std::move(c));
  }

  // internal step producing frame b of the single log
  ExpP psi_internal(int b) {
    std::string name = "psii_" + std::to_string(b);
    if (!has_helper(name)) {
      int lv = 0;
      std::vector<ExpP> c{continues(lv, b - 1),
                          next_is(lv, b - 1, Dir::self(), b),
                          mk_not(av(lv, b)),
                          prev_is(lv, b, Dir::self(), b - 1)};
      for (int p = 0; p < lay.num_pv; ++p) c.push_back(mk_not(upd(lv, b, p)));
      c.push_back(step_dispatch(lv, b - 1, lv, b, Rel::Internal, 0));
      def_helper(name, 1, Sort::Bool, mk_and(std::move(c)));
    }
    return call(name, {0});
  }

  // across-step cores; log 0 = source, log 1 = target (below + new frame)
  ExpP psi_up_core(int jj, int a, int b) {
    std::string name = "psiu_" + std::to_string(jj) + "_" + std::to_string(a) +
                       "_" + std::to_string(b);
    if (!has_helper(name)) {
      int C = 0, P = 1;
      std::vector<ExpP> c{continues(C, a), next_is(C, a, Dir::up(), b),
                          mk_not(av(P, b)), prev_is(P, b, Dir::down(jj), a)};
      if (b >= 3) c.push_back(mk_not(av(P, b - 1)));
      for (int p = 0; p < lay.num_pv; ++p)
        c.push_back(mk_iff(upd(P, b, p),
                           mk_and({mk_not(isnil(P, b, p)),
                                   bridge_raw(C, a, P, b, Rel::Up, jj, p)})));
      c.push_back(step_dispatch(C, a, P, b, Rel::Up, jj));
      def_helper(name, 2, Sort::Bool, mk_and(std::move(c)));
    }
    return call(name, {0, 1});
  }

  ExpP psi_down_core(int jj, int a, int b) {
    std::string name = "psid_" + std::to_string(jj) + "_" + std::to_string(a) +
                       "_" + std::to_string(b);
    if (!has_helper(name)) {
      int P = 0, C = 1;
      std::vector<ExpP> c{continues(P, a), next_is(P, a, Dir::down(jj), b),
                          mk_not(av(C, b)), prev_is(C, b, Dir::up(), a)};
      if (b >= 3) c.push_back(mk_not(av(C, b - 1)));
      for (int p = 0; p < lay.num_pv; ++p)
        c.push_back(mk_iff(upd(C, b, p),
                           mk_and({mk_not(isnil(C, b, p)),
                                   bridge_raw(P, a, C, b, Rel::Down, jj, p)})));
      c.push_back(step_dispatch(P, a, C, b, Rel::Down, jj));
      def_helper(name, 2, Sort::Bool, mk_and(std::move(c)));
    }
    return call(name, {0, 1});
  }

  // consistent_child(child=log0, parent=log1) for child slot jj
  ExpP consistent_child(int jj) {
    std::string name = "cc_" + std::to_string(jj);
    if (!has_helper(name)) {
      int C = 0, P = 1;
      std::vector<ExpP> c;
      // first frames
      c.push_back(mk_or({initial(P), act(P, 1)}));
      c.push_back(mk_implies(act(C, 1), act(P, 1)));
      if (jj > ps.k) c.push_back(mk_not(act(C, 1)));
      c.push_back(mk_eq(ac(P, 1, jj), act(C, 1)));
      // step consistency at every potential interaction
      for (int a = 2; a <= ps.n; ++a) {
        for (int b = 2; b <= ps.n + 1; ++b) {
          // ensure the cores exist before referencing them in the body
          psi_down_core(jj, a, b);
          psi_up_core(jj, a, b);
          ExpP down_trig = mk_or(
              {mk_and({mk_not(av(P, a)), next_is(P, a, Dir::down(jj), b),
                       mk_not(av(C, b))}),
               mk_and({mk_not(av(C, b)), prev_is(C, b, Dir::up(), a)})});
          c.push_back(mk_implies(
              down_trig,
              mk_apply("psid_" + std::to_string(jj) + "_" + std::to_string(a) +
                           "_" + std::to_string(b),
                       {P, C}, Sort::Bool)));
          ExpP up_trig = mk_or(
              {mk_and({mk_not(av(C, a)), next_is(C, a, Dir::up(), b),
                       mk_not(av(P, b))}),
               mk_and({mk_not(av(P, b)), prev_is(P, b, Dir::down(jj), a)})});
          c.push_back(mk_implies(
              up_trig,
              mk_apply("psiu_" + std::to_string(jj) + "_" + std::to_string(a) +
                           "_" + std::to_string(b),
                       {C, P}, Sort::Bool)));
        }
      }
      def_helper(name, 2, Sort::Bool, mk_and(std::move(c)));
    }
    return call(name, {0, 1});
  }

  // equality of all slots of frame ell between two logvars
  ExpP frames_equal(int lv1, int lv2, int ell) {
    std::vector<ExpP> c;
    for (int off = 0; off < lay.frame_size; ++off) {
      int s = lay.slot(ell, off);
      Sort so = lay.slot_sort(s);
      c.push_back(mk_eq(chc::slot(lv1, s, so), chc::slot(lv2, s, so)));
    }
    return mk_and(std::move(c));
  }

  // theta (lv2) is sigma (lv1) truncated strictly below i
  ExpP link_prefix(int theta, int sigma, int i) {
    std::vector<ExpP> c;
    for (int ell = 1; ell < i; ++ell) c.push_back(frames_equal(theta, sigma, ell));
    for (int ell = i; ell <= ps.log_size(); ++ell) c.push_back(av(theta, ell));
    return mk_and(std::move(c));
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// System construction
// ---------------------------------------------------------------------------

ChcSystem compile_system(const Program& p, int m, int n) {
  Params ps{p.k(), m, n};
  Gen g(p, ps);
  ChcSystem sys;
  sys.params = ps;
  sys.prog_hash = program_hash(p);

  // I: non-root initialization
  {
    ChcClause c;
    c.name = "I";
    c.num_logvars = 1;
    c.head_logvar = 0;
    c.constraint = mk_and({g.len(0, 1), g.first_frame(0)});
    sys.clauses.push_back(std::move(c));
  }
  // II: root initialization
  {
    ChcClause c;
    c.name = "II";
    c.num_logvars = 1;
    c.head_logvar = 0;
    c.constraint = mk_and({g.len(0, 2), g.start(0)});
    sys.clauses.push_back(std::move(c));
  }
  // III: internal steps; the new frame can land anywhere from the third slot
  // up to the overflow slot
  for (int i = 3; i <= n + 1; ++i) {
    ChcClause c;
    c.name = "III_" + std::to_string(i);
    c.num_logvars = 2;  // 0 = sigma (head), 1 = theta (body prefix)
    c.head_logvar = 0;
    c.body_logvars = {1};
    c.constraint =
        mk_and({g.len(0, i), g.link_prefix(1, 0, i), g.psi_internal(i)});
    sys.clauses.push_back(std::move(c));
  }
  // IV: step from the j-th child up to its parent
  for (int i = 3; i <= n + 1; ++i) {
    for (int j = 1; j <= ps.arity(); ++j) {
      ChcClause c;
      c.name = "IV_" + std::to_string(i) + "_" + std::to_string(j);
      c.num_logvars = 3;  // 0 = sigma (head/parent), 1 = theta, 2 = tau (child)
      c.head_logvar = 0;
      c.body_logvars = {1, 2};
      ExpP cc = g.consistent_child(j);
      // re-target the helper application at (tau, theta)
      ExpP cc_applied = mk_apply("cc_" + std::to_string(j), {2, 1}, chc::Sort::Bool);
      std::vector<ExpP> steps;
      for (int a = 2; a <= n; ++a) {
        g.psi_up_core(j, a, i);
        steps.push_back(mk_and(
            {g.len(2, a),
             mk_apply("psiu_" + std::to_string(j) + "_" + std::to_string(a) +
                          "_" + std::to_string(i),
                      {2, 0}, chc::Sort::Bool)}));
      }
      c.constraint = mk_and({g.len(0, i), g.link_prefix(1, 0, i), cc_applied,
                             mk_or(std::move(steps))});
      (void)cc;
      sys.clauses.push_back(std::move(c));
    }
  }
  // V: step from a node down to its j-th child
  for (int i = 2; i <= n + 1; ++i) {
    for (int j = 1; j <= ps.arity(); ++j) {
      ChcClause c;
      c.name = "V_" + std::to_string(i) + "_" + std::to_string(j);
      c.num_logvars = 3;  // 0 = tau (head/child), 1 = theta, 2 = sigma (parent)
      c.head_logvar = 0;
      c.body_logvars = {1, 2};
      g.consistent_child(j);
      ExpP cc_applied = mk_apply("cc_" + std::to_string(j), {1, 2}, chc::Sort::Bool);
      std::vector<ExpP> steps;
      for (int a = 2; a <= n; ++a) {
        g.psi_down_core(j, a, i);
        steps.push_back(mk_and(
            {g.len(2, a),
             mk_apply("psid_" + std::to_string(j) + "_" + std::to_string(a) +
                          "_" + std::to_string(i),
                      {2, 0}, chc::Sort::Bool)}));
      }
      c.constraint = mk_and({g.len(0, i), g.link_prefix(1, 0, i), cc_applied,
                             mk_or(std::move(steps))});
      sys.clauses.push_back(std::move(c));
    }
  }

  for (int L = 0; L < p.num_pcs(); ++L)
    if (p.is_exit(L)) sys.exit_pcs.push_back(L);
  sys.layout = g.lay;
  sys.helpers = std::move(g.helpers);
  return sys;
}

ChcSystem add_exit_query(ChcSystem s, const std::set<ExitStatus>& ex) {
  if (s.has_query) throw QueryAlreadyPresentError("system already has a query");
  const LogLayout& lay = s.layout;
  int n = s.params.n;
  auto pcslot = [&](int i) {
    return chc::slot(0, lay.slot(i, lay.off_pc), chc::Sort::Int);
  };
  auto evslot = [&](int i) {
    return chc::slot(0, lay.slot(i, lay.off_event()), chc::Sort::Int);
  };
  auto avslot = [&](int i) {
    return chc::slot(0, lay.slot(i, lay.off_avail), chc::Sort::Bool);
  };
  std::vector<ExpP> ors;
  for (ExitStatus st : ex) {
    if (st == ExitStatus::O) {
      ors.push_back(mk_not(avslot(n + 1)));
      continue;
    }
    for (int i = 2; i <= n; ++i) {
      ExpP frame_cond;
      if (st == ExitStatus::C) {
        std::vector<ExpP> pcs;
        for (int L : s.exit_pcs) pcs.push_back(mk_eq(pcslot(i), ilit(L)));
        frame_cond = mk_or(std::move(pcs));
      } else if (st == ExitStatus::E) {
        frame_cond = mk_eq(evslot(i), ilit(lay.enc_event(Event::err())));
      } else {
        frame_cond = mk_eq(evslot(i), ilit(lay.enc_event(Event::oom())));
      }
      ors.push_back(mk_and({mk_not(avslot(i)), frame_cond}));
    }
  }
  ChcClause c;
  c.name = "VI";
  c.num_logvars = 1;
  c.head_logvar = -1;
  c.body_logvars = {0};
  c.constraint = mk_or(std::move(ors));
  s.clauses.push_back(std::move(c));
  s.has_query = true;
  s.query_statuses = ex;
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

bool eval_clause_constraint(const ChcSystem& s, const ChcClause& c,
                            const std::vector<const chc::FlatLog*>& binding) {
  chc::EvalContext cx;
  cx.helpers = &s.helpers;
  cx.logs = binding;
  return chc::eval(c.constraint, cx) != 0;
}

bool eval_clause(const ChcSystem& s, const ChcClause& c,
                 const std::vector<const chc::FlatLog*>& binding,
                 const std::set<chc::FlatLog>* lab) {
  bool constraint = eval_clause_constraint(s, c, binding);
  if (!lab) return constraint;
  bool bodies = true;
  for (int lv : c.body_logvars)
    if (!lab->count(*binding.at(lv))) bodies = false;
  bool head = c.head_logvar >= 0 && lab->count(*binding.at(c.head_logvar)) > 0;
  return !(bodies && constraint) || head;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

std::string emit_smtlib(const ChcSystem& s, const EmitOptions& opts) {
  std::ostringstream os;
  const LogLayout& lay = s.layout;
  chc::SlotInfo info = lay.slot_info(opts.datatype_enums);
  int nslots = lay.slots();

  os << "; knitted-tree clause system (" << s.prog_hash << ")\n";
  os << "; k=" << lay.params.k << " m=" << lay.params.m << " n=" << lay.params.n
     << "\n";
  os << "(set-logic HORN)\n";
  if (opts.datatype_enums) {
    os << "(declare-datatypes ((Dirv 0)) (((dir_self) (dir_up)";
    for (int j = 1; j <= lay.params.arity(); ++j) os << " (dir_c" << j << ")";
    os << ")))\n";
  }
  os << "(declare-fun Lab (";
  for (int i = 0; i < nslots; ++i) os << (i ? " " : "") << info.smt_sorts[i];
  os << ") Bool)\n";

  auto dir_name = [&](std::int64_t v) -> std::string {
    if (v == 0) return "dir_self";
    if (v == 1) return "dir_up";
    return "dir_c" + std::to_string(v - 1);
  };

  // rewrite integer literals compared against direction slots into datatype
  // constructors when requested
  std::function<chc::ExpP(const chc::ExpP&)> fix = [&](const chc::ExpP& e) -> chc::ExpP {
    if (!opts.datatype_enums) return e;
    using K = chc::Exp::Kind;
    if (e->kids.empty()) return e;
    auto is_dir_slot = [&](const chc::ExpP& x) {
      if (x->kind != K::Slot) return false;
      int off = x->slot % lay.frame_size;
      return off == lay.off_next_dir() || off == lay.off_prev_dir();
    };
    auto clone = std::make_shared<chc::Exp>(*e);
    for (auto& k : clone->kids) k = fix(k);
    if (e->kind == K::Eq && e->kids.size() == 2) {
      for (int side = 0; side < 2; ++side) {
        if (is_dir_slot(clone->kids[side]) &&
            clone->kids[1 - side]->kind == K::IntLit) {
          clone->kids[1 - side] =
              mk_apply(dir_name(clone->kids[1 - side]->ival), {}, chc::Sort::Int);
        }
      }
    }
    return clone;
  };

  // helpers as macro definitions
  for (const chc::Helper& h : s.helpers) {
    std::vector<std::string> prefixes;
    for (int l = 0; l < h.num_logs; ++l) prefixes.push_back("l" + std::to_string(l));
    os << "(define-fun " << h.name << " (";
    for (int l = 0; l < h.num_logs; ++l)
      for (int i = 0; i < nslots; ++i)
        os << "(" << prefixes[l] << "_" << info.names[i] << " " << info.smt_sorts[i]
           << ") ";
    os << ") " << (h.sort == chc::Sort::Bool ? "Bool" : "Int") << "\n  "
       << chc::to_smt(fix(h.body), prefixes, info) << ")\n";
  }

  // clauses
  static const char* kPrefixes[] = {"A", "B", "C", "D"};
  for (const ChcClause& c : s.clauses) {
    std::vector<std::string> prefixes;
    for (int l = 0; l < c.num_logvars; ++l) prefixes.push_back(kPrefixes[l]);
    os << "; clause " << c.name << "\n(assert (forall (";
    for (int l = 0; l < c.num_logvars; ++l)
      for (int i = 0; i < nslots; ++i)
        os << "(" << prefixes[l] << "_" << info.names[i] << " " << info.smt_sorts[i]
           << ") ";
    os << ")\n  (=> (and " << chc::to_smt(fix(c.constraint), prefixes, info);
    for (int lv : c.body_logvars) {
      os << " (Lab";
      for (int i = 0; i < nslots; ++i) os << " " << prefixes[lv] << "_" << info.names[i];
      os << ")";
    }
    os << ")\n      ";
    if (c.head_logvar < 0) {
      os << "false";
    } else {
      os << "(Lab";
      for (int i = 0; i < nslots; ++i)
        os << " " << prefixes[c.head_logvar] << "_" << info.names[i];
      os << ")";
    }
    os << ")))\n";
  }
  os << "(check-sat)\n";
  return os.str();
}

std::string emit_meta_json(const ChcSystem& s) {
  std::ostringstream os;
  int per_family_i = 0, per_family_iv = 0, per_family_v = 0;
  for (const auto& c : s.clauses) {
    if (c.name.rfind("III", 0) == 0) ++per_family_i;
    else if (c.name.rfind("IV", 0) == 0) ++per_family_iv;
    else if (c.name.rfind("V_", 0) == 0) ++per_family_v;
  }
  os << "{\n";
  os << "  \"program_hash\": \"" << s.prog_hash << "\",\n";
  os << "  \"params\": {\"k\": " << s.params.k << ", \"m\": " << s.params.m
     << ", \"n\": " << s.params.n << "},\n";
  os << "  \"clauses\": " << s.clauses.size() << ",\n";
  os << "  \"clauses_internal\": " << per_family_i << ",\n";
  os << "  \"clauses_up\": " << per_family_iv << ",\n";
  os << "  \"clauses_down\": " << per_family_v << ",\n";
  os << "  \"has_query\": " << (s.has_query ? "true" : "false") << ",\n";
  os << "  \"slots_per_log\": " << s.layout.slots() << ",\n";
  os << "  \"frame_slots\": " << s.layout.frame_size << ",\n";
  os << "  \"helpers\": " << s.helpers.size() << "\n";
  os << "}\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Test-facing predicate views
// ---------------------------------------------------------------------------

chc::ExpP predicate_consistent_child(const ChcSystem& s, const Program& p, int j) {
  Gen g(p, s.params);
  g.helpers = s.helpers;
  for (auto& h : g.helpers) g.helper_sorts[h.name] = h.sort;
  return g.consistent_child(j);
}
chc::ExpP predicate_psi_internal(const ChcSystem& s, const Program& p, int b) {
  Gen g(p, s.params);
  g.helpers = s.helpers;
  for (auto& h : g.helpers) g.helper_sorts[h.name] = h.sort;
  return g.psi_internal(b);
}
chc::ExpP predicate_psi_up(const ChcSystem& s, const Program& p, int j, int a, int b) {
  Gen g(p, s.params);
  g.helpers = s.helpers;
  for (auto& h : g.helpers) g.helper_sorts[h.name] = h.sort;
  return mk_and({g.len(0, a), g.psi_up_core(j, a, b)});
}
chc::ExpP predicate_psi_down(const ChcSystem& s, const Program& p, int j, int a, int b) {
  Gen g(p, s.params);
  g.helpers = s.helpers;
  for (auto& h : g.helpers) g.helper_sorts[h.name] = h.sort;
  return mk_and({g.len(0, a), g.psi_down_core(j, a, b)});
}

}  // namespace kw
