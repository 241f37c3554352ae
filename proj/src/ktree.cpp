#include "kw/ktree.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace kw {

bool Frame::operator==(const Frame& o) const {
  return equal_mod_next(o) && next == o.next;
}

bool Frame::equal_mod_next(const Frame& o) const {
  return avail == o.avail && active == o.active && val == o.val && pc == o.pc &&
         d == o.d && upd == o.upd && isnil == o.isnil && event == o.event &&
         active_child == o.active_child && prev == o.prev;
}

int Log::top() const {
  int t = 0;
  for (int i = 1; i <= size(); ++i)
    if (!at(i).avail) t = i;
  return t;
}

int Backbone::child_index_of(int u) const {
  int p = parent[u];
  if (p < 0) return 0;
  for (size_t j = 0; j < children[p].size(); ++j)
    if (children[p][j] == u) return static_cast<int>(j) + 1;
  return 0;
}

std::string to_string(ExitStatus s) {
  switch (s) {
    case ExitStatus::C: return "C";
    case ExitStatus::E: return "E";
    case ExitStatus::O: return "O";
    case ExitStatus::M: return "M";
    case ExitStatus::N: return "N";
  }
  return "?";
}

bool KnittedTree::operator==(const KnittedTree& o) const {
  return backbone.parent == o.backbone.parent &&
         backbone.children == o.backbone.children && logs == o.logs;
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

Backbone backbone(const DataTree& t, int k, int m) {
  t.check();
  if (t.arity > k) throw ArityViolationError("input tree wider than k");
  Backbone b;
  int arity = k + m;

  // breadth-first over the input tree, padding every input (internal) node
  // to full degree; the empty tree yields a root plus k+m children.
  struct Item { std::vector<int> path; int parent; bool input; };
  std::deque<Item> queue;
  queue.push_back({{}, -1, t.contains({})});
  // an empty input still has an internal root
  bool empty_input = t.empty();
  while (!queue.empty()) {
    Item it = queue.front();
    queue.pop_front();
    int id = b.size();
    b.parent.push_back(it.parent);
    b.children.emplace_back();
    b.path.push_back(it.path);
    b.in_input.push_back(it.input);
    if (it.parent >= 0) {
      auto& pc = b.children[it.parent];
      pc[it.path.back() - 1] = id;
    }
    bool internal = it.input || (empty_input && it.parent < 0);
    if (internal) {
      b.children[id].assign(arity, -1);
      for (int j = 1; j <= arity; ++j) {
        auto cp = it.path;
        cp.push_back(j);
        bool cin = j <= t.arity && t.contains(cp);
        queue.push_back({cp, id, cin});
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Base case
// ---------------------------------------------------------------------------

static Frame blank_frame(const Program& p, const Params& ps) {
  Frame f;
  f.avail = true;
  f.active = false;
  f.val = 0;
  f.pc = 0;
  f.d.assign(p.data_vars.size(), 0);
  f.upd.assign(p.pointer_vars.size(), 0);
  f.isnil.assign(p.pointer_vars.size(), 0);
  f.event = Event::nop();
  f.active_child.assign(ps.arity(), 0);
  f.next = {Dir::self(), 0};
  f.prev = {Dir::self(), 0};
  return f;
}

KnittedTree kt_init(const Program& p, const DataTree& t, int m, int n,
                    const std::map<std::string, std::int64_t>& data_seed) {
  if (n < 1) throw std::invalid_argument("n must be at least 1");
  Params ps{p.k(), m, n};
  KnittedTree kt;
  kt.params = ps;
  kt.backbone = backbone(t, ps.k, ps.m);

  std::map<std::vector<int>, std::int64_t> vals = t.nodes;

  kt.logs.assign(kt.backbone.size(), Log{});
  for (int u = 0; u < kt.backbone.size(); ++u) {
    Log& log = kt.logs[u];
    log.frames.assign(ps.log_size(), blank_frame(p, ps));
    Frame& f1 = log.at(1);
    f1.avail = false;
    bool input = kt.backbone.in_input[u];
    f1.active = input;
    if (input) f1.val = vals.at(kt.backbone.path[u]);
    for (int j = 1; j <= ps.arity(); ++j) {
      int c = kt.backbone.child(u, j);
      bool child_in = c >= 0 && kt.backbone.in_input[c];
      if (input || kt.backbone.parent[u] < 0) {
        // active nodes (and the root) start with input children active and
        // the m auxiliary slots free
        f1.active_child[j - 1] = child_in;
      } else {
        // inactive non-root nodes are leaves: auxiliary slots are marked
        // taken so no allocation can land below them
        f1.active_child[j - 1] = j > ps.k ? 1 : 0;
      }
    }
  }

  // root's second frame: the initial configuration
  Log& root = kt.logs[0];
  Frame f2 = blank_frame(p, ps);
  f2.avail = false;
  f2.active = root.at(1).active;
  f2.val = root.at(1).val;
  f2.active_child = root.at(1).active_child;
  f2.pc = p.entry();
  for (size_t i = 0; i < p.data_vars.size(); ++i) {
    auto it = data_seed.find(p.data_vars[i].first);
    f2.d[i] = it != data_seed.end() ? it->second : 0;
  }
  for (size_t i = 0; i < p.pointer_vars.size(); ++i) f2.isnil[i] = 1;
  if (!t.empty()) {
    f2.event = Event::ptr_here(0);
    f2.isnil[0] = 0;
  } else {
    f2.event = Event::nop();
    f2.isnil[0] = 1;
  }
  f2.prev = {Dir::self(), 2};
  f2.next = {Dir::self(), 2};  // sentinel until extended
  root.at(2) = f2;
  return kt;
}

// ---------------------------------------------------------------------------
// Lace reconstruction
// ---------------------------------------------------------------------------

static int resolve_dir(const Backbone& b, int u, const Dir& d) {
  switch (d.kind) {
    case DirKind::Self: return u;
    case DirKind::Up: return b.parent[u];
    case DirKind::Child: return b.child(u, d.child);
  }
  return -1;
}

std::vector<FrameId> KnittedTree::lace() const {
  std::vector<FrameId> out;
  if (logs.empty() || logs[0].size() < 2 || logs[0].at(2).avail) return out;
  FrameId cur{0, 2};
  out.push_back(cur);
  for (;;) {
    const Frame& f = logs[cur.node].at(cur.index);
    const Link& nx = f.next;
    int v = resolve_dir(backbone, cur.node, nx.dir);
    if (v < 0 || nx.index < 2 || nx.index > logs[v].size()) break;
    FrameId nid{v, nx.index};
    if (nid == cur) break;  // sentinel self-link
    const Frame& g = logs[v].at(nx.index);
    if (g.avail) break;
    // g.prev must point back at cur
    int back = resolve_dir(backbone, v, g.prev.dir);
    if (back != cur.node || g.prev.index != cur.index) break;
    out.push_back(nid);
    cur = nid;
    if (out.size() > logs.size() * static_cast<size_t>(params.log_size()) + 2)
      throw MalformedLaceError("lace does not terminate");
  }
  return out;
}

FrameId KnittedTree::lace_end() const {
  auto l = lace();
  if (l.empty()) throw MalformedLaceError("empty lace");
  return l.back();
}

// ---------------------------------------------------------------------------
// Exit status
// ---------------------------------------------------------------------------

ExitStatus exit_status(const Program& prog, const KnittedTree& kt) {
  // status of the last lace frame, with O taking over at index n+1
  FrameId end = kt.lace_end();
  if (end.index == kt.params.n + 1) return ExitStatus::O;
  const Frame& f = kt.logs[end.node].at(end.index);
  if (f.event.kind == Event::Kind::Err) return ExitStatus::E;
  if (f.event.kind == Event::Kind::Oom) return ExitStatus::M;
  if (prog.is_exit(f.pc)) return ExitStatus::C;
  return ExitStatus::N;
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

KnittedTree truncate(const KnittedTree& kt, FrameId frame) {
  auto l = kt.lace();
  auto it = std::find(l.begin(), l.end(), frame);
  if (it == l.end()) throw NotOnLaceError("frame is not on the lace");
  KnittedTree out = kt;
  for (auto j = it + 1; j != l.end(); ++j) {
    Frame& f = out.logs[j->node].at(j->index);
    Frame blank;
    blank.avail = true;
    blank.active = false;
    blank.val = 0;
    blank.pc = 0;
    blank.d.assign(f.d.size(), 0);
    blank.upd.assign(f.upd.size(), 0);
    blank.isnil.assign(f.isnil.size(), 0);
    blank.event = Event::nop();
    blank.active_child.assign(f.active_child.size(), 0);
    f = blank;
  }
  // canonical sentinel on the new last frame
  Frame& last = out.logs[frame.node].at(frame.index);
  last.next = {Dir::self(), frame.index};
  return out;
}

// ---------------------------------------------------------------------------
// Well-formedness
// ---------------------------------------------------------------------------

void check_well_formed(const KnittedTree& kt) {
  const Params& ps = kt.params;
  for (int u = 0; u < kt.backbone.size(); ++u) {
    const Log& log = kt.logs[u];
    if (log.size() != ps.log_size()) throw MalformedLaceError("log size mismatch");
    // stack discipline
    bool seen_avail = false;
    for (int i = 1; i <= log.size(); ++i) {
      if (log.at(i).avail) seen_avail = true;
      else if (seen_avail) throw MalformedLaceError("log violates stack discipline");
    }
    if (log.at(1).avail) throw MalformedLaceError("first frame must be unavailable");
  }
  if (kt.logs[0].at(2).avail || kt.logs[0].at(2).prev != Link{Dir::self(), 2})
    throw MalformedLaceError("root's second frame must start the lace");

  auto l = kt.lace();
  // the lace covers exactly the unavailable frames with index >= 2
  size_t expected = 0;
  for (int u = 0; u < kt.backbone.size(); ++u)
    expected += static_cast<size_t>(std::max(0, kt.logs[u].top() - 1));
  if (l.size() != expected)
    throw MalformedLaceError("lace does not cover all occupied frames");
  // only the last lace frame may be terminal
  for (size_t q = 0; q + 1 < l.size(); ++q) {
    const Frame& f = kt.logs[l[q].node].at(l[q].index);
    if (f.event.is_terminal())
      throw MalformedLaceError("terminal frame in the middle of the lace");
  }
}

// ---------------------------------------------------------------------------
// Splice
// ---------------------------------------------------------------------------

KnittedTree splice(const Program& prog, const KnittedTree& k1, int t1, int j,
                   const KnittedTree& k2, int t2) {
  if (!(k1.params.k == k2.params.k && k1.params.m == k2.params.m &&
        k1.params.n == k2.params.n))
    throw InconsistentChildError("parameter mismatch");
  if (!consistent_child(prog, k1.params, k2.logs[t2], j, k1.logs[t1]))
    throw InconsistentChildError("child log is not consistent with the parent");

  KnittedTree out;
  out.params = k1.params;

  // rebuild the backbone: k1 with the j-th subtree of t1 replaced by the
  // subtree of k2 rooted at t2
  struct Src { const KnittedTree* kt; int node; };
  std::vector<Src> srcs;   // per new node
  std::map<std::pair<const KnittedTree*, int>, int> remap;
  std::deque<std::pair<Src, int>> queue;  // (source, new parent)
  queue.push_back({{&k1, 0}, -1});
  while (!queue.empty()) {
    auto [src, new_parent] = queue.front();
    queue.pop_front();
    int id = static_cast<int>(srcs.size());
    srcs.push_back(src);
    remap[{src.kt, src.node}] = id;
    out.backbone.parent.push_back(new_parent);
    out.backbone.children.emplace_back();
    out.backbone.in_input.push_back(src.kt->backbone.in_input[src.node]);
    std::vector<int> path;
    if (new_parent >= 0) {
      path = out.backbone.path[new_parent];
      // child slot filled below
    }
    out.backbone.path.push_back(path);  // repaired after wiring

    const Backbone& sb = src.kt->backbone;
    if (!sb.is_leaf(src.node)) {
      out.backbone.children[id].assign(out.params.arity(), -1);
      for (int c = 1; c <= out.params.arity(); ++c) {
        int child_src = sb.child(src.node, c);
        if (child_src < 0) continue;
        Src next{src.kt, child_src};
        if (src.kt == &k1 && src.node == t1 && c == j) next = {&k2, t2};
        queue.push_back({next, id});
      }
    }
  }
  // wire children and paths
  for (int id = 1; id < static_cast<int>(srcs.size()); ++id) {
    int parent = out.backbone.parent[id];
    const Src& src = srcs[id];
    // recover the child index from the source structure
    int cidx;
    if (src.kt == &k2 && src.node == t2 &&
        srcs[parent].kt == &k1 && srcs[parent].node == t1)
      cidx = j;
    else
      cidx = src.kt->backbone.child_index_of(src.node);
    out.backbone.children[parent][cidx - 1] = id;
    out.backbone.path[id] = out.backbone.path[parent];
    out.backbone.path[id].push_back(cidx);
  }
  out.logs.reserve(srcs.size());
  for (const Src& s : srcs) out.logs.push_back(s.kt->logs[s.node]);

  check_well_formed(out);
  return out;
}

// ---------------------------------------------------------------------------
// JSON / DOT export
// ---------------------------------------------------------------------------

static nlohmann::json link_to_json(const Link& l) {
  const char* d = l.dir.kind == DirKind::Self ? "-"
                  : l.dir.kind == DirKind::Up ? "up"
                                              : "child";
  nlohmann::json j{{"dir", d}, {"index", l.index}};
  if (l.dir.kind == DirKind::Child) j["child"] = l.dir.child;
  return j;
}

static Link link_from_json(const nlohmann::json& j) {
  Link l;
  std::string d = j.at("dir").get<std::string>();
  if (d == "-") l.dir = Dir::self();
  else if (d == "up") l.dir = Dir::up();
  else l.dir = Dir::down(j.at("child").get<int>());
  l.index = j.at("index").get<int>();
  return l;
}

static std::string event_to_string(const Program& p, const Event& e) {
  switch (e.kind) {
    case Event::Kind::Nop: return "nop";
    case Event::Kind::Err: return "err";
    case Event::Kind::Oom: return "oom";
    case Event::Kind::FieldAssignNil:
      return "<" + p.pointer_fields[e.field] + ":=nil>";
    case Event::Kind::FieldAssignPtr:
      return "<" + p.pointer_fields[e.field] + ":=" + p.pointer_vars[e.ptr] + ">";
    case Event::Kind::PtrHere:
      return "<" + p.pointer_vars[e.ptr] + ":=here>";
    case Event::Kind::Rwd:
      return "rwd_" + std::to_string(e.pos);
    case Event::Kind::RwdP:
      return "rwd_" + std::to_string(e.pos) + "," + p.pointer_vars[e.ptr];
  }
  return "?";
}

static Event event_from_string(const Program& p, const std::string& s) {
  if (s == "nop") return Event::nop();
  if (s == "err") return Event::err();
  if (s == "oom") return Event::oom();
  if (s.rfind("rwd_", 0) == 0) {
    auto rest = s.substr(4);
    auto comma = rest.find(',');
    if (comma == std::string::npos) return Event::rwd(std::stoi(rest));
    int pos = std::stoi(rest.substr(0, comma));
    int pv = p.pv_index(rest.substr(comma + 1));
    return Event::rwd_p(pos, pv);
  }
  // <lhs:=rhs>
  auto body = s.substr(1, s.size() - 2);
  auto sep = body.find(":=");
  std::string lhs = body.substr(0, sep), rhs = body.substr(sep + 2);
  int pf = p.pf_index(lhs);
  if (pf >= 0) {
    if (rhs == "nil") return Event::field_nil(pf);
    return Event::field_ptr(pf, p.pv_index(rhs));
  }
  return Event::ptr_here(p.pv_index(lhs));
}

std::string kt_to_json(const Program& prog, const KnittedTree& kt) {
  nlohmann::json j;
  j["params"] = {{"k", kt.params.k}, {"m", kt.params.m}, {"n", kt.params.n}};
  j["pointer_vars"] = prog.pointer_vars;
  nlohmann::json nodes = nlohmann::json::array();
  for (int u = 0; u < kt.backbone.size(); ++u) {
    nlohmann::json node;
    std::string path;
    for (size_t i = 0; i < kt.backbone.path[u].size(); ++i) {
      if (i) path += '.';
      path += std::to_string(kt.backbone.path[u][i]);
    }
    node["path"] = path;
    node["input"] = static_cast<bool>(kt.backbone.in_input[u]);
    nlohmann::json frames = nlohmann::json::array();
    for (int i = 1; i <= kt.logs[u].size(); ++i) {
      const Frame& f = kt.logs[u].at(i);
      nlohmann::json fr;
      fr["avail"] = f.avail;
      fr["active"] = f.active;
      fr["val"] = f.val;
      fr["pc"] = f.pc;
      fr["d"] = f.d;
      fr["upd"] = f.upd;
      fr["isnil"] = f.isnil;
      fr["event"] = event_to_string(prog, f.event);
      fr["active_child"] = f.active_child;
      fr["next"] = link_to_json(f.next);
      fr["prev"] = link_to_json(f.prev);
      frames.push_back(std::move(fr));
    }
    node["log"] = std::move(frames);
    nodes.push_back(std::move(node));
  }
  j["nodes"] = std::move(nodes);
  return j.dump(2);
}

KnittedTree kt_from_json(const Program& prog, const std::string& text) {
  auto j = nlohmann::json::parse(text);
  KnittedTree kt;
  kt.params.k = j.at("params").at("k").get<int>();
  kt.params.m = j.at("params").at("m").get<int>();
  kt.params.n = j.at("params").at("n").get<int>();

  // rebuild the backbone from paths
  std::map<std::vector<int>, int> by_path;
  std::vector<std::vector<int>> paths;
  for (const auto& node : j.at("nodes")) {
    std::vector<int> path;
    std::string ps = node.at("path").get<std::string>();
    if (!ps.empty()) {
      std::stringstream ss(ps);
      std::string part;
      while (std::getline(ss, part, '.')) path.push_back(std::stoi(part));
    }
    paths.push_back(path);
  }
  // order given is creation order (BFS); keep it
  for (size_t i = 0; i < paths.size(); ++i) by_path[paths[i]] = static_cast<int>(i);
  kt.backbone.parent.assign(paths.size(), -1);
  kt.backbone.children.assign(paths.size(), {});
  kt.backbone.path = paths;
  kt.backbone.in_input.assign(paths.size(), false);
  for (size_t i = 0; i < paths.size(); ++i) {
    if (!paths[i].empty()) {
      auto parent_path = paths[i];
      int cidx = parent_path.back();
      parent_path.pop_back();
      int pid = by_path.at(parent_path);
      kt.backbone.parent[i] = pid;
      if (kt.backbone.children[pid].empty())
        kt.backbone.children[pid].assign(kt.params.arity(), -1);
      kt.backbone.children[pid][cidx - 1] = static_cast<int>(i);
    }
  }
  int idx = 0;
  for (const auto& node : j.at("nodes")) {
    kt.backbone.in_input[idx] = node.at("input").get<bool>();
    Log log;
    for (const auto& fr : node.at("log")) {
      Frame f;
      f.avail = fr.at("avail").get<bool>();
      f.active = fr.at("active").get<bool>();
      f.val = fr.at("val").get<std::int64_t>();
      f.pc = fr.at("pc").get<int>();
      f.d = fr.at("d").get<std::vector<std::int64_t>>();
      f.upd = fr.at("upd").get<std::vector<std::uint8_t>>();
      f.isnil = fr.at("isnil").get<std::vector<std::uint8_t>>();
      f.event = event_from_string(prog, fr.at("event").get<std::string>());
      f.active_child = fr.at("active_child").get<std::vector<std::uint8_t>>();
      f.next = link_from_json(fr.at("next"));
      f.prev = link_from_json(fr.at("prev"));
      log.frames.push_back(std::move(f));
    }
    kt.logs.push_back(std::move(log));
    ++idx;
  }
  return kt;
}

std::string kt_to_dot(const Program& prog, const KnittedTree& kt) {
  std::ostringstream os;
  os << "digraph knitted_tree {\n  rankdir=TB;\n  node [shape=plaintext];\n";
  // global lace positions for annotation
  auto l = kt.lace();
  std::map<std::pair<int, int>, int> pos;
  for (size_t q = 0; q < l.size(); ++q) pos[{l[q].node, l[q].index}] = static_cast<int>(q) + 1;

  for (int u = 0; u < kt.backbone.size(); ++u) {
    const Log& log = kt.logs[u];
    os << "  n" << u << " [label=<<table border=\"1\" cellborder=\"1\" cellspacing=\"0\">";
    os << "<tr><td bgcolor=\"lightblue\">u" << u << " val:" << log.at(1).val
       << (log.at(1).active ? "" : " inactive") << "</td>";
    for (int i = 2; i <= log.top(); ++i) {
      const Frame& f = log.at(i);
      os << "<td port=\"f" << i << "\">";
      auto it = pos.find({u, i});
      if (it != pos.end()) os << "<font color=\"red\">" << it->second << "</font><br/>";
      os << "pc:" << f.pc << "<br/>" << event_to_string(prog, f.event);
      std::string us;
      for (size_t pv = 0; pv < f.upd.size(); ++pv)
        if (f.upd[pv]) us += (us.empty() ? "" : ",") + prog.pointer_vars[pv];
      if (!us.empty()) os << "<br/>upd:" << us;
      os << "</td>";
    }
    os << "</tr></table>>];\n";
  }
  for (int u = 0; u < kt.backbone.size(); ++u)
    if (kt.backbone.parent[u] >= 0)
      os << "  n" << kt.backbone.parent[u] << " -> n" << u << " [color=blue];\n";
  for (size_t q = 0; q + 1 < l.size(); ++q) {
    os << "  n" << l[q].node << ":f" << l[q].index << " -> n" << l[q + 1].node << ":f"
       << l[q + 1].index << " [color=red, constraint=false];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace kw
