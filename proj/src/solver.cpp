#include "kw/solver.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kw {

std::string to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::Sat: return "sat";
    case SolverStatus::Unsat: return "unsat";
    case SolverStatus::Unknown: return "unknown";
    case SolverStatus::Timeout: return "timeout";
    case SolverStatus::SolverError: return "error";
  }
  return "?";
}

namespace {

bool executable_on_path(const std::string& name) {
  if (name.find('/') != std::string::npos) return access(name.c_str(), X_OK) == 0;
  const char* path = getenv("PATH");
  if (!path) return false;
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    std::string full = dir + "/" + name;
    if (access(full.c_str(), X_OK) == 0) return true;
  }
  return false;
}

// minimal key = "value" / section.key parser for kw.toml
std::optional<SolverConfig> load_toml(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  SolverConfig cfg;
  bool any = false;
  std::string line, section;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = trim(line.substr(1, line.find(']') - 1));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    auto unquote = [&](std::string v) {
      if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
        return v.substr(1, v.size() - 2);
      return v;
    };
    if (key == "engine.path") {
      cfg.path = unquote(val);
      any = true;
    } else if (key == "engine.args") {
      // ["a", "b"] or a plain string
      std::string v = val;
      cfg.args.clear();
      if (!v.empty() && v.front() == '[') {
        std::string item;
        bool in_str = false;
        for (char ch : v) {
          if (ch == '"') {
            if (in_str) { cfg.args.push_back(item); item.clear(); }
            in_str = !in_str;
          } else if (in_str) {
            item += ch;
          }
        }
      } else {
        std::stringstream as(unquote(v));
        std::string a;
        while (as >> a) cfg.args.push_back(a);
      }
      any = true;
    } else if (key == "engine.input_mode") {
      cfg.use_stdin = unquote(val) == "stdin";
      any = true;
    } else if (key == "timeout_s") {
      cfg.timeout_s = std::stod(val);
      any = true;
    }
  }
  if (!any || cfg.path.empty()) return std::nullopt;
  if (cfg.args.empty() && !cfg.use_stdin) cfg.args = {"{file}"};
  return cfg;
}

}  // namespace

std::optional<SolverConfig> SolverConfig::resolve(const std::string& config_path) {
  if (const char* env = getenv("KW_SOLVER")) {
    std::string path = env;
    if (!path.empty()) {
      SolverConfig cfg;
      cfg.path = path;
      cfg.args = {"{file}"};
      return cfg;
    }
  }
  if (!config_path.empty()) {
    if (auto cfg = load_toml(config_path)) return cfg;
  }
  if (auto cfg = load_toml("kw.toml")) return cfg;
  // known engine profiles
  if (executable_on_path("z3")) {
    SolverConfig cfg;
    cfg.path = "z3";
    cfg.args = {"-smt2", "{file}"};
    return cfg;
  }
  if (executable_on_path("eld")) {
    SolverConfig cfg;
    cfg.path = "eld";
    cfg.args = {"{file}"};
    return cfg;
  }
  if (executable_on_path("kw-z3")) {
    SolverConfig cfg;
    cfg.path = "kw-z3";
    cfg.args = {"{file}"};
    return cfg;
  }
  return std::nullopt;
}

SolverAnswer solve(const std::string& smt_text, const SolverConfig& config) {
  SolverAnswer ans;
  auto t0 = std::chrono::steady_clock::now();

  // input file
  char tmpl[] = "/tmp/kw_query_XXXXXX";
  int tmpfd = -1;
  std::string tmppath;
  if (!config.use_stdin) {
    tmpfd = mkstemp(tmpl);
    if (tmpfd < 0) {
      ans.raw = "cannot create temporary file";
      return ans;
    }
    tmppath = tmpl;
    if (write(tmpfd, smt_text.data(), smt_text.size()) < 0) {
      close(tmpfd);
      unlink(tmppath.c_str());
      ans.raw = "cannot write temporary file";
      return ans;
    }
    close(tmpfd);
  }

  std::vector<std::string> argv_s{config.path};
  for (const std::string& a : config.args) {
    if (a == "{file}") argv_s.push_back(tmppath);
    else argv_s.push_back(a);
  }

  int outpipe[2], inpipe[2];
  if (pipe(outpipe) != 0 || pipe(inpipe) != 0) {
    ans.raw = "pipe failed";
    return ans;
  }
  pid_t pid = fork();
  if (pid < 0) {
    ans.raw = "fork failed";
    return ans;
  }
  if (pid == 0) {
    dup2(inpipe[0], 0);
    dup2(outpipe[1], 1);
    dup2(outpipe[1], 2);
    close(inpipe[0]);
    close(inpipe[1]);
    close(outpipe[0]);
    close(outpipe[1]);
    std::vector<char*> argv;
    for (auto& s : argv_s) argv.push_back(const_cast<char*>(s.c_str()));
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    fprintf(stderr, "exec failed: %s\n", strerror(errno));
    _exit(127);
  }
  close(inpipe[0]);
  close(outpipe[1]);

  if (config.use_stdin) {
    size_t off = 0;
    while (off < smt_text.size()) {
      ssize_t w = write(inpipe[1], smt_text.data() + off, smt_text.size() - off);
      if (w <= 0) break;
      off += static_cast<size_t>(w);
    }
  }
  close(inpipe[1]);

  std::string out;
  bool timed_out = false;
  double deadline = config.timeout_s;
  for (;;) {
    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                       .count();
    double left = deadline - elapsed;
    if (left <= 0) { timed_out = true; break; }
    struct pollfd pfd{outpipe[0], POLLIN, 0};
    int pr = poll(&pfd, 1, static_cast<int>(left * 1000) + 1);
    if (pr < 0) break;
    if (pr == 0) { timed_out = true; break; }
    char buf[4096];
    ssize_t r = read(outpipe[0], buf, sizeof buf);
    if (r <= 0) break;
    out.append(buf, static_cast<size_t>(r));
  }
  close(outpipe[0]);

  if (timed_out) {
    kill(pid, SIGKILL);
  }
  int wstatus = 0;
  // grace period: reap within ~1s even on timeout
  for (int i = 0; i < 100; ++i) {
    pid_t r = waitpid(pid, &wstatus, WNOHANG);
    if (r == pid) break;
    usleep(10000);
  }
  waitpid(pid, &wstatus, WNOHANG);

  if (!tmppath.empty()) unlink(tmppath.c_str());
  ans.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ans.raw = out;

  if (timed_out) {
    ans.status = SolverStatus::Timeout;
    return ans;
  }
  // classify by the first status token
  std::stringstream ss(out);
  std::string tok;
  while (ss >> tok) {
    if (tok == "sat") { ans.status = SolverStatus::Sat; return ans; }
    if (tok == "unsat") { ans.status = SolverStatus::Unsat; return ans; }
    if (tok == "unknown") { ans.status = SolverStatus::Unknown; return ans; }
  }
  if (WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 127) {
    ans.status = SolverStatus::SolverError;
    if (ans.raw.empty()) ans.raw = "engine not found";
    return ans;
  }
  ans.status = SolverStatus::SolverError;
  return ans;
}

}  // namespace kw
