#include "cellsync/executor.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

namespace cellsync {

nlohmann::json ExecutionResult::to_json() const {
  nlohmann::json j = {{"ok", ok}, {"bound", bound}, {"state_preserved", state_preserved}};
  if (!ok) {
    j["error"] = error;
    j["line"] = line;
    if (error_code) j["code"] = to_string(*error_code);
  }
  if (!cell_id.empty()) j["cell_id"] = cell_id;
  return j;
}

ExecutionResult ExecutionResult::from_json(const nlohmann::json& j) {
  try {
    ExecutionResult r;
    r.ok = j.at("ok").get<bool>();
    r.error = j.value("error", "");
    r.line = j.value("line", 0);
    r.bound = j.value("bound", std::vector<std::string>{});
    r.state_preserved = j.value("state_preserved", true);
    r.cell_id = j.value("cell_id", "");
    if (j.contains("code")) r.error_code = parse_error_code(j.at("code").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("malformed execution result: ") + e.what());
  }
}

BuiltinBackend::BuiltinBackend(minitable::Env initial) : initial_(std::move(initial)), env_(initial_) {
  interp_.add_fixture("census", minitable::census_fixture());
}

namespace {

ExecutionResult failure(const Error& e, int line) {
  ExecutionResult r;
  r.ok = false;
  r.error = e.what();
  r.error_code = e.code();
  r.line = line;
  return r;
}

// Evaluates into `out`, leaving it untouched on failure.
ExecutionResult run(const minitable::Interpreter& interp, std::string_view code, minitable::Env& out) {
  try {
    minitable::Program program = minitable::parse_program(code);
    minitable::Env next = interp.eval(program, out);
    ExecutionResult r;
    for (const auto& stmt : program)
      if (!stmt.target.empty() && std::find(r.bound.begin(), r.bound.end(), stmt.target) == r.bound.end())
        r.bound.push_back(stmt.target);
    out = std::move(next);
    return r;
  } catch (const minitable::ScriptError& e) {
    return failure(e, e.line());
  } catch (const Error& e) {
    return failure(e, 0);
  }
}

}  // namespace

ExecutionResult BuiltinBackend::execute(std::string_view code) { return run(interp_, code, env_); }

VariableSnapshot BuiltinBackend::snapshot(std::string_view name) {
  auto it = env_.find(name);
  if (it == env_.end()) throw Error(ErrorCode::UnboundVariable, "variable '" + std::string(name) + "' is not bound");
  return minitable::snapshot(it->second, std::string(name));
}

SandboxResult BuiltinBackend::execute_sandboxed(std::string_view code, std::span<const std::string> want) {
  minitable::Env copy = env_;
  SandboxResult out{run(interp_, code, copy), {}};
  if (!out.result.ok) return out;
  for (const auto& name : want) {
    auto it = copy.find(name);
    if (it == copy.end()) {
      out.result = failure(Error(ErrorCode::UnboundVariable, "sandboxed code did not bind '" + name + "'"), 0);
      out.snapshots.clear();
      return out;
    }
    out.snapshots.push_back(minitable::snapshot(it->second, name));
  }
  return out;
}

std::vector<std::string> BuiltinBackend::variables() {
  std::vector<std::string> names;
  for (const auto& [name, value] : env_) names.push_back(name);
  return names;
}

namespace {

bool is_magic_line(const std::string& text) {
  auto start = text.find_first_not_of(" \t");
  return start != std::string::npos && text.compare(start, 2, "%%") == 0;
}

}  // namespace

std::string executable_text(const Cell& cell) {
  std::string out;
  for (std::size_t i = 0; i < cell.lines.size(); ++i) {
    if (i) out += '\n';
    if (i == 0 && is_magic_line(cell.lines[i].text)) continue;
    out += cell.lines[i].text;
  }
  return out;
}

ExecutionResult execute_prefix(const Notebook& nb, std::string_view through_cell_id, ExecutorBackend& backend) {
  if (!through_cell_id.empty() && !nb.find(through_cell_id))
    throw Error(ErrorCode::UnknownCell, "no cell '" + std::string(through_cell_id) + "'");
  backend.reset();
  ExecutionResult last;
  for (const auto& cell : nb.cells) {
    ExecutionResult r = backend.execute(executable_text(cell));
    if (!r.ok) {
      r.cell_id = cell.id;
      return r;
    }
    for (auto& name : r.bound)
      if (std::find(last.bound.begin(), last.bound.end(), name) == last.bound.end()) last.bound.push_back(name);
    if (cell.id == through_cell_id) break;
  }
  return last;
}

ExecutionResult execute_prefix_with(const Notebook& nb, const Cell& replacement, ExecutorBackend& backend) {
  Notebook copy = nb;
  Cell* target = copy.find(replacement.id);
  if (!target) throw Error(ErrorCode::UnknownCell, "no cell '" + replacement.id + "'");
  *target = replacement;
  return execute_prefix(copy, replacement.id, backend);
}

nlohmann::json handle_executor_request(ExecutorBackend& backend, const nlohmann::json& req) {
  auto error_reply = [](ErrorCode code, const std::string& message) {
    return nlohmann::json{{"error", {{"code", to_string(code)}, {"message", message}}}};
  };
  try {
    const std::string op = req.at("op").get<std::string>();
    if (op == "hello") return {{"dialect", backend.dialect()}, {"version", ExternalBackend::kProtocolVersion}};
    if (op == "reset") {
      backend.reset();
      return {{"ok", true}};
    }
    if (op == "exec") return backend.execute(req.at("code").get<std::string>()).to_json();
    if (op == "snapshot") return backend.snapshot(req.at("name").get<std::string>()).to_json();
    if (op == "exec_sandbox") {
      auto want = req.value("want", std::vector<std::string>{});
      SandboxResult r = backend.execute_sandboxed(req.at("code").get<std::string>(), want);
      nlohmann::json snaps = nlohmann::json::array();
      for (const auto& s : r.snapshots) snaps.push_back(s.to_json());
      return {{"result", r.result.to_json()}, {"snapshots", std::move(snaps)}};
    }
    if (op == "vars") return {{"names", backend.variables()}};
    return error_reply(ErrorCode::UnknownMethod, "unknown op '" + op + "'");
  } catch (const Error& e) {
    return error_reply(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_reply(ErrorCode::InvalidParams, e.what());
  }
}

void serve_executor(ExecutorBackend& backend, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json reply;
    try {
      reply = handle_executor_request(backend, nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      reply = {{"error", {{"code", to_string(ErrorCode::ParseError)}, {"message", e.what()}}}};
    }
    out << reply.dump() << '\n' << std::flush;
  }
}

}  // namespace cellsync
