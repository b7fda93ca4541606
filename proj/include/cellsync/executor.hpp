#pragma once

#include "cellsync/document.hpp"
#include "cellsync/error.hpp"
#include "cellsync/minitable.hpp"
#include "cellsync/snapshot.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <vector>

namespace cellsync {

struct ExecutionResult {
  bool ok = true;
  std::string error;
  std::optional<ErrorCode> error_code;
  int line = 0;  // 1-based within the executed code; equals the cell line index + 1
  std::vector<std::string> bound;
  bool state_preserved = true;  // on failure: the visible state equals the pre-call state
  std::string cell_id;          // set by execute_prefix

  nlohmann::json to_json() const;
  static ExecutionResult from_json(const nlohmann::json& j);
};

struct SandboxResult {
  ExecutionResult result;
  std::vector<VariableSnapshot> snapshots;
};

class ExecutorBackend {
 public:
  virtual ~ExecutorBackend() = default;

  virtual std::string dialect() const = 0;
  virtual void reset() = 0;
  virtual ExecutionResult execute(std::string_view code) = 0;
  /// Throws UnboundVariable for a name the environment does not hold.
  virtual VariableSnapshot snapshot(std::string_view name) = 0;
  /// Runs code against a copy of the environment and snapshots `want` from
  /// the copy. The main environment is untouched whatever happens.
  virtual SandboxResult execute_sandboxed(std::string_view code, std::span<const std::string> want) = 0;
  virtual std::vector<std::string> variables() = 0;
};

/// In-process MiniTable backend. reset() restores the initial environment.
class BuiltinBackend : public ExecutorBackend {
 public:
  explicit BuiltinBackend(minitable::Env initial = {});

  std::string dialect() const override { return "minitable"; }
  void reset() override { env_ = initial_; }
  ExecutionResult execute(std::string_view code) override;
  VariableSnapshot snapshot(std::string_view name) override;
  SandboxResult execute_sandboxed(std::string_view code, std::span<const std::string> want) override;
  std::vector<std::string> variables() override;

  minitable::Interpreter& interpreter() { return interp_; }
  const minitable::Env& env() const { return env_; }

 private:
  minitable::Interpreter interp_;
  minitable::Env initial_;
  minitable::Env env_;
};

/// Code of a cell as the backend sees it: an invocation line is blanked so
/// line numbers still match the cell.
std::string executable_text(const Cell& cell);

/// Resets the backend and executes every cell up to and including
/// `through_cell_id` (all cells when empty). Stops at the first failure,
/// naming the cell in the result.
ExecutionResult execute_prefix(const Notebook& nb, std::string_view through_cell_id, ExecutorBackend& backend);

/// Same as execute_prefix but through a replacement for the target cell's text.
ExecutionResult execute_prefix_with(const Notebook& nb, const Cell& replacement, ExecutorBackend& backend);

/// Backend in a child process speaking the executor stdio protocol, one JSON
/// object per line in each direction:
///   {"op":"hello"}                         -> {"dialect":..., "version":1}
///   {"op":"reset"}                         -> {"ok":true}
///   {"op":"exec","code":...}               -> ExecutionResult
///   {"op":"snapshot","name":...}           -> snapshot JSON
///   {"op":"exec_sandbox","code":...,"want":[...]} -> {"result":..., "snapshots":[...]}
///   {"op":"vars"}                          -> {"names":[...]}
/// Any request may instead get {"error":{"code":..., "message":...}}.
class ExternalBackend : public ExecutorBackend {
 public:
  static constexpr int kProtocolVersion = 1;

  /// Runs `command` through /bin/sh and performs the handshake.
  explicit ExternalBackend(const std::string& command,
                           std::chrono::milliseconds timeout = std::chrono::seconds(10));
  ~ExternalBackend() override;
  ExternalBackend(const ExternalBackend&) = delete;
  ExternalBackend& operator=(const ExternalBackend&) = delete;

  std::string dialect() const override { return dialect_; }
  void reset() override;
  ExecutionResult execute(std::string_view code) override;
  VariableSnapshot snapshot(std::string_view name) override;
  SandboxResult execute_sandboxed(std::string_view code, std::span<const std::string> want) override;
  std::vector<std::string> variables() override;

 private:
  nlohmann::json request(const nlohmann::json& req);
  std::string read_line();
  int shutdown();  // exit status of the child, or -1

  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::chrono::milliseconds timeout_;
  std::string dialect_;
};

/// Serves a backend over the stdio protocol until `in` reaches EOF.
void serve_executor(ExecutorBackend& backend, std::istream& in, std::ostream& out);

/// Handles one protocol request; exposed for tests.
nlohmann::json handle_executor_request(ExecutorBackend& backend, const nlohmann::json& req);

}  // namespace cellsync
