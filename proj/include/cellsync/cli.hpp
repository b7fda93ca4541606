#pragma once

#include "cellsync/executor.hpp"
#include "cellsync/packs.hpp"
#include "cellsync/session.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

namespace cellsync::cli {

// Exit codes shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kConfigError = 2;

/// "builtin" or "cmd:<shell command>". Throws InvalidParams for anything
/// else and the backend's errors when the command cannot start.
std::unique_ptr<ExecutorBackend> make_backend(const std::string& spec);

/// The canonical packs when `dir` is unset.
PackFile load_packs(const std::optional<std::filesystem::path>& dir);

struct EngineOptions {
  std::optional<std::filesystem::path> packs;
  std::string executor = "builtin";
  std::optional<std::string> dialect;  // defaults to the executor's dialect
  bool compact = true;
};

struct ServeOptions : EngineOptions {
  std::filesystem::path notebook;
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;
  bool stdio = false;  // serve one client over stdin/stdout instead of TCP
};

struct ReplayOptions : EngineOptions {
  std::filesystem::path trace;
  std::filesystem::path notebook;
};

/// Trace records are {"method": ..., "params": {...}} with wire method names;
/// "edit" and "transfer" are accepted for edit_cell and transfer_selection.
/// Prints {"records", "instances": [...], "variables": {name: {type, hash}}}.
int cmd_replay(const ReplayOptions& options, std::ostream& out, std::ostream& log);

/// Per cell: recognized actions, unrecognized lines and the freeze boundary
/// (the last unrecognized line; lines after it are the tool's to edit).
nlohmann::json recognize_notebook(const Notebook& nb, const PackFile& packs);
int cmd_recognize(const std::filesystem::path& notebook, const std::optional<std::filesystem::path>& packs,
                  std::ostream& out, std::ostream& log);

/// Prints {"listening": {"host", "port"}} once bound, then serves until
/// SIGINT/SIGTERM.
int cmd_serve(const ServeOptions& options, std::ostream& out, std::ostream& log);

/// The builtin backend over the executor stdio protocol.
int cmd_executor(std::istream& in, std::ostream& out);

}  // namespace cellsync::cli
