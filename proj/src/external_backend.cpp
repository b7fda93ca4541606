#include "cellsync/executor.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace cellsync {

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

[[noreturn]] void raise_remote(const nlohmann::json& err) {
  auto code = parse_error_code(err.value("code", "")).value_or(ErrorCode::ProtocolError);
  throw Error(code, err.value("message", "executor reported an error"));
}

}  // namespace

ExternalBackend::ExternalBackend(const std::string& command, std::chrono::milliseconds timeout) : timeout_(timeout) {
  ignore_sigpipe();
  int in_pipe[2], out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(ErrorCode::SpawnFailed, std::strerror(errno));
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw Error(ErrorCode::SpawnFailed, std::strerror(errno));
  }
  pid_ = fork();
  if (pid_ < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    throw Error(ErrorCode::SpawnFailed, std::strerror(errno));
  }
  if (pid_ == 0) {
    setpgid(0, 0);  // lets shutdown() kill anything the shell started
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  try {
    nlohmann::json hello = request({{"op", "hello"}});
    if (!hello.contains("version") || hello["version"] != kProtocolVersion)
      throw Error(ErrorCode::ProtocolError, "executor speaks protocol version " + hello.value("version", nlohmann::json()).dump() +
                                                ", expected " + std::to_string(kProtocolVersion));
    dialect_ = hello.at("dialect").get<std::string>();
  } catch (const Error&) {
    // sh exits 127 when the command cannot be found or run
    if (shutdown() == 127) throw Error(ErrorCode::SpawnFailed, "cannot run executor '" + command + "'");
    throw;
  } catch (const nlohmann::json::exception& e) {
    shutdown();
    throw Error(ErrorCode::ProtocolError, std::string("bad handshake: ") + e.what());
  }
}

ExternalBackend::~ExternalBackend() { shutdown(); }

int ExternalBackend::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ <= 0) return -1;
  // A child that already exited keeps its status as a zombie until reaped.
  kill(-pid_, SIGKILL);
  int status = 0;
  waitpid(pid_, &status, 0);
  pid_ = -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string ExternalBackend::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw Error(ErrorCode::Timeout, "executor did not answer in time");
    pollfd pfd{from_child_, POLLIN, 0};
    int ready = poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::ProtocolError, std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[4096];
    ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::ProtocolError, "executor closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

nlohmann::json ExternalBackend::request(const nlohmann::json& req) {
  if (to_child_ < 0) throw Error(ErrorCode::ProtocolError, "executor is not running");
  std::string frame = req.dump() + "\n";
  std::size_t sent = 0;
  while (sent < frame.size()) {
    ssize_t n = write(to_child_, frame.data() + sent, frame.size() - sent);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::ProtocolError, "executor closed its input");
    sent += static_cast<std::size_t>(n);
  }
  std::string line = read_line();
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ProtocolError, std::string("executor sent invalid JSON: ") + e.what());
  }
  if (!reply.is_object()) throw Error(ErrorCode::ProtocolError, "executor reply is not an object");
  if (reply.contains("error") && reply["error"].is_object()) raise_remote(reply["error"]);
  return reply;
}

void ExternalBackend::reset() { request({{"op", "reset"}}); }

ExecutionResult ExternalBackend::execute(std::string_view code) {
  return ExecutionResult::from_json(request({{"op", "exec"}, {"code", code}}));
}

VariableSnapshot ExternalBackend::snapshot(std::string_view name) {
  return VariableSnapshot::from_json(request({{"op", "snapshot"}, {"name", name}}));
}

SandboxResult ExternalBackend::execute_sandboxed(std::string_view code, std::span<const std::string> want) {
  nlohmann::json reply = request({{"op", "exec_sandbox"}, {"code", code}, {"want", want}});
  SandboxResult out;
  try {
    out.result = ExecutionResult::from_json(reply.at("result"));
    for (const auto& s : reply.value("snapshots", nlohmann::json::array())) out.snapshots.push_back(VariableSnapshot::from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("malformed sandbox reply: ") + e.what());
  }
  return out;
}

std::vector<std::string> ExternalBackend::variables() {
  try {
    return request({{"op", "vars"}}).at("names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("malformed vars reply: ") + e.what());
  }
}

}  // namespace cellsync
