#pragma once

#include "cellsync/packs.hpp"
#include "cellsync/session.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace cellsync {

// Wire protocol: one JSON object per line in each direction.
//   request   {"id": <int>, "method": <string>, "params": {...}}
//   response  {"id": <same>, "result": ...}  or  {"id": <same>, "error": {"code", "message", "tool_message"?}}
//   event     {"id": 0, "method": "event", "params": {"type": ..., ...}}
// Event types: cell-changed, cell-added, freeze, notification.

struct ServerConfig {
  std::filesystem::path notebook;  // used when open_notebook names no path
  PackFile packs;
  SessionConfig session;
  std::function<std::unique_ptr<ExecutorBackend>()> make_backend;
  bool auto_invoke = true;  // invoke every invocation cell when a notebook opens
};

/// One end of a connection. Frames for a peer are sent with its notebook's
/// lock held, so every peer sees events in mutation order.
class Peer {
 public:
  virtual ~Peer() = default;
  virtual void send(const nlohmann::json& frame) = 0;
};

nlohmann::json error_to_json(const Error& e);

/// A notebook file, its session and its subscribers. All calls are
/// serialized; the file is rewritten after every call that changed the
/// document.
class NotebookHost {
 public:
  /// Throws NotebookLoadFailed when the file is missing or malformed.
  NotebookHost(std::filesystem::path path, const ServerConfig& config);

  /// Runs one method and returns its result; events still go to subscribers.
  /// Throws Error.
  nlohmann::json call(const std::string& method, const nlohmann::json& params);

  /// call() plus framing: the response goes to `from` (may be null) before
  /// the events, all under the lock.
  void dispatch(std::int64_t id, const std::string& method, const nlohmann::json& params, Peer* from);

  void subscribe(Peer* peer);
  void unsubscribe(Peer* peer);

  const std::filesystem::path& path() const { return path_; }
  nlohmann::json describe();
  Session& session() { return *session_; }
  const std::vector<std::pair<std::string, Error>>& invoke_errors() const { return invoke_errors_; }

 private:
  nlohmann::json call_locked(const std::string& method, const nlohmann::json& params);
  void emit(std::string type, nlohmann::json params);
  nlohmann::json cell_event(const std::string& cell_id);
  void persist();

  std::filesystem::path path_;
  std::unique_ptr<Session> session_;
  std::vector<std::pair<std::string, Error>> invoke_errors_;
  std::mutex mutex_;
  std::set<Peer*> subscribers_;
  std::vector<nlohmann::json> pending_events_;
  std::int64_t rev_ = 0;
  std::string saved_;
};

class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Handles one request line from `peer`; exactly one response goes back.
  void handle_frame(Peer& peer, std::string_view frame);
  /// Forgets the peer and its subscription.
  void disconnect(Peer& peer);

  /// Serves a single peer over streams until `in` reaches EOF.
  void serve_stream(std::istream& in, std::ostream& out);

  /// Binds a listening TCP socket; port 0 picks a free port. Returns the
  /// bound port. Throws BindFailed.
  std::uint16_t listen(const std::string& host, std::uint16_t port);
  /// Accepts connections until request_stop(); joins connection threads.
  void run();
  /// Safe to call from a signal handler.
  void request_stop() { stopping_ = true; }

  /// Opens (or returns the already open) host for a path.
  NotebookHost& open(const std::filesystem::path& path);

 private:
  void serve_connection(int fd);

  ServerConfig config_;
  std::mutex mutex_;
  std::map<std::filesystem::path, std::unique_ptr<NotebookHost>> hosts_;
  std::map<Peer*, NotebookHost*> attached_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::mutex conn_mutex_;
  std::vector<std::thread> threads_;
  std::set<int> conn_fds_;
};

}  // namespace cellsync
