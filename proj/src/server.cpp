#include "cellsync/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cellsync {

namespace {

const nlohmann::json& require(const nlohmann::json& params, const char* key) {
  if (!params.contains(key)) throw Error(ErrorCode::InvalidParams, std::string("missing parameter '") + key + "'");
  return params[key];
}

std::string require_string(const nlohmann::json& params, const char* key) {
  const nlohmann::json& v = require(params, key);
  if (!v.is_string()) throw Error(ErrorCode::InvalidParams, std::string("parameter '") + key + "' must be a string");
  return v.get<std::string>();
}

BindingSet bindings_of(const nlohmann::json& params) {
  BindingSet out;
  if (!params.contains("bindings")) return out;
  const nlohmann::json& b = params["bindings"];
  if (!b.is_object()) throw Error(ErrorCode::InvalidParams, "bindings must be an object");
  for (const auto& [k, v] : b.items()) {
    if (v.is_string()) out[k] = v.get<std::string>();
    else if (v.is_number()) out[k] = format_number(v.get<double>());
    else throw Error(ErrorCode::InvalidParams, "binding '" + k + "' must be a string or number");
  }
  return out;
}

nlohmann::json cell_json(const Cell& c) {
  nlohmann::json j = cell_to_json(c);
  j["text"] = c.text();
  return j;
}

nlohmann::json instance_json(const Session& s, const ToolInstance& inst) {
  return {{"instance_id", inst.instance_id},
          {"tool", inst.tool_name},
          {"cell_id", inst.cell_id},
          {"variable", inst.displayed_var},
          {"view", s.tool(inst.tool_name).view_id},
          {"next_seq", inst.next_seq},
          {"snapshot", inst.data.to_json()}};
}

void send_error(Peer& peer, const nlohmann::json& id, const Error& e) {
  peer.send({{"id", id}, {"error", error_to_json(e)}});
}

}  // namespace

nlohmann::json error_to_json(const Error& e) {
  nlohmann::json j{{"code", to_string(e.code())}, {"message", e.what()}};
  if (e.tool_message()) j["tool_message"] = *e.tool_message();
  return j;
}

NotebookHost::NotebookHost(std::filesystem::path path, const ServerConfig& config) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotebookLoadFailed, "cannot read notebook " + path_.string());
  std::stringstream bytes;
  bytes << in.rdbuf();
  Notebook nb;
  try {
    nb = load_notebook(bytes.str());
  } catch (const Error& e) {
    throw Error(ErrorCode::NotebookLoadFailed, path_.string() + ": " + e.what());
  }
  if (!config.make_backend) throw Error(ErrorCode::InvalidParams, "server has no executor");
  session_ = std::make_unique<Session>(std::move(nb), config.make_backend(), config.session);
  session_->register_pack(config.packs);
  if (config.auto_invoke) invoke_errors_ = session_->auto_invoke();
  saved_ = save_notebook(session_->notebook());
}

void NotebookHost::subscribe(Peer* peer) {
  std::lock_guard lock(mutex_);
  subscribers_.insert(peer);
}

void NotebookHost::unsubscribe(Peer* peer) {
  std::lock_guard lock(mutex_);
  subscribers_.erase(peer);
}

nlohmann::json NotebookHost::describe() {
  std::lock_guard lock(mutex_);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : session_->notebook().cells) cells.push_back(cell_json(c));
  nlohmann::json instances = nlohmann::json::array();
  for (const auto* inst : session_->instances()) instances.push_back(instance_json(*session_, *inst));
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& [cell_id, e] : invoke_errors_) errors.push_back({{"cell_id", cell_id}, {"error", error_to_json(e)}});
  return {{"path", path_.string()},
          {"version", session_->notebook().version},
          {"rev", rev_},
          {"dialect", session_->dialect()},
          {"cells", std::move(cells)},
          {"instances", std::move(instances)},
          {"invoke_errors", std::move(errors)}};
}

void NotebookHost::emit(std::string type, nlohmann::json params) {
  params["type"] = std::move(type);
  pending_events_.push_back({{"id", 0}, {"method", "event"}, {"params", std::move(params)}});
}

nlohmann::json NotebookHost::cell_event(const std::string& cell_id) {
  const Notebook& nb = session_->notebook();
  const Cell* c = nb.find(cell_id);
  return {{"cell_id", cell_id},
          {"index", *nb.index_of(cell_id)},
          {"text", c->text()},
          {"cell", cell_to_json(*c)},
          {"rev", ++rev_}};
}

void NotebookHost::persist() {
  std::string bytes = save_notebook(session_->notebook());
  if (bytes == saved_) return;
  std::filesystem::path tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << bytes;
    if (!out) {
      std::cerr << "cellsync: cannot write " << tmp << "\n";
      return;
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path_, ec);
  if (ec) {
    std::cerr << "cellsync: cannot replace " << path_ << ": " << ec.message() << "\n";
    return;
  }
  saved_ = std::move(bytes);
}

nlohmann::json NotebookHost::call(const std::string& method, const nlohmann::json& params) {
  std::lock_guard lock(mutex_);
  struct Flush {
    NotebookHost& h;
    ~Flush() {
      h.persist();
      for (const auto& ev : h.pending_events_)
        for (Peer* p : h.subscribers_) p->send(ev);
      h.pending_events_.clear();
    }
  } flush{*this};
  return call_locked(method, params);
}

void NotebookHost::dispatch(std::int64_t id, const std::string& method, const nlohmann::json& params, Peer* from) {
  std::lock_guard lock(mutex_);
  nlohmann::json response;
  try {
    response = {{"id", id}, {"result", call_locked(method, params)}};
  } catch (const Error& e) {
    response = {{"id", id}, {"error", error_to_json(e)}};
  } catch (const nlohmann::json::exception& e) {
    response = {{"id", id}, {"error", {{"code", "invalid-params"}, {"message", e.what()}}}};
  }
  persist();
  if (from) from->send(response);
  for (const auto& ev : pending_events_)
    for (Peer* p : subscribers_) p->send(ev);
  pending_events_.clear();
}

nlohmann::json NotebookHost::call_locked(const std::string& method, const nlohmann::json& params) {
  if (!params.is_object()) throw Error(ErrorCode::InvalidParams, "params must be an object");
  Session& s = *session_;

  if (method == "list_tools") {
    nlohmann::json tools = nlohmann::json::array();
    for (const auto* t : s.tools()) {
      nlohmann::json ps = nlohmann::json::array(), actions = nlohmann::json::array(), targets = nlohmann::json::array();
      for (const auto& p : t->params) ps.push_back({{"name", p.name}, {"types", p.accepted_types}});
      for (const auto& a : t->packs) actions.push_back(a.action_name);
      for (const auto& target : t->selection_targets) {
        nlohmann::json tj{{"name", target.name}};
        if (target.tool) tj["tool"] = *target.tool;
        targets.push_back(std::move(tj));
      }
      nlohmann::json tj{{"name", t->tool_name}, {"view", t->view_id}, {"params", ps}, {"actions", actions},
                        {"targets", targets}};
      if (t->state_model) tj["state_model"] = *t->state_model;
      tools.push_back(std::move(tj));
    }
    return tools;
  }

  if (method == "invoke") {
    std::string cell_id;
    if (params.contains("cell_id")) {
      cell_id = require_string(params, "cell_id");
    } else {
      std::optional<std::string> after;
      if (params.contains("after")) after = require_string(params, "after");
      std::string line = require_string(params, "line");
      parse_invocation(line);  // reject a malformed line before it lands in the notebook
      cell_id = s.add_cell(line, after);
      emit("cell-added", cell_event(cell_id));
    }
    const ToolInstance& inst = s.invoke_tool(cell_id);
    return instance_json(s, inst);
  }

  if (method == "handoff") {
    SyncResult r = s.handoff(require_string(params, "instance_id"), require_string(params, "action"),
                             bindings_of(params));
    emit("cell-changed", cell_event(r.cell_id));
    ToolNotification refresh{ToolNotification::Kind::DataRefresh, 0, {}, {}, r.snapshot, {}};
    emit("notification", {{"instance_id", r.instance_id}, {"notification", refresh.to_json()}});
    return {{"instance_id", r.instance_id},
            {"cell_id", r.cell_id},
            {"cell_text", r.cell_text},
            {"seq", r.action.seq},
            {"compacted", r.compacted},
            {"snapshot", r.snapshot.to_json()}};
  }

  if (method == "edit_cell") {
    std::string cell_id = require_string(params, "cell_id");
    std::string text = require_string(params, "text");
    const Cell* before = s.notebook().find(cell_id);
    std::optional<Cell> old = before ? std::optional<Cell>(*before) : std::nullopt;
    EditResult r = s.on_code_edit(cell_id, text);
    if (old && *s.notebook().find(cell_id) != *old) emit("cell-changed", cell_event(cell_id));
    if (r.report.new_freeze_boundary || !r.report.newly_frozen.empty()) {
      nlohmann::json freeze{{"cell_id", cell_id}, {"lines", r.report.newly_frozen}};
      freeze["boundary"] = r.report.new_freeze_boundary ? nlohmann::json(*r.report.new_freeze_boundary) : nlohmann::json(nullptr);
      if (r.instance_id) freeze["instance_id"] = *r.instance_id;
      emit("freeze", std::move(freeze));
    }
    nlohmann::json notes = nlohmann::json::array();
    for (const auto& n : r.notifications) {
      notes.push_back(n.to_json());
      emit("notification", {{"instance_id", *r.instance_id}, {"notification", n.to_json()}});
    }
    nlohmann::json out{{"cell_id", cell_id}, {"text", s.notebook().find(cell_id)->text()}, {"notifications", notes}};
    if (r.instance_id) out["instance_id"] = *r.instance_id;
    return out;
  }

  if (method == "get_variable") return s.get_variable(require_string(params, "name")).to_json();

  if (method == "transfer_selection") {
    TransferResult r = s.transfer_selection(require_string(params, "instance_id"),
                                            SelectionSpec::from_json(require(params, "selection")),
                                            require_string(params, "target"));
    emit("cell-added", cell_event(r.cell_id));
    nlohmann::json out{{"cell_id", r.cell_id}, {"variable", r.variable}, {"snapshot", r.snapshot.to_json()}};
    if (r.instance_id) out["instance"] = instance_json(s, s.instance(*r.instance_id));
    return out;
  }

  throw Error(ErrorCode::UnknownMethod, "unknown method '" + method + "'");
}

Server::Server(ServerConfig config) : config_(std::move(config)) {}

Server::~Server() {
  request_stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  for (auto& t : threads_)
    if (t.joinable()) t.join();
}

NotebookHost& Server::open(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::path key = std::filesystem::weakly_canonical(path, ec);
  if (ec) key = path;
  std::lock_guard lock(mutex_);
  auto it = hosts_.find(key);
  if (it != hosts_.end()) return *it->second;
  auto host = std::make_unique<NotebookHost>(key, config_);
  return *hosts_.emplace(key, std::move(host)).first->second;
}

void Server::handle_frame(Peer& peer, std::string_view frame) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(frame);
  } catch (const nlohmann::json::exception& e) {
    send_error(peer, nullptr, Error(ErrorCode::ParseError, std::string("malformed frame: ") + e.what()));
    return;
  }
  nlohmann::json id = req.is_object() && req.contains("id") ? req["id"] : nlohmann::json(nullptr);
  if (!req.is_object() || !id.is_number_integer() || !req.contains("method") || !req["method"].is_string()) {
    send_error(peer, id, Error(ErrorCode::InvalidParams, "a request needs an integer id and a method"));
    return;
  }
  const std::string method = req["method"].get<std::string>();
  nlohmann::json params = req.value("params", nlohmann::json::object());
  if (!params.is_object()) {
    send_error(peer, id, Error(ErrorCode::InvalidParams, "params must be an object"));
    return;
  }

  if (method == "open_notebook") {
    try {
      std::filesystem::path path = params.contains("path") ? std::filesystem::path(require_string(params, "path"))
                                                           : config_.notebook;
      if (path.empty()) throw Error(ErrorCode::InvalidParams, "no notebook path given");
      NotebookHost& host = open(path);
      NotebookHost* previous = nullptr;
      {
        std::lock_guard lock(mutex_);
        previous = attached_[&peer];
        attached_[&peer] = &host;
      }
      if (previous && previous != &host) previous->unsubscribe(&peer);
      peer.send({{"id", id}, {"result", host.describe()}});
    } catch (const Error& e) {
      send_error(peer, id, e);
    }
    return;
  }

  NotebookHost* host = nullptr;
  {
    std::lock_guard lock(mutex_);
    auto it = attached_.find(&peer);
    if (it != attached_.end()) host = it->second;
  }
  if (!host) {
    send_error(peer, id, Error(ErrorCode::NoSession, "call open_notebook first"));
    return;
  }
  if (method == "subscribe") {
    host->subscribe(&peer);
    nlohmann::json d = host->describe();
    peer.send({{"id", id}, {"result", {{"subscribed", true}, {"rev", d["rev"]}}}});
    return;
  }
  host->dispatch(id.get<std::int64_t>(), method, params, &peer);
}

void Server::disconnect(Peer& peer) {
  NotebookHost* host = nullptr;
  {
    std::lock_guard lock(mutex_);
    auto it = attached_.find(&peer);
    if (it == attached_.end()) return;
    host = it->second;
    attached_.erase(it);
  }
  if (host) host->unsubscribe(&peer);
}

namespace {

class StreamPeer : public Peer {
 public:
  explicit StreamPeer(std::ostream& out) : out_(out) {}
  void send(const nlohmann::json& frame) override {
    std::lock_guard lock(mutex_);
    out_ << frame.dump() << '\n' << std::flush;
  }

 private:
  std::ostream& out_;
  std::mutex mutex_;
};

class SocketPeer : public Peer {
 public:
  explicit SocketPeer(int fd) : fd_(fd) {}
  void send(const nlohmann::json& frame) override {
    std::string bytes = frame.dump() + "\n";
    std::lock_guard lock(mutex_);
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return;  // the reader side notices the closed socket
      done += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_;
  std::mutex mutex_;
};

}  // namespace

void Server::serve_stream(std::istream& in, std::ostream& out) {
  StreamPeer peer(out);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    handle_frame(peer, line);
  }
  disconnect(peer);
}

std::uint16_t Server::listen(const std::string& host, std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::BindFailed, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(ErrorCode::BindFailed, "not an IPv4 address: " + host);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd, 16) < 0) {
    std::string why = std::strerror(errno);
    ::close(fd);
    throw Error(ErrorCode::BindFailed, host + ":" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  listen_fd_ = fd;
  return ntohs(addr.sin_port);
}

void Server::run() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int ready = ::poll(&p, 1, 100);
    if (ready <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard lock(conn_mutex_);
    conn_fds_.insert(fd);
    threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
  {
    std::lock_guard lock(conn_mutex_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  threads_.clear();
  ::close(listen_fd_);
  listen_fd_ = -1;
}

void Server::serve_connection(int fd) {
  SocketPeer peer(fd);
  std::string buffer;
  char chunk[4096];
  for (;;) {
    ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      handle_frame(peer, line);
    }
  }
  disconnect(peer);
  std::lock_guard lock(conn_mutex_);
  conn_fds_.erase(fd);
  ::close(fd);
}

}  // namespace cellsync
