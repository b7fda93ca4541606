#include "cellsync/cli.hpp"

#include "cellsync/server.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace cellsync::cli {

namespace {

nlohmann::json error_payload(const Error& e) { return {{"error", error_to_json(e)}}; }

ServerConfig server_config(const EngineOptions& options, std::filesystem::path notebook, bool auto_invoke) {
  ServerConfig config;
  config.notebook = std::move(notebook);
  config.packs = load_packs(options.packs);
  // Start one backend now so a bad command is a configuration error.
  std::unique_ptr<ExecutorBackend> probe = make_backend(options.executor);
  config.session.dialect = options.dialect.value_or(probe->dialect());
  config.session.compact = options.compact;
  auto first = std::make_shared<std::unique_ptr<ExecutorBackend>>(std::move(probe));
  config.make_backend = [spec = options.executor, first]() {
    if (*first) return std::move(*first);
    return make_backend(spec);
  };
  config.auto_invoke = auto_invoke;
  return config;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidParams, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string wire_method(const std::string& m) {
  if (m == "edit") return "edit_cell";
  if (m == "transfer") return "transfer_selection";
  return m;
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

}  // namespace

std::unique_ptr<ExecutorBackend> make_backend(const std::string& spec) {
  if (spec == "builtin") return std::make_unique<BuiltinBackend>();
  if (spec.rfind("cmd:", 0) == 0 && spec.size() > 4) return std::make_unique<ExternalBackend>(spec.substr(4));
  throw Error(ErrorCode::InvalidParams, "executor must be 'builtin' or 'cmd:<command>', got '" + spec + "'");
}

PackFile load_packs(const std::optional<std::filesystem::path>& dir) {
  return dir ? load_pack_dir(*dir) : canonical_packs();
}

int cmd_replay(const ReplayOptions& options, std::ostream& out, std::ostream& log) {
  nlohmann::json trace;
  std::unique_ptr<NotebookHost> host;
  try {
    try {
      trace = nlohmann::json::parse(read_file(options.trace));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, options.trace.string() + ": " + e.what());
    }
    if (!trace.is_array()) throw Error(ErrorCode::InvalidParams, "a trace is a JSON list of records");
    host = std::make_unique<NotebookHost>(options.notebook, server_config(options, options.notebook, false));
  } catch (const Error& e) {
    log << "cellsync replay: " << e.what() << "\n";
    out << error_payload(e).dump() << "\n";
    return kConfigError;
  }

  for (std::size_t i = 0; i < trace.size(); ++i) {
    const nlohmann::json& record = trace[i];
    try {
      if (!record.is_object() || !record.contains("method") || !record["method"].is_string())
        throw Error(ErrorCode::InvalidParams, "record needs a method");
      host->call(wire_method(record["method"].get<std::string>()),
                 record.value("params", nlohmann::json::object()));
    } catch (const Error& e) {
      log << "cellsync replay: record " << i << ": " << e.what() << "\n";
      nlohmann::json payload = error_payload(e);
      payload["record"] = i;
      out << payload.dump() << "\n";
      return kFailed;
    }
  }

  Session& s = host->session();
  nlohmann::json instances = nlohmann::json::array();
  for (const auto* inst : s.instances())
    instances.push_back({{"instance_id", inst->instance_id}, {"variable", inst->displayed_var}, {"hash", inst->data.hash}});
  nlohmann::json result{{"records", trace.size()}, {"notebook", options.notebook.string()}, {"instances", instances}};
  try {
    nlohmann::json vars = nlohmann::json::object();
    for (const auto& [name, snap] : s.snapshot_all()) vars[name] = {{"type", snap.type}, {"hash", snap.hash}};
    result["variables"] = std::move(vars);
  } catch (const Error& e) {
    result["variables"] = nullptr;
    result["execution_error"] = error_to_json(e);
  }
  out << result.dump() << "\n";
  return kOk;
}

nlohmann::json recognize_notebook(const Notebook& nb, const PackFile& packs) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& cell : nb.cells) {
    nlohmann::json entry{{"cell_id", cell.id}, {"tool", nullptr}, {"instance_id", nullptr}};
    nlohmann::json actions = nlohmann::json::array(), unrecognized = nlohmann::json::array(),
                   frozen = nlohmann::json::array();
    std::optional<std::size_t> boundary;
    const ToolRegistration* tool = nullptr;
    std::optional<Invocation> inv;
    try {
      inv = cell.invocation();
    } catch (const Error&) {
    }
    if (inv)
      for (const auto& t : packs.tools)
        if (t.tool_name == inv->tool_name) tool = &t;
    if (tool) {
      entry["tool"] = tool->tool_name;
      entry["instance_id"] = tool->tool_name + "@" + cell.id;
      std::vector<Recognizer> recognizers = tool_recognizers(*tool);
      for (std::size_t i = 1; i < cell.lines.size(); ++i) {
        const LineRecord& line = cell.lines[i];
        if (line.prov.kind == Provenance::Kind::Frozen) frozen.push_back(i);
        auto rec = recognize_line(recognizers, line.text);
        if (!rec) {
          unrecognized.push_back(i);
          boundary = i;
          continue;
        }
        BindingSet data;
        for (const auto& set : tool->packs)
          for (const auto& v : set.variants)
            if (v.template_id == rec->template_id)
              for (const auto& [k, val] : rec->bindings)
                if (const BlankSpec* b = v.find_blank(k); b && b->source == BlankSource::ActionData) data[k] = val;
        nlohmann::json a{{"line", i}, {"template_id", rec->template_id}, {"action", rec->action_name},
                         {"bindings", data}, {"seq", nullptr}};
        if (line.prov.is_generated() && line.prov.template_id == rec->template_id) a["seq"] = line.prov.action_seq;
        actions.push_back(std::move(a));
      }
    } else {
      for (std::size_t i = 0; i < cell.lines.size(); ++i) {
        unrecognized.push_back(i);
        boundary = i;
      }
    }
    entry["actions"] = std::move(actions);
    entry["unrecognized"] = std::move(unrecognized);
    entry["frozen"] = std::move(frozen);
    entry["freeze_boundary"] = boundary ? nlohmann::json(*boundary) : nlohmann::json(nullptr);
    cells.push_back(std::move(entry));
  }
  return {{"cells", std::move(cells)}};
}

int cmd_recognize(const std::filesystem::path& notebook, const std::optional<std::filesystem::path>& packs,
                  std::ostream& out, std::ostream& log) {
  PackFile loaded;
  try {
    loaded = load_packs(packs);
  } catch (const Error& e) {
    log << "cellsync recognize: " << e.what() << "\n";
    out << error_payload(e).dump() << "\n";
    return kConfigError;
  }
  try {
    Notebook nb = load_notebook(read_file(notebook));
    out << recognize_notebook(nb, loaded).dump() << "\n";
    return kOk;
  } catch (const Error& e) {
    log << "cellsync recognize: " << e.what() << "\n";
    out << error_payload(e).dump() << "\n";
    return kFailed;
  }
}

int cmd_serve(const ServeOptions& options, std::ostream& out, std::ostream& log) {
  std::unique_ptr<Server> server;
  std::uint16_t port = 0;
  try {
    server = std::make_unique<Server>(server_config(options, options.notebook, true));
    NotebookHost& host = server->open(options.notebook);
    for (const auto& [cell_id, e] : host.invoke_errors())
      log << "cellsync serve: cannot invoke " << cell_id << ": " << e.what() << "\n";
    if (!options.stdio) port = server->listen(options.host, options.port);
  } catch (const Error& e) {
    log << "cellsync serve: " << e.what() << "\n";
    out << error_payload(e).dump() << "\n" << std::flush;
    return kConfigError;
  }

  if (options.stdio) {
    server->serve_stream(std::cin, out);
    return kOk;
  }
  out << nlohmann::json{{"listening", {{"host", options.host}, {"port", port}}}}.dump() << "\n" << std::flush;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server->request_stop();
  });
  server->run();
  g_stop = 1;
  watcher.join();
  log << "cellsync serve: stopped\n";
  return kOk;
}

int cmd_executor(std::istream& in, std::ostream& out) {
  BuiltinBackend backend;
  serve_executor(backend, in, out);
  return kOk;
}

}  // namespace cellsync::cli
