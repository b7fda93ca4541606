// Executor stdio server over the builtin backend, with fault injection for
// protocol tests.
#include "cellsync/executor.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <iostream>
#include <thread>

namespace {

class Dialected : public cellsync::BuiltinBackend {
 public:
  explicit Dialected(std::string dialect) : dialect_(std::move(dialect)) {}
  std::string dialect() const override { return dialect_; }

 private:
  std::string dialect_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fake executor"};
  std::string dialect = "minitable";
  int version = cellsync::ExternalBackend::kProtocolVersion;
  int die_after = -1;
  std::string hang_on;
  std::string garbage_on;
  app.add_option("--dialect", dialect);
  app.add_option("--version", version);
  app.add_option("--die-after", die_after, "exit without replying to the Nth request");
  app.add_option("--hang-on", hang_on, "never reply to this op");
  app.add_option("--garbage-on", garbage_on, "reply with invalid JSON to this op");
  CLI11_PARSE(app, argc, argv);

  Dialected backend(dialect);
  std::string line;
  for (int n = 1; std::getline(std::cin, line); ++n) {
    if (n == die_after) return 3;
    auto req = nlohmann::json::parse(line, nullptr, false);
    std::string op = req.is_object() ? req.value("op", "") : "";
    if (op == hang_on) std::this_thread::sleep_for(std::chrono::hours(1));
    if (op == garbage_on) {
      std::cout << "{not json\n" << std::flush;
      continue;
    }
    nlohmann::json reply = cellsync::handle_executor_request(backend, req);
    if (op == "hello") reply["version"] = version;
    std::cout << reply.dump() << '\n' << std::flush;
  }
  return 0;
}
