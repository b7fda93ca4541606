#include "cellsync/cli.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace cellsync;

namespace {

void engine_flags(CLI::App* cmd, cli::EngineOptions& o) {
  cmd->add_option("--packs", o.packs, "directory of .pack files (default: the built-in packs)");
  cmd->add_option("--executor", o.executor, "builtin or cmd:\"<command>\"");
  cmd->add_option("--dialect", o.dialect, "session dialect (default: the executor's)");
  cmd->add_flag("!--no-compact", o.compact, "always append generated lines");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cellsync: keeps notebook code and GUI tools in sync"};
  app.require_subcommand(1);

  cli::ServeOptions serve;
  CLI::App* serve_cmd = app.add_subcommand("serve", "serve a notebook to widget clients");
  serve_cmd->add_option("--notebook", serve.notebook, "notebook file")->required();
  serve_cmd->add_option("--port", serve.port, "TCP port (0 picks one)");
  serve_cmd->add_option("--host", serve.host, "IPv4 address to bind");
  serve_cmd->add_flag("--stdio", serve.stdio, "serve one client on stdin/stdout");
  engine_flags(serve_cmd, serve);

  cli::ReplayOptions replay;
  CLI::App* replay_cmd = app.add_subcommand("replay", "apply a trace of tool actions to a notebook");
  replay_cmd->add_option("--trace", replay.trace, "JSON list of records")->required();
  replay_cmd->add_option("--notebook", replay.notebook, "notebook file, rewritten in place")->required();
  engine_flags(replay_cmd, replay);

  std::filesystem::path recognize_nb;
  std::optional<std::filesystem::path> recognize_packs;
  CLI::App* recognize_cmd = app.add_subcommand("recognize", "print the tool actions a notebook's code encodes");
  recognize_cmd->add_option("--notebook", recognize_nb, "notebook file")->required();
  recognize_cmd->add_option("--packs", recognize_packs, "directory of .pack files");

  CLI::App* executor_cmd = app.add_subcommand("executor", "run the builtin executor over stdio");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kConfigError;
  }

  if (*serve_cmd) return cli::cmd_serve(serve, std::cout, std::cerr);
  if (*replay_cmd) return cli::cmd_replay(replay, std::cout, std::cerr);
  if (*recognize_cmd) return cli::cmd_recognize(recognize_nb, recognize_packs, std::cout, std::cerr);
  if (*executor_cmd) return cli::cmd_executor(std::cin, std::cout);
  return cli::kConfigError;
}
