// grod: command-line front end.
//
//   grod <gen-data|train|eval|sweep-capacity|ingest> --config <path> [--seed <u64>] [--out <dir>]
//
// Reports go to <out>/ and are echoed on stdout. Any failure prints one JSON
// line {"error": <kind>, "message": <text>} on stderr and exits nonzero.

#include <CLI11.hpp>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "grod/harness/commands.hpp"

namespace {

using grod::ErrorKind;
using grod::harness::Json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError: return 2;
    case ErrorKind::IoError: return 3;
    case ErrorKind::FormatError: return 4;
    default: return 5;
  }
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GROD outlier synthesis and OOD evaluation"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  using Command = std::function<Json(const grod::harness::ExperimentConfig&, std::uint64_t, const std::string&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands{
      {"gen-data", {"Generate train/test/OOD feature files", grod::harness::cmd_gen_data}},
      {"train", {"Train a model with GROD and save a checkpoint", grod::harness::cmd_train}},
      {"eval", {"Score a checkpoint on the test and OOD files", grod::harness::cmd_eval}},
      {"sweep-capacity", {"Cross-entropy capacity sweep over model depths", grod::harness::cmd_sweep_capacity}},
      {"ingest", {"Head-only GROD on fixed features vs an MSP baseline", grod::harness::cmd_ingest}},
  };
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "flat key = value config file")->required();
    sub->add_option("--seed", seed, "run seed; replaces the config's seed list");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    return fail("UsageError", msg, 64);
  }

  try {
    auto cfg = grod::harness::load_config(config_path);
    if (seed) cfg.seeds = {*seed};
    const std::string name = app.get_subcommands().front()->get_name();
    const Json rep = commands.at(name).second(cfg, cfg.seed(), out_dir);
    std::cout << rep.dump() << std::endl;
    return 0;
  } catch (const grod::Error& e) {
    const std::string prefix = std::string(grod::to_string(e.kind())) + ": ";
    std::string msg = e.what();
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    return fail(std::string(grod::to_string(e.kind())), msg, exit_code(e.kind()));
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), 70);
  }
}
