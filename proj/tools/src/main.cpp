// ticket-forge: find, evaluate and compare sparse subnetworks of toy
// vision-language transformers.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "ticketforge/config.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/experiment.hpp"

namespace tf = ticketforge;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kState = 4, kIo = 5, kRuntime = 6 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ticket-forge: lottery tickets in toy vision-language transformers"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool resume = false;
  bool quiet = false;

  for (const char* name : {"find", "eval", "transfer", "sweep", "overlap", "adv-find", "adv-eval"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "run a single seed instead of the configured list");
    sub->add_option("--out", out, "output root (default: $TICKET_FORGE_OUT or ./ticket-forge-out)");
    sub->add_flag("--resume", resume, "reuse finished work in an existing output directory");
    sub->add_flag("-q,--quiet", quiet, "no progress log");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    const tf::Command command = tf::command_from_string(app.get_subcommands().front()->get_name());
    tf::RunConfig cfg = tf::load_config(config_path);
    if (seed) cfg.seeds = {*seed};
    tf::RunOptions options;
    options.out_root = tf::resolve_output_root(out ? std::optional<std::filesystem::path>(*out) : std::nullopt, cfg);
    options.resume = resume;
    options.log = quiet ? nullptr : &std::cerr;
    const auto dir = tf::run(command, cfg, options);
    std::cout << dir.string() << "\n";
    return kOk;
  } catch (const tf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const tf::StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return kState;
  } catch (const tf::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
