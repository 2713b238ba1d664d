// npss: synth-data | train | generate | bench | eval

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "npss/commands.hpp"
#include "npss/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Neural parametric singing synthesizer"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", threads, "worker cap (0 = all cores)");
  app.add_option("--out", out, "output directory");
  app.add_option("--set", overrides, "override, key=value (repeatable)");

  const std::pair<const char*, const char*> commands[] = {
      {"synth-data", "write a synthetic corpus to <out>/corpus"},
      {"train", "train the harmonic, V/UV and aperiodic nets (resumable)"},
      {"generate", "synthesize features from generate.input"},
      {"bench", "time naive vs cached decoding and count parameters"},
      {"eval", "score trained models on the validation split"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  npss::RunConfig config;
  try {
    if (!config_path.empty()) config = npss::load_config(config_path);
    for (const auto& o : overrides) npss::apply_override(config, o);
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (out) config.out = *out;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return npss::exit_code_for(e);
  }
  return npss::run_command(app.get_subcommands().front()->get_name(), config, std::cout, std::cerr);
}
