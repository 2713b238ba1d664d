#pragma once

// The five batch commands. Each reads a RunConfig, writes its artifacts under
// the configured directories and logs to `log`.

#include <exception>
#include <ostream>
#include <string_view>

#include "npss/run_config.hpp"

namespace npss {

void cmd_synth_data(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_generate(const RunConfig& config, std::ostream& log);
void cmd_bench(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);

/// 2 for configuration errors, 3 for everything else.
int exit_code_for(const std::exception& e);

/// Writes <out>/effective.cfg and runs the named command. Returns the exit
/// code; errors are reported on `err`.
int run_command(std::string_view name, const RunConfig& config, std::ostream& log, std::ostream& err);

/// Reference parameter total for the three full-size streams.
inline constexpr std::size_t kReferenceParamCount = 747000;

}  // namespace npss
