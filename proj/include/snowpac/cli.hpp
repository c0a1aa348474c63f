#pragma once

#include <string>
#include <vector>

#include "snowpac/engine.hpp"

namespace snowpac::cli {

// Flat `key = value` serialization of an optimizer configuration, one field
// per line with '#' comments.  Numbers carry 17 significant digits, so a
// dumped file re-parses to an identical configuration.
std::string dump_config(const engine::OptimizerConfig& config);

// Applies configuration lines on top of `base`.  Unknown keys, malformed
// lines, and unparsable values are rejected with std::invalid_argument.
engine::OptimizerConfig apply_config_text(engine::OptimizerConfig base,
                                          const std::string& text);
engine::OptimizerConfig apply_config_file(engine::OptimizerConfig base,
                                          const std::string& path);

// Entry point of the `snowpac` binary with subcommands run, campaign,
// profile, and list-problems.  Precedence for every optimizer setting is
// flags over config file over the SNOWPAC_SEED environment fallback (seed
// only) over built-in defaults.  Returns 0 on success, 1 on validation
// errors, and 2 on runtime failures (including campaigns with failed runs).
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, const char* const* argv);

}  // namespace snowpac::cli
