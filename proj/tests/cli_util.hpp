#pragma once

#include <cstdlib>
#include <string>

#include "test_util.hpp"

namespace affect::testing {

struct CliResult {
  int exit_code = -1;
  std::string out, err;
};

/// Runs the command-line tool in `cwd` and captures both streams.
inline CliResult run_cli(const std::string& args, const std::string& cwd) {
  const std::string out = cwd + "/.cli_stdout", err = cwd + "/.cli_stderr";
  const std::string cmd = "cd '" + cwd + "' && '" AFFECT_CLI_PATH "' " + args + " >'" + out +
                          "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

/// Model flags matching small_config(blocks).
inline std::string small_model_flags(std::size_t blocks = 2) {
  const auto c = small_config(blocks);
  return " --n-patches " + std::to_string(c.n_patches) + " --in-channels " +
         std::to_string(c.in_channels) + " --hidden-channels " + std::to_string(c.hidden_channels) +
         " --d-model " + std::to_string(c.d_model) + " --heads " + std::to_string(c.heads) +
         " --ffn-hidden " + std::to_string(c.ffn_hidden) + " --blocks " + std::to_string(blocks);
}

inline std::string small_synthetic_flags() {
  const auto c = small_config();
  return " --n-patches " + std::to_string(c.n_patches) + " --n-channels " +
         std::to_string(c.in_channels);
}

}  // namespace affect::testing
