// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace temf {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Entry point of the `temf` tool. Subcommands: gen-corpus, train, eval,
/// gradcheck, kappa. Every option may also come from a TOML file given with
/// --config; flags override the file and unknown keys are rejected.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace temf
