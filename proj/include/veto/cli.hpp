#pragma once

namespace veto {

// Entry point behind the `veto` binary. Subcommands: synth, train, eval,
// params, gradcheck. Returns 0 on success, 1 on validation errors, 2 on
// numeric failures.
int cli_main(int argc, char** argv);

}  // namespace veto
