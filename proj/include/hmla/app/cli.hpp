#pragma once

#include <ostream>

namespace hmla::app {

// Entry point of the `hmla` tool. `envp` supplies HMLA_* overrides and may be null.
int run_cli(int argc, const char* const* argv, char** envp, std::ostream& out, std::ostream& err);

}  // namespace hmla::app
