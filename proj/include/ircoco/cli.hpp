#pragma once

// Placeholder during bring-up; the full CLI lands with the pipeline modules.
namespace ircoco {
inline int run_command(int, char**) { return 0; }
}  // namespace ircoco
