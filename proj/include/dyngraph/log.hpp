#pragma once

#include <spdlog/spdlog.h>

namespace dyngraph {

/// Sets the global spdlog level from DYNGRAPH_LOG (error|info|debug; default info).
/// Returns false when the variable holds an unrecognised value.
bool init_logging();

}  // namespace dyngraph
