#include "dyngraph/log.hpp"

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace dyngraph {

bool init_logging() {
  auto logger = spdlog::get("dyngraph");
  if (!logger) logger = spdlog::stderr_color_mt("dyngraph");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);

  const char* env = std::getenv("DYNGRAPH_LOG");
  const std::string_view level = env == nullptr ? "info" : env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    spdlog::warn("ignoring DYNGRAPH_LOG={} (expected error|info|debug)", level);
    return false;
  }
  return true;
}

}  // namespace dyngraph
