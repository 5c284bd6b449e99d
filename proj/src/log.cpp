#include "cusprune/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace cusprune {

spdlog::logger& log() {
    static std::shared_ptr<spdlog::logger> logger = [] {
        auto l = spdlog::stderr_color_mt("cusprune");
        l->set_pattern("[%l] %v");
        const char* env = std::getenv("CUSPRUNE_LOG");
        // from_str maps unknown names to "off", so fall back to info for those.
        const std::string name = env ? env : "info";
        const auto level = spdlog::level::from_str(name);
        l->set_level(level == spdlog::level::off && name != "off" ? spdlog::level::info : level);
        return l;
    }();
    return *logger;
}

}  // namespace cusprune
