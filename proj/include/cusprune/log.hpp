#pragma once

#include <memory>

namespace spdlog {
class logger;
}

namespace cusprune {

// stderr logger; level from CUSPRUNE_LOG (error | info | debug), default info.
spdlog::logger& log();

}  // namespace cusprune
