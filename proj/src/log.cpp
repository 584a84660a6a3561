#include "srgi/log.hpp"

#include <cstdlib>

namespace srgi::log {

Level threshold() {
    static const Level lvl = [] {
        const char* env = std::getenv("SRGI_LOG");
        const std::string v = env ? env : "";
        if (v == "error") return Level::error;
        if (v == "debug") return Level::debug;
        return Level::info;
    }();
    return lvl;
}

}  // namespace srgi::log
