#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace srgi::log {

enum class Level { error = 0, info = 1, debug = 2 };

// Reads SRGI_LOG once; unknown or missing values mean `info`.
Level threshold();

template <class... Args>
void write(Level lvl, const Args&... args) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    std::ostringstream os;
    static constexpr const char* kTags[] = {"error", "info", "debug"};
    os << "[srgi " << kTags[static_cast<int>(lvl)] << "] ";
    (os << ... << args);
    os << '\n';
    std::cerr << os.str();
}

template <class... Args>
void error(const Args&... args) { write(Level::error, args...); }
template <class... Args>
void info(const Args&... args) { write(Level::info, args...); }
template <class... Args>
void debug(const Args&... args) { write(Level::debug, args...); }

}  // namespace srgi::log
