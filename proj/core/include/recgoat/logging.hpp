#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace recgoat::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from the RECGOAT_LOG environment variable (error|warn|info|debug),
// default warn.
inline Level threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("RECGOAT_LOG");
        if (!env) return Level::Warn;
        if (std::strcmp(env, "error") == 0) return Level::Error;
        if (std::strcmp(env, "warn") == 0) return Level::Warn;
        if (std::strcmp(env, "info") == 0) return Level::Info;
        if (std::strcmp(env, "debug") == 0) return Level::Debug;
        return Level::Warn;
    }();
    return lvl;
}

inline void write(Level lvl, const std::string& msg) {
    if (lvl > threshold()) return;
    static const char* tags[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[recgoat:%s] %s\n", tags[static_cast<int>(lvl)], msg.c_str());
}

inline void error(const std::string& m) { write(Level::Error, m); }
inline void warn(const std::string& m) { write(Level::Warn, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void debug(const std::string& m) { write(Level::Debug, m); }

}  // namespace recgoat::log
