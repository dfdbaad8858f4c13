#pragma once

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fmmrec {

// Error taxonomy; the CLI maps these onto process exit codes
// (config=1, data=2, missing artifacts=3, divergence=4).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct MissingArtifactError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

// SplitMix64 step; used to derive independent, reproducible seed streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

// Seed stream tags for the four seed families a run exposes.
enum SeedStream : std::uint64_t {
    kSeedSplit = 1,
    kSeedInit = 2,
    kSeedSampling = 3,
    kSeedAttacker = 4,
    kSeedDropout = 5,
    kSeedHoldout = 6,
    kSeedModalityBase = 100,  // +modality index
};

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

namespace detail {
inline LogLevel& log_level_ref() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("FMMREC_LOG");
        if (!e) return LogLevel::warn;
        std::string s(e);
        if (s == "error") return LogLevel::error;
        if (s == "warn") return LogLevel::warn;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return lvl;
}
}  // namespace detail

inline LogLevel log_level() { return detail::log_level_ref(); }
inline void set_log_level(LogLevel l) { detail::log_level_ref() = l; }

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <typename... Args>
void log_at(LogLevel lvl, Args&&... args) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << cat(std::forward<Args>(args)...)
              << "\n";
}

template <typename... Args>
void log_error(Args&&... args) {
    log_at(LogLevel::error, std::forward<Args>(args)...);
}
template <typename... Args>
void log_warn(Args&&... args) {
    log_at(LogLevel::warn, std::forward<Args>(args)...);
}
template <typename... Args>
void log_info(Args&&... args) {
    log_at(LogLevel::info, std::forward<Args>(args)...);
}
template <typename... Args>
void log_debug(Args&&... args) {
    log_at(LogLevel::debug, std::forward<Args>(args)...);
}

}  // namespace fmmrec
