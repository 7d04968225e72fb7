#pragma once

#include <cstdint>
#include <cstdlib>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace ddpc {

/// Error category; doubles as the process exit code of the CLI.
enum class ErrorKind : int { usage = 1, data = 2, solver = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class SolverError : public Error {
public:
    explicit SolverError(const std::string& what) : Error(ErrorKind::solver, what) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Operating mode of the heat pump. Each mode owns its own data and predictor.
enum class Mode { heating, cooling };

inline constexpr std::string_view to_string(Mode m) { return m == Mode::heating ? "H" : "C"; }

inline Mode mode_from_string(std::string_view s)
{
    if (s == "H" || s == "heating") return Mode::heating;
    if (s == "C" || s == "cooling") return Mode::cooling;
    throw UsageError("unknown mode '" + std::string(s) + "'");
}

// Time grid shared by every layer.
inline constexpr int kStepsPerDay = 96;
inline constexpr double kStepHours = 0.25;
inline constexpr int kFineStepsPerStep = 225;
inline constexpr double kFineStepHours = 4.0 / 3600.0;

/// Library logger. Verbosity comes from the DDPC_LOG environment variable
/// (trace|debug|info|warn|error|off), default warn.
inline spdlog::logger& log()
{
    static const auto logger = [] {
        auto l = std::make_shared<spdlog::logger>("ddpc");
        l->sinks().push_back(std::make_shared<spdlog::sinks::stderr_sink_mt>());
        l->set_pattern("[%l] %v");
        const char* env = std::getenv("DDPC_LOG");
        l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
        return l;
    }();
    return *logger;
}

/// 64-bit FNV-1a, used for data fingerprints.
class Fnv1a {
public:
    void update(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    template <class T>
    void update_value(const T& v) { update(&v, sizeof(T)); }
    std::uint64_t digest() const { return h_; }
    std::string hex() const
    {
        static constexpr char digits[] = "0123456789abcdef";
        std::string s(16, '0');
        auto v = h_;
        for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        return s;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

} // namespace ddpc
