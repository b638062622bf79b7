#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kkl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Bad user-supplied value (shape mismatch, degenerate box, ...).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A simulated state escaped the norm bound (or went non-finite).
class BlowUpError : public std::runtime_error {
public:
    BlowUpError(const std::string& what, long step_index)
        : std::runtime_error(what), step(step_index) {}
    long step = -1;
};

/// An iterative numerical routine failed to converge.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double res = 0.0)
        : std::runtime_error(what), residual(res) {}
    double residual = 0.0;
};

/// Training loss went non-finite.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The online filter state went non-finite.
class FilterStateError : public std::runtime_error {
public:
    FilterStateError(const std::string& what, long step_index)
        : std::runtime_error(what), step(step_index) {}
    long step = -1;
};

/// Every entry of a sweep failed.
class SweepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// splitmix64 core. Streams fork from (seed, stream) so per-point parallel
// generation stays reproducible no matter the scheduling.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    /// Independent stream derived from the original seed; does not advance
    /// this generator.
    Rng fork(uint64_t stream) const;

    uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal (Box-Muller, cached spare).
    double gaussian();

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t seed_;
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Parallel helper
// ---------------------------------------------------------------------------

/// Runs body(i) for i in [0, n). threads == 0 picks hardware concurrency,
/// threads == 1 runs inline. Bodies must only write to index-owned slots.
void parallel_for(long n, int threads, const std::function<void(long)>& body);

// ---------------------------------------------------------------------------
// Logging (level from KKL_TUNE_LOG: error|warn|info|debug)
// ---------------------------------------------------------------------------

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

inline void log_error(const std::string& m) { log_message(LogLevel::Error, m); }
inline void log_warn(const std::string& m) { log_message(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::Info, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::Debug, m); }

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// Format a double with 17 significant digits (value-preserving).
std::string format_double(double v);

/// FNV-1a over a byte string, hex-encoded. Used for config digests.
std::string fnv1a_hex(const std::string& bytes);

std::vector<double> log_spaced(double lo, double hi, int count);
std::vector<double> lin_spaced(double lo, double hi, int count);

}  // namespace kkl
