#include "kkl/common.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <thread>

namespace kkl {

namespace {

uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t mix2(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    // one scramble round so fork(0) differs from the parent stream
    return splitmix64(s);
}

}  // namespace

Rng Rng::fork(uint64_t stream) const { return Rng(mix2(seed_, stream)); }

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

uint64_t Rng::uniform_int(uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling to kill modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

void parallel_for(long n, int threads, const std::function<void(long)>& body) {
    if (n <= 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    long workers = threads > 0 ? threads : (hw > 0 ? static_cast<long>(hw) : 1);
    workers = std::min<long>(workers, n);
    if (workers <= 1) {
        for (long i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (long w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                long i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("KKL_TUNE_LOG");
        if (!env) return LogLevel::Warn;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        if (std::strcmp(env, "warn") == 0) return LogLevel::Warn;
        if (std::strcmp(env, "info") == 0) return LogLevel::Info;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

void log_message(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    static std::mutex io_mutex;
    std::lock_guard<std::mutex> lock(io_mutex);
    std::fprintf(stderr, "[kkl-tune %s] %s\n", names[static_cast<int>(level)],
                 msg.c_str());
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v,
                             std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string fnv1a_hex(const std::string& bytes) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::vector<double> log_spaced(double lo, double hi, int count) {
    if (count < 1 || lo <= 0 || hi <= 0 || lo > hi)
        throw InputError("log_spaced: need 0 < lo <= hi and count >= 1");
    std::vector<double> out(static_cast<size_t>(count));
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < count; ++i)
        out[static_cast<size_t>(i)] =
            std::exp(llo + (lhi - llo) * static_cast<double>(i) / (count - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

std::vector<double> lin_spaced(double lo, double hi, int count) {
    if (count < 1 || lo > hi)
        throw InputError("lin_spaced: need lo <= hi and count >= 1");
    std::vector<double> out(static_cast<size_t>(count));
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    for (int i = 0; i < count; ++i)
        out[static_cast<size_t>(i)] =
            lo + (hi - lo) * static_cast<double>(i) / (count - 1);
    return out;
}

}  // namespace kkl
