#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mvol {

class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    format_into(os, rest...);
}
} // namespace detail

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw error(os.str());
}

template <class... Args>
void require(bool cond, const Args&... args) {
    if (!cond) fail(args...);
}

/// Splits [0, n) into contiguous chunks and runs them on up to `max_threads`
/// std::threads. Chunk boundaries depend only on n and the thread count cap,
/// so per-chunk results can be combined in a fixed order for reproducibility.
inline void parallel_for_chunks(std::size_t n,
                                const std::function<void(std::size_t, std::size_t, int)>& body,
                                int max_threads = 0) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    std::size_t nthreads = (max_threads > 0) ? static_cast<std::size_t>(max_threads) : hw;
    if (nthreads > n) nthreads = n;
    if (nthreads <= 1) {
        body(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi, t] { body(lo, hi, static_cast<int>(t)); });
    }
    for (auto& th : pool) th.join();
}

/// FNV-1a over raw bytes; used for input manifests and determinism checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 14695981039346656037ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

inline std::uint64_t hash_doubles(const std::vector<double>& v, std::uint64_t seed = 14695981039346656037ull) {
    return v.empty() ? seed : fnv1a64(v.data(), v.size() * sizeof(double), seed);
}

} // namespace mvol
