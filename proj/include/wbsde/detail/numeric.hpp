#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <span>
#include <thread>
#include <vector>

namespace wbsde {

inline constexpr double kMinusInfinity = -std::numeric_limits<double>::infinity();

namespace detail {

inline bool is_minus_inf(double x) { return x == kMinusInfinity; }

// Pairwise summation; the reduction tree depends only on the length, so the
// result is reproducible for a fixed input order.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based stream: word `w` of path `path` under `seed`.
inline std::uint64_t counter_random(std::uint64_t seed, std::uint64_t path, std::uint64_t w) {
    return splitmix64(splitmix64(seed ^ splitmix64(path)) + w);
}

inline unsigned worker_count(std::size_t work_items, unsigned requested) {
    unsigned hw = requested != 0 ? requested : std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (work_items < 2048) return 1;
    return static_cast<unsigned>(std::min<std::size_t>(hw, work_items / 1024));
}

// Static-partition parallel loop over [0, n). Each index is processed by
// exactly one worker, so results written per index do not depend on the
// thread count. The first exception thrown by any worker is rethrown.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& body) {
    const unsigned workers = worker_count(n, threads);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                const std::size_t lo = n * w / workers;
                const std::size_t hi = n * (w + 1) / workers;
                try {
                    for (std::size_t i = lo; i < hi; ++i) body(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail
} // namespace wbsde
