#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ebm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

inline void require_dim(Index got, Index want, std::string_view what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                             std::to_string(got));
    }
}

inline double sigmoid(double a) {
    if (a >= 0) {
        return 1.0 / (1.0 + std::exp(-a));
    }
    const double e = std::exp(a);
    return e / (1.0 + e);
}

inline Vec sigmoid(const Vec& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }

/// log(1 + e^a) without overflow.
inline double softplus(double a) {
    return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

// ---------------------------------------------------------------------------
// Seed streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Stable seed for the stream identified by (master, component, index).
/// Identical across platforms and independent of thread scheduling.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view component, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ fnv1a(component)) + index);
}

inline Rng make_rng(std::uint64_t master, std::string_view component, std::uint64_t index = 0) {
    return Rng(stream_seed(master, component, index));
}

inline Vec randn(Index n, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Vec v(n);
    for (Index i = 0; i < n; ++i) {
        v[i] = nd(rng);
    }
    return v;
}

inline Mat randn(Index rows, Index cols, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Mat m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            m(i, j) = nd(rng);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

inline std::atomic<unsigned>& thread_count_setting() {
    static std::atomic<unsigned> n{std::max(1u, std::thread::hardware_concurrency())};
    return n;
}

inline void set_thread_count(unsigned n) { thread_count_setting() = std::max(1u, n); }
inline unsigned thread_count() { return thread_count_setting(); }

/// Runs f(i) for i in [0, n). Work items must write only to their own slots;
/// results are therefore identical for any thread count.
template <class F>
void parallel_for(Index n, F&& f) {
    const unsigned workers = static_cast<unsigned>(std::min<Index>(thread_count(), n));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (Index i = next++; i < n; i = next++) {
                    f(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
                next = n;
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into [-pi, pi).
inline double wrap_pi(double a) {
    a = std::fmod(a + kPi, 2 * kPi);
    if (a < 0) {
        a += 2 * kPi;
    }
    return a - kPi;
}

}  // namespace ebm
