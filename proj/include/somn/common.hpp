#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace somn {

// Error taxonomy; the CLI maps these onto exit codes (usage=1, data=2,
// internal=3).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad flags, bad config keys, misuse of an API contract by the caller.
struct UsageError : Error {
    using Error::Error;
};

// Malformed or missing external inputs (files, streams).
struct DataError : Error {
    using Error::Error;
};

// A violated internal invariant; always a bug.
struct InternalError : Error {
    using Error::Error;
};

// Parse failure in a byte/text stream; carries the offending offset.
struct ParseError : DataError {
    ParseError(const std::string& msg, std::size_t offset)
        : DataError(msg + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

// Tensor/layer dimension mismatch.
struct ShapeError : InternalError {
    using InternalError::InternalError;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic seeded generator. Distributions are implemented by hand so
// results do not depend on the standard library vendor; identical (seed,
// call sequence) gives identical draws everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw UsageError("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full range
        // Rejection sampling keeps the draw exactly uniform.
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }

    // Standard normal via Box-Muller; caches the second value.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class RandomIt>
    void shuffle(RandomIt first, RandomIt last) {
        auto n = last - first;
        for (decltype(n) i = n - 1; i > 0; --i) {
            auto j = uniform_int(0, i);
            std::swap(first[i], first[j]);
        }
    }

    // Child stream derived from the *original* seed plus tags, independent of
    // how many values were drawn from this stream.
    Rng fork(std::initializer_list<uint64_t> tags) const {
        uint64_t s = splitmix64(seed_ ^ 0xa02bdbf7bb3c0a71ULL);
        for (uint64_t t : tags) s = splitmix64(s ^ t);
        return Rng(s);
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace somn
