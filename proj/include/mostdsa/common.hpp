#pragma once

#include <atomic>
#include <cstdint>
#include <cstddef>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mostdsa {

// ---------------------------------------------------------------------------
// Error types. Configuration errors are caller mistakes (bad shapes, bad
// hyperparameters); usage errors are misuse of an operation's contract.
// ---------------------------------------------------------------------------

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Allocation accounting. Every tensor buffer in the numeric core is counted
// here; peak() is the memory metric reported by the benchmark harness.
// ---------------------------------------------------------------------------

namespace mem {

inline std::atomic<std::size_t>& current_bytes() {
    static std::atomic<std::size_t> v{0};
    return v;
}

inline std::atomic<std::size_t>& peak_bytes() {
    static std::atomic<std::size_t> v{0};
    return v;
}

inline void on_alloc(std::size_t bytes) {
    std::size_t cur = current_bytes().fetch_add(bytes) + bytes;
    std::size_t prev = peak_bytes().load();
    while (cur > prev && !peak_bytes().compare_exchange_weak(prev, cur)) {
    }
}

inline void on_free(std::size_t bytes) {
    current_bytes().fetch_sub(bytes);
}

inline std::size_t current() { return current_bytes().load(); }
inline std::size_t peak() { return peak_bytes().load(); }

// Reset the high-water mark to the current live size.
inline void reset_peak() { peak_bytes().store(current_bytes().load()); }

}  // namespace mem

template <typename T>
struct CountingAllocator {
    using value_type = T;

    CountingAllocator() = default;
    template <typename U>
    CountingAllocator(const CountingAllocator<U>&) {}

    T* allocate(std::size_t n) {
        mem::on_alloc(n * sizeof(T));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) {
        mem::on_free(n * sizeof(T));
        ::operator delete(p);
    }

    template <typename U>
    bool operator==(const CountingAllocator<U>&) const { return true; }
    template <typename U>
    bool operator!=(const CountingAllocator<U>&) const { return false; }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with explicit float conversions so that
// streams are identical across standard libraries and compilers.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller on explicitly drawn uniforms.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Derive an independent sub-stream; used to keep module seeds decoupled.
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = next_u64();
        return Rng(s ^ (salt * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mostdsa
