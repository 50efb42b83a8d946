#ifndef DTP_RNG_HPP
#define DTP_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "dtp/error.hpp"

namespace dtp {

/// Deterministic random source. Wraps mt19937_64 but derives all
/// distributions itself, so streams are reproducible bit-for-bit across
/// standard library implementations. State round-trips through a string
/// for checkpointing.
class RandomSource {
  public:
    explicit RandomSource(std::uint64_t seed = 0) : engine_(seed) {}

    /// Raw 64-bit draw.
    std::uint64_t raw() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. No cached spare: two draws per call,
    /// which keeps the stream position a pure function of call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw DomainError("below(0) is undefined");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    /// Fisher-Yates shuffle.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derive an independent child stream (e.g. one per domain or camera).
    RandomSource fork(std::uint64_t salt) {
        RandomSource child(engine_() ^ (salt * 0x9e3779b97f4a7c15ULL));
        return child;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    static RandomSource deserialize(const std::string& s) {
        RandomSource r;
        std::istringstream is(s);
        is >> r.engine_;
        if (is.fail()) throw IoError("bad RNG state string");
        return r;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace dtp

#endif  // DTP_RNG_HPP
