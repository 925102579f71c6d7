#pragma once

#include <cstdint>
#include <vector>

namespace etma {

/// splitmix64: a counter-based 64-bit generator (Steele, Lea, Flood 2014).
/// The state advances by a fixed odd increment and each output is a finalizer
/// of the counter, so streams can be split by index without advancing the
/// parent. The raw u64/uniform stream is platform-independent; normal samples
/// go through libm's log and inherit its rounding.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 random mantissa bits.
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    /// Unbiased integer in [0,n) by rejection.
    std::uint64_t next_below(std::uint64_t n);

    /// Standard normal via the Marsaglia polar method (caches the spare).
    double next_normal();

    /// Independent child stream keyed by `index`; does not advance this
    /// generator, so serial and per-index parallel use produce the same
    /// streams.
    Rng split(std::uint64_t index) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace etma
