#pragma once
#include <cstdint>
#include <random>
#include <vector>

namespace digeo {

/// Deterministic generator with portable distributions.
///
/// std::normal_distribution and friends are implementation-defined, so
/// uniform and Gaussian draws are derived here directly from the
/// (fully specified) mt19937_64 bit stream. Child streams are derived
/// with splitmix64 so that every component of a run owns an independent
/// sequence keyed off one root seed.
class Rng
{
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    /// Independent child stream; `stream` identifies the consumer.
    Rng split(std::uint64_t stream) const;

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    /// Standard normal via Box-Muller.
    double normal();

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    template <class T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace digeo
