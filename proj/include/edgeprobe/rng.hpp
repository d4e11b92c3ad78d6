#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace edgeprobe {

/// Counter-based random stream. Output k of a stream is a pure function of
/// (key, k), so a stream can be split into independent children without
/// consuming draws from the parent.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0);

    /// Child stream identified by `stream_id`. Depends only on this stream's
    /// key, never on how many values have been drawn.
    [[nodiscard]] Rng split(std::uint64_t stream_id) const;

    result_type operator()();

    /// Uniform in [0, 1).
    double uniform();
    double normal();

    [[nodiscard]] std::uint64_t key() const { return key_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Stream ids used when deriving children from an experiment seed.
namespace stream {
inline constexpr std::uint64_t mismatch = 1;
inline constexpr std::uint64_t noise = 2;
inline constexpr std::uint64_t histogram = 3;
inline constexpr std::uint64_t device_base = 0x1000;
} // namespace stream

} // namespace edgeprobe
