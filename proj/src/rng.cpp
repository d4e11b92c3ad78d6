#include "edgeprobe/rng.hpp"

namespace edgeprobe {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

Rng Rng::split(std::uint64_t stream_id) const {
    Rng child;
    child.key_ = mix64(key_ ^ mix64(stream_id + 0x632BE59BD9B4E019ULL));
    return child;
}

Rng::result_type Rng::operator()() {
    return mix64(key_ + (++counter_) * kGolden);
}

double Rng::uniform() {
    // 53 high bits -> [0, 1)
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double Rng::normal() { return normal_(*this); }

} // namespace edgeprobe
