#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edgeprobe/rng.hpp"

namespace edgeprobe {

inline constexpr int kMinResolution = 8;
inline constexpr int kMaxResolution = 20;

/// Electrical description of the converter under test.
struct DeviceSpec {
    int resolution = 12;
    double v_ref_neg = 0.0;
    double v_ref_pos = 1.0;
    double noise_rms = 0.0; ///< input-referred Gaussian noise, LSB
    std::uint64_t seed = 0;

    [[nodiscard]] double fsr() const { return v_ref_pos - v_ref_neg; }
    [[nodiscard]] double lsb() const;
    [[nodiscard]] std::size_t code_count() const { return std::size_t{1} << resolution; }
    [[nodiscard]] std::size_t edge_count() const { return code_count() - 1; }

    /// Volts for a position expressed in LSB from v_ref_neg.
    [[nodiscard]] double to_volts(double x_lsb) const { return v_ref_neg + x_lsb * lsb(); }
    [[nodiscard]] double to_lsb(double volts) const { return (volts - v_ref_neg) / lsb(); }

    /// Throws std::invalid_argument when any field is out of its domain.
    void validate() const;
};

/// Relative deviation of each lumped CDAC capacitor, index 0 = LSB cap.
class MismatchVector {
public:
    MismatchVector() = default;
    explicit MismatchVector(std::vector<double> theta);

    static MismatchVector zeros(int bits) { return MismatchVector(std::vector<double>(bits, 0.0)); }

    [[nodiscard]] int size() const { return static_cast<int>(theta_.size()); }
    [[nodiscard]] double operator[](int i) const { return theta_[static_cast<std::size_t>(i)]; }
    [[nodiscard]] std::span<const double> values() const { return theta_; }

    friend bool operator==(const MismatchVector&, const MismatchVector&) = default;

private:
    std::vector<double> theta_;
};

/// Binary-weighted CDAC: w[i] = 2^i (1 + theta[i]), plus one dummy unit cap.
class CdacWeights {
public:
    explicit CdacWeights(const MismatchVector& theta);

    [[nodiscard]] int bits() const { return static_cast<int>(weights_.size()); }
    [[nodiscard]] std::span<const double> weights() const { return weights_; }
    [[nodiscard]] double total() const { return total_; }

    /// Switched capacitance for DAC input d (sum of weights of its set bits).
    [[nodiscard]] double switched(std::uint64_t d) const;

    /// Comparator threshold for DAC input d, on the normalized input scale
    /// u = x + 0.5 where x is the input in LSB above v_ref_neg.
    [[nodiscard]] double threshold(std::uint64_t d) const;

private:
    std::vector<double> weights_;
    double total_ = 0.0;
    double scale_ = 0.0; // 2^N / total
};

/// Code edge CE[c] in LSB predicted by the mismatch model for DAC weights
/// derived from `theta`. Valid codes are 0 .. 2^N - 2; throws std::out_of_range
/// otherwise. Exactly c + 0.5 when theta is zero.
double model_edge(const MismatchVector& theta, std::uint64_t code);
double model_edge(const CdacWeights& weights, std::uint64_t code);

/// Ground-truth converter. Physical parameters are fixed at construction; the
/// only mutable member is an instrumentation counter of noisy conversions.
/// Bit trials MSB first at normalized input u: bit i stays set iff
/// u >= 2^N D(trial) / T. Works for any width, including toy converters.
std::uint64_t sar_search(const CdacWeights& weights, double u);

class SarDevice {
public:
    SarDevice(DeviceSpec spec, MismatchVector theta_true);
    SarDevice(const SarDevice& other);
    SarDevice& operator=(const SarDevice&) = delete;

    [[nodiscard]] const DeviceSpec& spec() const { return spec_; }
    [[nodiscard]] const MismatchVector& theta() const { return theta_; }
    [[nodiscard]] const CdacWeights& cdac() const { return cdac_; }
    [[nodiscard]] int resolution() const { return spec_.resolution; }

    /// Noiseless bit-trial conversion of a normalized input u = x + 0.5.
    [[nodiscard]] std::uint64_t decide(double u) const;

    [[nodiscard]] std::uint64_t conversions() const { return conversions_.load(std::memory_order_relaxed); }
    void count_conversion() const { conversions_.fetch_add(1, std::memory_order_relaxed); }

private:
    DeviceSpec spec_;
    MismatchVector theta_;
    CdacWeights cdac_;
    mutable std::atomic<std::uint64_t> conversions_{0};
};

/// One conversion: a single input-referred Gaussian draw is added to v_in,
/// then N bit trials run MSB to LSB. Inputs outside the reference range clip
/// naturally to 0 or 2^N - 1.
std::uint64_t convert(const SarDevice& device, double v_in, Rng& rng);

struct EdgeScan {
    std::vector<double> edges;                 ///< 2^N - 1 positions, LSB
    std::vector<std::uint64_t> non_monotone;   ///< codes where the probe grid decreased
    [[nodiscard]] bool monotone() const { return non_monotone.empty(); }
};

/// Bisection on the noiseless conversion oracle: for each code c the smallest
/// input (LSB) producing an output above c, resolved to adjacent doubles.
EdgeScan true_edges(const SarDevice& device);

struct MismatchDraw {
    MismatchVector theta;
    int redraws = 0;
};

/// theta[i] ~ N(0, sigma_unit^2 / 2^i): a 2^i-unit capacitor averages 2^i
/// independent unit mismatches. Components with |theta| >= 1 are redrawn.
MismatchDraw sample_mismatch(int bits, double sigma_unit, Rng& rng);

} // namespace edgeprobe
