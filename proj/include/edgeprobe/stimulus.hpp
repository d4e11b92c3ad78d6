#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edgeprobe/adc_model.hpp"
#include "edgeprobe/rng.hpp"

namespace edgeprobe {

/// Stimulus DAC with `extra_bits` more resolution than the converter over the
/// same range. Code j drives the input to (j + 0.5) * step LSB, so its levels
/// sit between the ideal edges of a DAC that shares the converter's grid.
class HiResDac {
public:
    HiResDac(int adc_bits, int extra_bits);

    [[nodiscard]] int extra_bits() const { return extra_bits_; }
    [[nodiscard]] double step() const { return step_; } ///< LSB of the converter
    [[nodiscard]] std::uint64_t max_code() const { return max_code_; }
    [[nodiscard]] double level(std::uint64_t code) const { return (static_cast<double>(code) + 0.5) * step_; }

private:
    int extra_bits_;
    double step_;
    std::uint64_t max_code_;
};

struct SweepLevel {
    std::uint64_t dac_code = 0;
    int repeats = 0;
    double x = 0.0; ///< input level, LSB
};

struct SweepPlan {
    std::uint64_t target_code = 0; ///< probed edge lies between target_code and target_code + 1
    double center = 0.0;
    double half_span = 0.0;
    int samples = 0;
    double spacing = 0.0;          ///< distance between adjacent levels, LSB
    bool widened = false;          ///< no DAC code fell inside the span
    std::vector<SweepLevel> levels;
};

struct SweepResult {
    std::vector<std::uint64_t> codes;
    double mean_code = 0.0;
    /// mean_code - (target + 0.5). Negative when the true edge lies above the
    /// sweep center (more samples stay at the lower code).
    double z = 0.0;
};

struct SweepDefaults {
    double half_span = 0.25;
    int extra_bits = 4;
};

/// Localized sweep around `center`. When the span holds at least `samples`
/// DAC codes, `samples` codes are picked evenly by index; otherwise the
/// samples are spread over all codes, extras going to the lowest codes.
SweepPlan plan_sweep(std::uint64_t target_code, double center, double half_span, int samples,
                     const HiResDac& dac);

SweepResult execute_sweep(const SarDevice& device, const SweepPlan& plan, Rng& rng);

SweepDefaults default_sweep_params(double noise_rms);

/// Expected sweep statistic and its sensitivity, given the model's edges near
/// the target. `first_code` is the code of `local_edges[0]`; edges below the
/// window count as always crossed, edges above as never crossed.
struct SweepResponse {
    double expected_z = 0.0;
    /// -d E[z] / d(shift of all local edges), per LSB. Positive.
    double slope = 0.0;
};

SweepResponse predict_sweep(const SweepPlan& plan, std::span<const double> local_edges,
                            std::uint64_t first_code, double noise_rms);

} // namespace edgeprobe
