#include "edgeprobe/stimulus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace edgeprobe {
namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// P(x + noise >= edge); a hard step when there is no noise.
double crossing_probability(double x, double edge, double sigma) {
    if (sigma <= 0.0) {
        return x >= edge ? 1.0 : 0.0;
    }
    return normal_cdf((x - edge) / sigma);
}

} // namespace

HiResDac::HiResDac(int adc_bits, int extra_bits)
    : extra_bits_(extra_bits), step_(std::ldexp(1.0, -extra_bits)) {
    if (extra_bits < 1 || adc_bits + extra_bits > 62) {
        throw std::invalid_argument("stimulus DAC needs 1 <= extra_bits and fewer than 63 total bits");
    }
    max_code_ = (std::uint64_t{1} << (adc_bits + extra_bits)) - 1;
}

SweepPlan plan_sweep(std::uint64_t target_code, double center, double half_span, int samples,
                     const HiResDac& dac) {
    if (samples < 1) {
        throw std::invalid_argument("sweep needs at least one sample");
    }
    if (!(half_span > 0.0) || !std::isfinite(center)) {
        throw std::invalid_argument("sweep needs a finite center and positive half span");
    }

    SweepPlan plan;
    plan.target_code = target_code;
    plan.center = center;
    plan.half_span = half_span;
    plan.samples = samples;

    const double step = dac.step();
    const double top = static_cast<double>(dac.max_code());
    auto clamp_code = [&](double j) { return static_cast<std::uint64_t>(std::clamp(j, 0.0, top)); };

    // Codes j with (j + 0.5) * step inside [center - h, center + h].
    const double j_lo = std::ceil((center - half_span) / step - 0.5);
    const double j_hi = std::floor((center + half_span) / step - 0.5);
    const double nearest = std::round(center / step - 0.5);

    std::uint64_t first = 0;
    std::uint64_t count = 0;
    if (samples == 1) {
        first = clamp_code(nearest);
        count = 1;
    } else if (j_hi < j_lo) {
        plan.widened = true;
        first = clamp_code(std::floor(center / step - 0.5));
        count = first < dac.max_code() ? 2 : 1;
        spdlog::warn("sweep span +/-{} LSB holds no stimulus code; widened to the nearest codes", half_span);
    } else {
        first = clamp_code(j_lo);
        count = clamp_code(j_hi) - first + 1;
    }

    const auto m = static_cast<std::uint64_t>(samples);
    if (count >= m) {
        plan.levels.reserve(m);
        for (std::uint64_t k = 0; k < m; ++k) {
            // round(k * (count - 1) / (m - 1)) in integers; m == 1 picks the nearest code above
            const std::uint64_t idx = m == 1 ? 0 : (2 * k * (count - 1) + (m - 1)) / (2 * (m - 1));
            const std::uint64_t code = first + idx;
            plan.levels.push_back({code, 1, dac.level(code)});
        }
    } else {
        const std::uint64_t base = m / count;
        const std::uint64_t extra = m % count;
        plan.levels.reserve(count);
        for (std::uint64_t k = 0; k < count; ++k) {
            const std::uint64_t code = first + k;
            const auto repeats = static_cast<int>(base + (k < extra ? 1 : 0));
            plan.levels.push_back({code, repeats, dac.level(code)});
        }
    }

    if (plan.levels.size() >= 2) {
        plan.spacing = (plan.levels.back().x - plan.levels.front().x) / static_cast<double>(plan.levels.size() - 1);
    } else {
        plan.spacing = 2.0 * half_span;
    }
    return plan;
}

SweepResult execute_sweep(const SarDevice& device, const SweepPlan& plan, Rng& rng) {
    SweepResult result;
    result.codes.reserve(static_cast<std::size_t>(plan.samples));
    std::uint64_t sum = 0;
    for (const SweepLevel& level : plan.levels) {
        const double volts = device.spec().to_volts(level.x);
        for (int r = 0; r < level.repeats; ++r) {
            const std::uint64_t code = convert(device, volts, rng);
            result.codes.push_back(code);
            sum += code;
        }
    }
    const auto n = static_cast<double>(result.codes.size());
    result.mean_code = static_cast<double>(sum) / n;
    result.z = result.mean_code - (static_cast<double>(plan.target_code) + 0.5);
    return result;
}

SweepDefaults default_sweep_params(double noise_rms) {
    if (!(noise_rms >= 0.0)) {
        throw std::invalid_argument("noise_rms must be non-negative");
    }
    return {std::max(0.25, 0.25 * noise_rms), 4};
}

SweepResponse predict_sweep(const SweepPlan& plan, std::span<const double> local_edges,
                            std::uint64_t first_code, double noise_rms) {
    const double s = plan.spacing;
    double expected = 0.0;
    double slope = 0.0;
    for (const SweepLevel& level : plan.levels) {
        double crossed = static_cast<double>(first_code);
        double density = 0.0;
        for (double e : local_edges) {
            crossed += crossing_probability(level.x, e, noise_rms);
            // box of one level spacing around the level, smoothed by the noise
            density += crossing_probability(level.x + 0.5 * s, e, noise_rms) -
                       crossing_probability(level.x - 0.5 * s, e, noise_rms);
        }
        expected += level.repeats * crossed;
        slope += level.repeats * density / s;
    }
    const auto m = static_cast<double>(plan.samples);
    return {expected / m - (static_cast<double>(plan.target_code) + 0.5), slope / m};
}

} // namespace edgeprobe
