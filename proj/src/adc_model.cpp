#include "edgeprobe/adc_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace edgeprobe {

double DeviceSpec::lsb() const { return std::ldexp(fsr(), -resolution); }

void DeviceSpec::validate() const {
    if (resolution < kMinResolution || resolution > kMaxResolution) {
        throw std::invalid_argument("resolution must lie in [8, 20], got " + std::to_string(resolution));
    }
    if (!(v_ref_pos > v_ref_neg)) {
        throw std::invalid_argument("v_ref_pos must exceed v_ref_neg");
    }
    if (!(noise_rms >= 0.0) || !std::isfinite(noise_rms)) {
        throw std::invalid_argument("noise_rms must be finite and non-negative");
    }
}

MismatchVector::MismatchVector(std::vector<double> theta) : theta_(std::move(theta)) {
    for (double t : theta_) {
        if (!std::isfinite(t) || std::abs(t) >= 1.0) {
            throw std::invalid_argument("mismatch components must satisfy |theta| < 1");
        }
    }
}

CdacWeights::CdacWeights(const MismatchVector& theta) {
    const int n = theta.size();
    weights_.resize(static_cast<std::size_t>(n));
    total_ = 1.0; // dummy unit capacitor
    for (int i = 0; i < n; ++i) {
        weights_[static_cast<std::size_t>(i)] = std::ldexp(1.0 + theta[i], i);
    }
    for (int i = n - 1; i >= 0; --i) {
        total_ += weights_[static_cast<std::size_t>(i)];
    }
    scale_ = std::ldexp(1.0, n) / total_;
}

double CdacWeights::switched(std::uint64_t d) const {
    double acc = 0.0;
    for (int i = bits() - 1; i >= 0; --i) {
        if ((d >> i) & 1U) {
            acc += weights_[static_cast<std::size_t>(i)];
        }
    }
    return acc;
}

double CdacWeights::threshold(std::uint64_t d) const { return scale_ * switched(d); }

double model_edge(const CdacWeights& weights, std::uint64_t code) {
    const std::uint64_t edges = (std::uint64_t{1} << weights.bits()) - 1;
    if (code >= edges) {
        throw std::out_of_range("code " + std::to_string(code) + " has no upper edge");
    }
    return weights.threshold(code + 1) - 0.5;
}

double model_edge(const MismatchVector& theta, std::uint64_t code) {
    return model_edge(CdacWeights(theta), code);
}

SarDevice::SarDevice(DeviceSpec spec, MismatchVector theta_true)
    : spec_(spec), theta_(std::move(theta_true)), cdac_(theta_) {
    spec_.validate();
    if (theta_.size() != spec_.resolution) {
        throw std::invalid_argument("mismatch vector length must equal the resolution");
    }
}

SarDevice::SarDevice(const SarDevice& other)
    : spec_(other.spec_), theta_(other.theta_), cdac_(other.cdac_), conversions_(other.conversions()) {}

std::uint64_t sar_search(const CdacWeights& weights, double u) {
    const auto w = weights.weights();
    const double scale = std::ldexp(1.0, weights.bits()) / weights.total();
    std::uint64_t d = 0;
    double acc = 0.0;
    for (int i = weights.bits() - 1; i >= 0; --i) {
        const double trial = acc + w[static_cast<std::size_t>(i)];
        if (u >= scale * trial) {
            acc = trial;
            d |= std::uint64_t{1} << i;
        }
    }
    return d;
}

std::uint64_t SarDevice::decide(double u) const { return sar_search(cdac_, u); }

std::uint64_t convert(const SarDevice& device, double v_in, Rng& rng) {
    const DeviceSpec& spec = device.spec();
    double v = v_in;
    if (spec.noise_rms > 0.0) {
        v += spec.noise_rms * spec.lsb() * rng.normal();
    }
    device.count_conversion();
    return device.decide(spec.to_lsb(v) + 0.5);
}

EdgeScan true_edges(const SarDevice& device) {
    const int n = device.resolution();
    const std::uint64_t edge_count = (std::uint64_t{1} << n) - 1;
    const double lo_bound = -1.0;
    const double hi_bound = std::ldexp(1.0, n) + 1.0;

    auto out = [&](double x) { return device.decide(x + 0.5); };
    auto out_u = [&](double u) { return device.decide(u); };

    EdgeScan scan;
    scan.edges.resize(edge_count);
    for (std::uint64_t c = 0; c < edge_count; ++c) {
        // Bisect in u = x + 0.5 down to adjacent doubles: the smallest
        // representable input that produces an output above c.
        double lo = lo_bound + 0.5;
        double hi = hi_bound + 0.5;
        for (;;) {
            const double mid = lo + 0.5 * (hi - lo);
            if (mid <= lo || mid >= hi) break;
            if (out_u(mid) > c) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        scan.edges[c] = hi - 0.5;
    }

    // 8x oversampled probe: the output must never step down.
    const auto probes = static_cast<std::uint64_t>((hi_bound - lo_bound) * 8.0);
    std::uint64_t prev = out(lo_bound);
    for (std::uint64_t k = 1; k <= probes; ++k) {
        const std::uint64_t code = out(lo_bound + static_cast<double>(k) / 8.0);
        if (code < prev) {
            scan.non_monotone.push_back(code);
        }
        prev = code;
    }
    if (!scan.monotone()) {
        spdlog::warn("transfer curve steps down at {} probe points; edges taken from upward scan",
                     scan.non_monotone.size());
    }
    return scan;
}

MismatchDraw sample_mismatch(int bits, double sigma_unit, Rng& rng) {
    if (!(sigma_unit >= 0.0) || !std::isfinite(sigma_unit)) {
        throw std::invalid_argument("sigma_unit must be finite and non-negative");
    }
    std::vector<double> theta(static_cast<std::size_t>(bits), 0.0);
    int redraws = 0;
    for (int i = 0; i < bits; ++i) {
        const double sigma = sigma_unit / std::sqrt(std::ldexp(1.0, i));
        if (sigma == 0.0) {
            continue;
        }
        double t = sigma * rng.normal();
        while (std::abs(t) >= 1.0) {
            ++redraws;
            t = sigma * rng.normal();
        }
        theta[static_cast<std::size_t>(i)] = t;
    }
    if (redraws > 0) {
        spdlog::info("sample_mismatch: redrew {} components with |theta| >= 1", redraws);
    }
    return {MismatchVector(std::move(theta)), redraws};
}

} // namespace edgeprobe
