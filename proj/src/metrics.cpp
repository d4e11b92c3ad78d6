#include "edgeprobe/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace edgeprobe {

std::vector<double> model_edges(const MismatchVector& theta) {
    const CdacWeights cdac(theta);
    const auto w = cdac.weights();
    const std::uint64_t codes = std::uint64_t{1} << cdac.bits();
    const double scale = std::ldexp(1.0, cdac.bits()) / cdac.total();

    // switched[d] = switched[d without its lowest bit] + w[lowest bit]; this is
    // the same MSB-first accumulation CdacWeights::switched performs.
    std::vector<double> switched(codes, 0.0);
    std::vector<double> edges(codes - 1);
    for (std::uint64_t d = 1; d < codes; ++d) {
        switched[d] = switched[d & (d - 1)] + w[static_cast<std::size_t>(std::countr_zero(d))];
        edges[d - 1] = scale * switched[d] - 0.5;
    }
    return edges;
}

void resolve_sar_edges(std::span<double> edges) {
    for (std::size_t c = edges.size(); c-- > 1;) {
        edges[c - 1] = std::min(edges[c - 1], edges[c]);
    }
}

std::vector<double> edges_from_theta(const MismatchVector& theta) {
    std::vector<double> edges = model_edges(theta);
    resolve_sar_edges(edges);
    return edges;
}

LinearityReport linearity(std::span<const double> edges) {
    if (edges.size() < 2) {
        throw std::invalid_argument("linearity needs at least two edges");
    }
    LinearityReport r;
    r.edges.assign(edges.begin(), edges.end());
    const std::size_t n = edges.size();

    r.dnl.resize(n - 1);
    for (std::size_t c = 0; c + 1 < n; ++c) {
        r.dnl[c] = edges[c + 1] - edges[c] - 1.0;
        r.max_abs_dnl = std::max(r.max_abs_dnl, std::abs(r.dnl[c]));
        if (r.dnl[c] <= -1.0 + 1e-9) {
            r.missing_codes.push_back(c);
        }
    }

    // Deviation from c + 0.5 minus the line through the two end deviations.
    const double first = edges.front() - 0.5;
    const double last = edges.back() - (static_cast<double>(n - 1) + 0.5);
    const double slope = (last - first) / static_cast<double>(n - 1);
    r.inl.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        const double dev = edges[c] - (static_cast<double>(c) + 0.5);
        r.inl[c] = dev - first - slope * static_cast<double>(c);
    }
    r.inl.front() = 0.0;
    r.inl.back() = 0.0;
    for (double v : r.inl) {
        if (std::abs(v) > r.max_abs_inl) {
            r.max_abs_inl = std::abs(v);
            r.signed_max_inl = v;
        }
    }
    return r;
}

namespace {

void check_lengths(const LinearityReport& a, const LinearityReport& b) {
    if (a.inl.size() != b.inl.size() || a.dnl.size() != b.dnl.size()) {
        throw std::invalid_argument("linearity reports cover different resolutions");
    }
}

} // namespace

LinearityDelta compare(const LinearityReport& estimate, const LinearityReport& truth) {
    check_lengths(estimate, truth);
    LinearityDelta d;
    d.delta_inl.resize(truth.inl.size());
    d.delta_dnl.resize(truth.dnl.size());
    for (std::size_t c = 0; c < truth.inl.size(); ++c) {
        d.delta_inl[c] = estimate.inl[c] - truth.inl[c];
        d.delta_inl_max = std::max(d.delta_inl_max, std::abs(d.delta_inl[c]));
    }
    for (std::size_t c = 0; c < truth.dnl.size(); ++c) {
        d.delta_dnl[c] = estimate.dnl[c] - truth.dnl[c];
        d.delta_dnl_max = std::max(d.delta_dnl_max, std::abs(d.delta_dnl[c]));
    }
    return d;
}

LinearityDelta compare_max(const LinearityReport& estimate, const LinearityReport& truth) {
    check_lengths(estimate, truth);
    LinearityDelta d;
    for (std::size_t c = 0; c < truth.inl.size(); ++c) {
        d.delta_inl_max = std::max(d.delta_inl_max, std::abs(estimate.inl[c] - truth.inl[c]));
    }
    for (std::size_t c = 0; c < truth.dnl.size(); ++c) {
        d.delta_dnl_max = std::max(d.delta_dnl_max, std::abs(estimate.dnl[c] - truth.dnl[c]));
    }
    return d;
}

HistogramResult ramp_histogram_test(const SarDevice& device, int hits_per_code, Rng& rng) {
    if (hits_per_code < 1) {
        throw std::invalid_argument("hits_per_code must be at least 1");
    }
    const DeviceSpec& spec = device.spec();
    const std::uint64_t codes = spec.code_count();
    const auto hpc = static_cast<std::uint64_t>(hits_per_code);
    const std::uint64_t points = codes * hpc;
    const double spacing = 1.0 / static_cast<double>(hpc);

    HistogramResult result;
    result.counts.assign(codes, 0);
    for (std::uint64_t j = 0; j < points; ++j) {
        const double x = -0.5 + (static_cast<double>(j) + 0.5) * spacing;
        ++result.counts[convert(device, spec.to_volts(x), rng)];
    }
    result.conversions = points;

    // Code c occupies [edge[c-1], edge[c]); cumulative hits locate the edges.
    std::vector<double> edges(codes - 1);
    std::uint64_t cumulative = 0;
    for (std::uint64_t c = 0; c + 1 < codes; ++c) {
        cumulative += result.counts[c];
        edges[c] = -0.5 + static_cast<double>(cumulative) * spacing;
    }
    result.report = linearity(edges);
    return result;
}

} // namespace edgeprobe
