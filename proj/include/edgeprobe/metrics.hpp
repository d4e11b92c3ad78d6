#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edgeprobe/adc_model.hpp"
#include "edgeprobe/rng.hpp"

namespace edgeprobe {

/// Static linearity of one transfer curve, all values in LSB.
struct LinearityReport {
    std::vector<double> edges; ///< 2^N - 1 code edges
    std::vector<double> dnl;   ///< dnl[c] = edges[c+1] - edges[c] - 1
    std::vector<double> inl;   ///< endpoint corrected, zero at both ends
    double max_abs_dnl = 0.0;
    double max_abs_inl = 0.0;
    double signed_max_inl = 0.0; ///< INL value of largest magnitude, sign kept
    std::vector<std::uint64_t> missing_codes; ///< c with dnl[c] <= -1 + 1e-9
};

/// Raw model edges f_c(theta) for every code, evaluated incrementally. Each
/// value is bit-identical to model_edge(theta, c).
std::vector<double> model_edges(const MismatchVector& theta);

/// Edges the converter actually exhibits for mismatch `theta`. Equal to
/// model_edges() when the DAC is monotone; where it is not, the bit-trial
/// search makes CE[c] = min over c' >= c of f_c'.
std::vector<double> edges_from_theta(const MismatchVector& theta);

/// Replaces each edge by the minimum of itself and all later edges.
void resolve_sar_edges(std::span<double> edges);

LinearityReport linearity(std::span<const double> edges);

struct LinearityDelta {
    double delta_inl_max = 0.0;
    double delta_dnl_max = 0.0;
    std::vector<double> delta_inl; ///< estimate - truth
    std::vector<double> delta_dnl;
};

/// Throws std::invalid_argument when the reports differ in length.
LinearityDelta compare(const LinearityReport& estimate, const LinearityReport& truth);

/// Max-abs deltas only, without allocating the per-code arrays.
LinearityDelta compare_max(const LinearityReport& estimate, const LinearityReport& truth);

struct HistogramResult {
    LinearityReport report;
    std::vector<std::uint64_t> counts; ///< hits per output code
    std::uint64_t conversions = 0;
};

/// Ramp histogram baseline. An ideal ramp of 2^N * hits_per_code points at
/// 1/hits_per_code LSB spacing covers [-0.5, 2^N - 0.5) LSB, one LSB beyond
/// the outer edges. Inner code widths are count / hits_per_code; the end
/// codes only anchor the cumulative edge positions.
HistogramResult ramp_histogram_test(const SarDevice& device, int hits_per_code, Rng& rng);

} // namespace edgeprobe
