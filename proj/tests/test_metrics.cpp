#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <boost/rational.hpp>

#include "edgeprobe/adc_model.hpp"
#include "edgeprobe/metrics.hpp"
#include "edgeprobe/rng.hpp"

using namespace edgeprobe;

namespace {

SarDevice device_with(const MismatchVector& theta, double noise) {
    DeviceSpec spec;
    spec.resolution = theta.size();
    spec.noise_rms = noise;
    return SarDevice(spec, theta);
}

std::vector<double> ideal_edges(std::size_t n) {
    std::vector<double> e(n);
    for (std::size_t c = 0; c < n; ++c) e[c] = static_cast<double>(c) + 0.5;
    return e;
}

} // namespace

TEST_CASE("edges from a zero mismatch vector are ideal") {
    const std::vector<double> e = edges_from_theta(MismatchVector::zeros(10));
    CHECK(e == ideal_edges(1023));
}

TEST_CASE("two-bit edges example") {
    using Q = boost::rational<long long>;
    // exact: 4 D / 4.2 - 1/2 with D = 1, 2.2, 3.2
    const double oracle[3] = {boost::rational_cast<double>(Q(40, 42) - Q(1, 2)),
                              boost::rational_cast<double>(Q(88, 42) - Q(1, 2)),
                              boost::rational_cast<double>(Q(128, 42) - Q(1, 2))};
    const std::vector<double> e = edges_from_theta(MismatchVector({0.0, 0.1}));
    REQUIRE(e.size() == 3);
    CHECK(e[0] == doctest::Approx(0.452381).epsilon(1e-6));
    CHECK(e[1] == doctest::Approx(1.595238).epsilon(1e-6));
    CHECK(e[2] == doctest::Approx(2.547619).epsilon(1e-6));
    for (int c = 0; c < 3; ++c) CHECK(e[static_cast<std::size_t>(c)] == doctest::Approx(oracle[c]).epsilon(1e-14));
}

TEST_CASE("incremental evaluation matches model_edge") {
    Rng rng(3);
    for (int bits : {8, 12, 14}) {
        const MismatchVector theta = sample_mismatch(bits, 0.02, rng).theta;
        const std::vector<double> fast = model_edges(theta);
        for (std::uint64_t c = 0; c < fast.size(); ++c) {
            REQUIRE(std::abs(fast[c] - model_edge(theta, c)) <= 1e-12);
        }
    }
}

TEST_CASE("SAR resolution takes the suffix minimum") {
    std::vector<double> e = {0.5, 1.7, 1.6, 3.5, 3.2, 5.5};
    resolve_sar_edges(e);
    CHECK(e == std::vector<double>{0.5, 1.6, 1.6, 3.2, 3.2, 5.5});
}

TEST_CASE("linearity of ideal edges is zero") {
    const LinearityReport r = linearity(ideal_edges(255));
    CHECK(r.dnl.size() == 254);
    CHECK(r.inl.size() == 255);
    CHECK(r.max_abs_dnl == 0.0);
    CHECK(r.max_abs_inl == 0.0);
    CHECK(r.missing_codes.empty());
    CHECK_THROWS_AS(linearity(std::vector<double>{0.5}), std::invalid_argument);
}

TEST_CASE("a repeated edge is a missing code") {
    std::vector<double> e = ideal_edges(255);
    e[101] = e[100];
    const LinearityReport r = linearity(e);
    CHECK(r.dnl[100] == -1.0);
    CHECK(r.missing_codes == std::vector<std::uint64_t>{100});
    CHECK(r.inl.front() == 0.0);
    CHECK(r.inl.back() == 0.0);
}

TEST_CASE("telescoping DNL sum and cumulative INL") {
    Rng rng(4);
    for (int k = 0; k < 20; ++k) {
        const MismatchVector theta = sample_mismatch(12, 0.01, rng).theta;
        const std::vector<double> e = edges_from_theta(theta);
        const LinearityReport r = linearity(e);
        const double sum = std::accumulate(r.dnl.begin(), r.dnl.end(), 0.0);
        CHECK(std::abs(sum - (e.back() - e.front() - (e.size() - 1.0))) <= 1e-9);

        // INL from the running DNL sum with the same endpoint correction
        std::vector<double> dev(e.size(), 0.0);
        for (std::size_t c = 1; c < e.size(); ++c) dev[c] = dev[c - 1] + r.dnl[c - 1];
        const double slope = dev.back() / (e.size() - 1.0);
        double worst = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) worst = std::max(worst, std::abs(dev[c] - slope * c - r.inl[c]));
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("endpoint-corrected INL ignores offset and gain") {
    Rng rng(5);
    for (int k = 0; k < 50; ++k) {
        const MismatchVector theta = sample_mismatch(12, 0.01, rng).theta;
        const std::vector<double> e = edges_from_theta(theta);
        const double a = 10.0 * (rng.uniform() - 0.5);
        const double b = 0.1 * (rng.uniform() - 0.5);
        std::vector<double> moved(e.size());
        for (std::size_t c = 0; c < e.size(); ++c) moved[c] = e[c] + a + b * static_cast<double>(c);
        const LinearityReport r0 = linearity(e);
        const LinearityReport r1 = linearity(moved);
        double worst = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) worst = std::max(worst, std::abs(r0.inl[c] - r1.inl[c]));
        REQUIRE(worst <= 1e-9);
    }
}

TEST_CASE("signed maximum INL keeps its sign") {
    std::vector<double> e = ideal_edges(9);
    e[3] -= 0.7;
    e[6] += 0.4;
    const LinearityReport r = linearity(e);
    CHECK(r.signed_max_inl == doctest::Approx(-0.7));
    CHECK(r.max_abs_inl == doctest::Approx(0.7));
}

TEST_CASE("compare examples") {
    const LinearityReport truth = linearity(edges_from_theta(MismatchVector({0.01, -0.004, 0.002, 0.001, 0.0, 0.0005,
                                                                            -0.0003, 0.0002})));
    const LinearityDelta same = compare(truth, truth);
    CHECK(same.delta_inl_max == 0.0);
    CHECK(same.delta_dnl_max == 0.0);

    LinearityReport shifted = truth;
    for (std::size_t c = 1; c + 1 < shifted.inl.size(); ++c) shifted.inl[c] += 0.1;
    const LinearityDelta d = compare(shifted, truth);
    CHECK(d.delta_inl_max == doctest::Approx(0.1));
    CHECK(d.delta_inl[0] == 0.0);
    CHECK(d.delta_inl[5] == doctest::Approx(0.1));

    LinearityReport shorter = linearity(ideal_edges(127));
    CHECK_THROWS_AS(compare(shorter, truth), std::invalid_argument);
    CHECK_THROWS_AS(compare_max(shorter, truth), std::invalid_argument);
}

TEST_CASE("compare agrees with a brute-force scan on random reports") {
    Rng rng(6);
    for (int k = 0; k < 20; ++k) {
        const LinearityReport a = linearity(edges_from_theta(sample_mismatch(10, 0.02, rng).theta));
        const LinearityReport b = linearity(edges_from_theta(sample_mismatch(10, 0.02, rng).theta));
        double inl = 0.0, dnl = 0.0;
        for (std::size_t c = 0; c < a.inl.size(); ++c) inl = std::max(inl, std::abs(a.inl[c] - b.inl[c]));
        for (std::size_t c = 0; c < a.dnl.size(); ++c) dnl = std::max(dnl, std::abs(a.dnl[c] - b.dnl[c]));
        const LinearityDelta d = compare(a, b);
        const LinearityDelta m = compare_max(a, b);
        CHECK(d.delta_inl_max == inl);
        CHECK(d.delta_dnl_max == dnl);
        CHECK(m.delta_inl_max == inl);
        CHECK(m.delta_dnl_max == dnl);
        CHECK(d.delta_dnl[3] == a.dnl[3] - b.dnl[3]);
    }
}

TEST_CASE("ramp histogram of a noiseless ideal converter") {
    const SarDevice dev = device_with(MismatchVector::zeros(10), 0.0);
    Rng rng(7);
    const HistogramResult h = ramp_histogram_test(dev, 16, rng);
    CHECK(h.conversions == 1024 * 16);
    CHECK(dev.conversions() == 1024 * 16);
    CHECK(h.report.max_abs_dnl <= 1.0 / 16);
    CHECK(h.report.max_abs_inl <= 1.0 / 16);
    for (std::uint64_t c = 1; c + 1 < 1024; ++c) CHECK(h.counts[c] == 16);
    CHECK_THROWS_AS(ramp_histogram_test(dev, 0, rng), std::invalid_argument);
}

TEST_CASE("ramp histogram shows statistical noise at 128 hits per code") {
    const SarDevice dev = device_with(MismatchVector::zeros(12), 1.0);
    double smallest = 1e9;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng = Rng(70).split(seed);
        const HistogramResult h = ramp_histogram_test(dev, 128, rng);
        smallest = std::min(smallest, h.report.max_abs_dnl);
    }
    MESSAGE("smallest max|DNL error| over 20 seeds: " << smallest);
    CHECK(smallest >= 0.05);
}

TEST_CASE("ramp histogram approaches the oracle as hits per code grow") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng mrng = Rng(80).split(seed);
        const MismatchVector theta = sample_mismatch(10, 0.02, mrng).theta;
        const SarDevice dev = device_with(theta, 1.0);
        const LinearityReport truth = linearity(true_edges(dev).edges);
        Rng a = Rng(81).split(seed), b = Rng(82).split(seed);
        const double coarse = compare_max(ramp_histogram_test(dev, 32, a).report, truth).delta_dnl_max;
        const double fine = compare_max(ramp_histogram_test(dev, 1024, b).report, truth).delta_dnl_max;
        CHECK(fine <= coarse);
    }
}
