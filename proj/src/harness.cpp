#include "edgeprobe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <tbb/parallel_for.h>

namespace edgeprobe {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* fmt, auto... args) {
    const int n = std::snprintf(nullptr, 0, fmt, args...);
    std::string out(static_cast<std::size_t>(n), '\0');
    std::snprintf(out.data(), out.size() + 1, fmt, args...);
    return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    return out;
}

void write_trace(const std::filesystem::path& dir, const std::string& stem, const std::vector<TracePoint>& trace) {
    std::vector<std::pair<double, double>> inl;
    std::vector<std::pair<double, double>> dnl;
    inl.reserve(trace.size());
    dnl.reserve(trace.size());
    for (const TracePoint& tp : trace) {
        inl.emplace_back(tp.iteration, tp.delta_inl_max);
        dnl.emplace_back(tp.iteration, tp.delta_dnl_max);
    }
    write_columns(dir / (stem + "_inl.dat"), inl);
    write_columns(dir / (stem + "_dnl.dat"), dnl);
}

double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }
double min_of(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

} // namespace

EkfConfig ExperimentConfig::estimator(double noise, int sweep_samples) const {
    EkfConfig c = EkfConfig::defaults(noise, sweep_samples, sigma_unit);
    if (half_span) c.half_span = *half_span;
    c.extra_bits = extra_bits;
    if (measurement_variance) c.measurement_variance = *measurement_variance;
    if (sigma_prior) c.sigma_prior = *sigma_prior;
    c.nis_threshold = nis_threshold;
    c.inflation = inflation;
    c.innovation = innovation;
    c.pipelined = pipelined;
    c.max_iterations = iterations;
    c.epsilon_p = epsilon_p;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

DeviceSpec ExperimentConfig::device_spec(int bits, double noise) const {
    DeviceSpec spec;
    spec.resolution = bits;
    spec.v_ref_neg = v_ref_neg;
    spec.v_ref_pos = v_ref_pos;
    spec.noise_rms = noise;
    spec.seed = seed;
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return spec;
}

DeviceStreams device_streams(std::uint64_t seed, std::uint64_t index) {
    const Rng device = Rng(seed).split(stream::device_base + index);
    return {device.split(stream::mismatch), device.split(stream::noise), device.split(stream::histogram)};
}

SarDevice make_device(const ExperimentConfig& config, int bits, double noise, std::uint64_t index) {
    const DeviceSpec spec = config.device_spec(bits, noise);
    if (config.ideal_device) {
        return SarDevice(spec, MismatchVector::zeros(bits));
    }
    Rng rng = device_streams(config.seed, index).mismatch;
    return SarDevice(spec, sample_mismatch(bits, config.sigma_unit, rng).theta);
}

RunRecord simulate(const ExperimentConfig& config, int bits, double noise, int samples, std::uint64_t index) {
    const auto t0 = Clock::now();
    const SarDevice device = make_device(config, bits, noise, index);
    const EkfConfig ekf = config.estimator(noise, samples);

    RunRecord rec;
    rec.bits = bits;
    rec.theta_true = device.theta();
    rec.truth = linearity(true_edges(device).edges);

    const JacobianTable table = precompute_jacobian(bits);
    Rng rng = device_streams(config.seed, index).noise;
    RunResult res = run(device, table, ekf, rng, &rec.truth);

    rec.theta_estimate = res.state.estimate();
    rec.estimate = linearity(edges_from_theta(rec.theta_estimate));
    rec.delta = compare(rec.estimate, rec.truth);
    rec.trace = std::move(res.trace);
    rec.inflations = res.state.inflation_count;
    rec.conversions = res.conversions;

    if (rec.conversions != device.conversions()) {
        throw InvariantError(format("conversion accounting mismatch: %llu reported, %llu performed",
                                    static_cast<unsigned long long>(rec.conversions),
                                    static_cast<unsigned long long>(device.conversions())));
    }
    if (static_cast<int>(rec.trace.size()) != res.state.k) {
        throw InvariantError("trace length differs from the iteration count");
    }

    rec.timing.selection_total = res.selection_seconds;
    rec.timing.selection_mean =
        res.selection_samples.empty() ? 0.0 : res.selection_seconds / static_cast<double>(res.selection_samples.size());
    rec.timing.sweep_total = res.sweep_seconds;
    rec.timing.acquisition_model = static_cast<double>(rec.conversions) / 1e6;
    rec.timing.wall_total = seconds_since(t0);
    return rec;
}

RunRecord run_single(const ExperimentConfig& config) {
    prepare_output_dir(config.out_dir);
    RunRecord rec = simulate(config, config.resolution, config.noise_rms, config.samples, 0);

    const auto& dir = config.out_dir;
    write_columns(dir / "true_inl.dat", rec.truth.inl);
    write_columns(dir / "est_inl.dat", rec.estimate.inl);
    write_columns(dir / "diff_inl.dat", rec.delta.delta_inl);
    write_columns(dir / "true_dnl.dat", rec.truth.dnl);
    write_columns(dir / "est_dnl.dat", rec.estimate.dnl);
    write_columns(dir / "diff_dnl.dat", rec.delta.delta_dnl);
    write_columns(dir / "theta_true.dat", rec.theta_true.values());
    write_columns(dir / "theta_est.dat", rec.theta_estimate.values());
    write_trace(dir, "trace", rec.trace);

    std::vector<std::pair<double, double>> codes;
    for (const TracePoint& tp : rec.trace) {
        codes.emplace_back(tp.iteration, static_cast<double>(tp.record.code));
    }
    write_columns(dir / "trace_code.dat", codes);

    rec.summary = format(
        "single: bits=%d iterations=%zu conversions=%llu max|dINL|=%.4f max|dDNL|=%.4f true_max|INL|=%.4f "
        "missing_codes=%zu inflations=%d selection=%.3fms wall=%.3fs",
        rec.bits, rec.trace.size(), static_cast<unsigned long long>(rec.conversions), rec.delta.delta_inl_max,
        rec.delta.delta_dnl_max, rec.truth.max_abs_inl, rec.truth.missing_codes.size(), rec.inflations,
        rec.timing.selection_total * 1e3, rec.timing.wall_total);
    return rec;
}

std::string to_string(GridAxis axis) {
    switch (axis) {
    case GridAxis::resolution: return "resolution";
    case GridAxis::samples: return "samples";
    case GridAxis::noise: return "noise";
    case GridAxis::none: break;
    }
    return "none";
}

GridAxis resolve_grid_axis(ExperimentConfig& config) {
    const int varying = static_cast<int>(config.resolutions.size() > 1) +
                        static_cast<int>(config.sample_counts.size() > 1) +
                        static_cast<int>(config.noise_levels.size() > 1);
    if (varying > 1) {
        throw ConfigError("grid: only one axis (resolutions, samples, noise) may list several values");
    }

    GridAxis axis = config.axis;
    if (axis == GridAxis::none) {
        if (config.resolutions.size() > 1) axis = GridAxis::resolution;
        else if (config.sample_counts.size() > 1) axis = GridAxis::samples;
        else if (config.noise_levels.size() > 1) axis = GridAxis::noise;
        else if (!config.resolutions.empty()) axis = GridAxis::resolution;
        else if (!config.sample_counts.empty()) axis = GridAxis::samples;
        else if (!config.noise_levels.empty()) axis = GridAxis::noise;
        else throw ConfigError("grid: choose an axis or give a list of values");
    }

    auto other_varies = [&](GridAxis a) {
        return (a != GridAxis::resolution && config.resolutions.size() > 1) ||
               (a != GridAxis::samples && config.sample_counts.size() > 1) ||
               (a != GridAxis::noise && config.noise_levels.size() > 1);
    };
    if (other_varies(axis)) {
        throw ConfigError("grid: axis " + to_string(axis) + " chosen but another axis lists several values");
    }

    switch (axis) {
    case GridAxis::resolution:
        if (config.resolutions.empty()) config.resolutions = {10, 12, 14, 16, 18};
        break;
    case GridAxis::samples:
        if (config.sample_counts.empty()) config.sample_counts = {8, 16, 32, 64, 128};
        break;
    case GridAxis::noise:
        if (config.noise_levels.empty()) config.noise_levels = {0.25, 0.5, 1.0, 2.0, 5.0};
        break;
    case GridAxis::none: break;
    }
    config.axis = axis;
    return axis;
}

std::vector<GridCell> run_grid(const ExperimentConfig& input) {
    ExperimentConfig config = input;
    const GridAxis axis = resolve_grid_axis(config);
    prepare_output_dir(config.out_dir);

    std::vector<GridCell> cells;
    auto add = [&](double value, int bits, int samples, double noise) {
        cells.push_back({axis, value, bits, samples, noise, {}});
    };
    switch (axis) {
    case GridAxis::resolution:
        for (int b : config.resolutions) add(b, b, config.samples, config.noise_rms);
        break;
    case GridAxis::samples:
        for (int m : config.sample_counts) add(m, config.resolution, m, config.noise_rms);
        break;
    case GridAxis::noise:
        for (double nz : config.noise_levels) add(nz, config.resolution, config.samples, nz);
        break;
    case GridAxis::none: break;
    }

    // Validate every cell before spending time on any of them.
    for (const GridCell& cell : cells) {
        (void)config.device_spec(cell.bits, cell.noise);
        (void)config.estimator(cell.noise, cell.samples);
    }

    tbb::parallel_for(std::size_t{0}, cells.size(), [&](std::size_t i) {
        GridCell& cell = cells[i];
        cell.trace = simulate(config, cell.bits, cell.noise, cell.samples, 0).trace;
    });

    for (const GridCell& cell : cells) {
        write_trace(config.out_dir, format("grid_%s_%g", to_string(axis).c_str(), cell.value), cell.trace);
    }
    return cells;
}

MonteCarloSummary run_montecarlo(const ExperimentConfig& config) {
    if (config.device_count < 1) {
        throw ConfigError("montecarlo needs at least one device");
    }
    prepare_output_dir(config.out_dir);
    (void)config.estimator(config.noise_rms, config.samples);

    MonteCarloSummary mc;
    mc.rows.resize(static_cast<std::size_t>(config.device_count));
    tbb::parallel_for(std::size_t{0}, mc.rows.size(), [&](std::size_t i) {
        const RunRecord rec = simulate(config, config.resolution, config.noise_rms, config.samples, i);
        MonteCarloRow& row = mc.rows[i];
        row.device = i;
        row.reference_max = max_of(rec.truth.inl);
        row.reference_min = min_of(rec.truth.inl);
        row.estimate_max = max_of(rec.estimate.inl);
        row.estimate_min = min_of(rec.estimate.inl);
        row.delta_inl_max = rec.delta.delta_inl_max;
    });

    std::vector<std::pair<double, double>> pos;
    std::vector<std::pair<double, double>> neg;
    std::vector<std::pair<double, double>> per_code;
    double sum = 0.0;
    for (const MonteCarloRow& row : mc.rows) {
        pos.emplace_back(row.reference_max, row.estimate_max);
        neg.emplace_back(row.reference_min, row.estimate_min);
        per_code.emplace_back(static_cast<double>(row.device), row.delta_inl_max);
        for (const double err : {row.estimate_max - row.reference_max, row.estimate_min - row.reference_min}) {
            mc.max_abs_error = std::max(mc.max_abs_error, std::abs(err));
            sum += err;
        }
        const bool ref_pass = std::max(std::abs(row.reference_max), std::abs(row.reference_min)) <= config.inl_limit;
        const bool est_pass = std::max(std::abs(row.estimate_max), std::abs(row.estimate_min)) <= config.inl_limit;
        if (ref_pass && est_pass) ++mc.both_pass;
        else if (!ref_pass && !est_pass) ++mc.both_fail;
        else if (est_pass) ++mc.false_pass;
        else ++mc.false_fail;
    }
    mc.mean_error = sum / (2.0 * static_cast<double>(mc.rows.size()));

    write_columns(config.out_dir / "inl_statistic_pos.dat", pos);
    write_columns(config.out_dir / "inl_statistic_neg.dat", neg);
    write_columns(config.out_dir / "inl_error_per_device.dat", per_code);

    mc.summary = format(
        "montecarlo: devices=%d bits=%d iterations=%d samples=%d noise=%g max|est-ref|=%.4f mean(est-ref)=%+.4f "
        "limit=+/-%g both_pass=%d both_fail=%d false_pass=%d false_fail=%d",
        config.device_count, config.resolution, config.iterations, config.samples, config.noise_rms,
        mc.max_abs_error, mc.mean_error, config.inl_limit, mc.both_pass, mc.both_fail, mc.false_pass,
        mc.false_fail);
    return mc;
}

std::vector<BenchRow> bench_selection(const ExperimentConfig& config) {
    std::vector<int> resolutions = config.resolutions;
    if (resolutions.empty()) resolutions = {10, 12, 14, 16, 18};
    if (config.repeats < 1 || config.min_timed < 1 || config.warmup < 0) {
        throw ConfigError("bench needs repeats >= 1, min_timed >= 1 and warmup >= 0");
    }
    prepare_output_dir(config.out_dir);

    std::vector<BenchRow> rows;
    for (int bits : resolutions) {
        const int samples = config.table_samples ? (bits <= 12 ? 64 : 128) : config.samples;
        EkfConfig ekf = config.estimator(config.noise_rms, samples);
        const int timed_iterations = std::max(config.iterations, config.warmup + config.min_timed);
        ekf.max_iterations = timed_iterations;
        ekf.epsilon_p = 0.0;

        const SarDevice device = make_device(config, bits, config.noise_rms, 0);
        const JacobianTable table = precompute_jacobian(bits);

        std::vector<double> means;
        std::vector<double> totals;
        std::vector<std::pair<double, double>> codes;
        for (int rep = 0; rep < config.repeats; ++rep) {
            Rng rng = device_streams(config.seed, 0).noise;
            const RunResult res = run(device, table, ekf, rng, nullptr);
            const auto& t = res.selection_samples;
            const auto skip = static_cast<std::ptrdiff_t>(std::min<std::size_t>(config.warmup, t.size()));
            const double timed = std::accumulate(t.begin() + skip, t.end(), 0.0);
            means.push_back(timed / static_cast<double>(t.size() - static_cast<std::size_t>(skip)));
            const auto budget = static_cast<std::ptrdiff_t>(std::min<std::size_t>(config.iterations, t.size()));
            totals.push_back(std::accumulate(t.begin(), t.begin() + budget, 0.0));
            if (rep == 0) {
                for (int i = 0; i < config.iterations && i < static_cast<int>(res.trace.size()); ++i) {
                    codes.emplace_back(i + 1, static_cast<double>(res.trace[static_cast<std::size_t>(i)].record.code));
                }
            }
        }
        write_columns(config.out_dir / format("bench_selected_codes_%d.dat", bits), codes);

        const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
        double var = 0.0;
        for (double m : means) var += (m - mean) * (m - mean);
        var = means.size() > 1 ? var / static_cast<double>(means.size() - 1) : 0.0;

        BenchRow row;
        row.bits = bits;
        row.samples = samples;
        row.selection_mean_us = mean * 1e6;
        row.selection_cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
        row.selection_total_ms =
            std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(totals.size()) * 1e3;
        row.acquisition_ms = static_cast<double>(config.iterations) * samples / 1e6 * 1e3;
        row.total_ms = row.selection_total_ms + row.acquisition_ms;
        rows.push_back(row);
    }

    // Timings vary run to run, so they go to a text table rather than .dat data.
    std::ofstream out = open_for_write(config.out_dir / "bench_timing.txt");
    out << format("%-10s %8s %14s %8s %16s %16s %10s %12s\n", "bits", "samples", "select[us]", "cv",
                  "select_total[ms]", "acquisition[ms]", "total[ms]", "ratio_to_first");
    for (const BenchRow& row : rows) {
        out << format("%-10d %8d %14.2f %8.3f %16.3f %16.3f %10.3f %12.2f\n", row.bits, row.samples,
                      row.selection_mean_us, row.selection_cv, row.selection_total_ms, row.acquisition_ms,
                      row.total_ms, row.selection_mean_us / rows.front().selection_mean_us);
    }
    return rows;
}

RhtComparison run_rht_compare(const ExperimentConfig& config) {
    prepare_output_dir(config.out_dir);
    RhtComparison cmp;

    auto t0 = Clock::now();
    const RunRecord rec = simulate(config, config.resolution, config.noise_rms, config.samples, 0);
    cmp.uglms_seconds = seconds_since(t0);
    cmp.truth = rec.truth;
    cmp.uglms = rec.estimate;
    cmp.uglms_delta = rec.delta;
    cmp.uglms_conversions = rec.conversions;

    const SarDevice device = make_device(config, config.resolution, config.noise_rms, 0);
    Rng rng = device_streams(config.seed, 0).histogram;
    t0 = Clock::now();
    HistogramResult hist = ramp_histogram_test(device, config.hits_per_code, rng);
    cmp.rht_seconds = seconds_since(t0);
    cmp.rht = std::move(hist.report);
    cmp.rht_conversions = hist.conversions;
    cmp.rht_delta = compare(cmp.rht, cmp.truth);

    const auto& dir = config.out_dir;
    write_columns(dir / "true_inl.dat", cmp.truth.inl);
    write_columns(dir / "true_dnl.dat", cmp.truth.dnl);
    write_columns(dir / "uglms_inl.dat", cmp.uglms.inl);
    write_columns(dir / "uglms_dnl.dat", cmp.uglms.dnl);
    write_columns(dir / "rht_inl.dat", cmp.rht.inl);
    write_columns(dir / "rht_dnl.dat", cmp.rht.dnl);

    cmp.summary = format(
        "rht: bits=%d uglms_conversions=%llu rht_conversions=%llu (%.2f%%) uglms_max|dINL|=%.4f rht_max|dINL|=%.4f "
        "uglms_max|dDNL|=%.4f rht_max|dDNL|=%.4f uglms_wall=%.3fs rht_wall=%.3fs",
        config.resolution, static_cast<unsigned long long>(cmp.uglms_conversions),
        static_cast<unsigned long long>(cmp.rht_conversions),
        100.0 * static_cast<double>(cmp.uglms_conversions) / static_cast<double>(cmp.rht_conversions),
        cmp.uglms_delta.delta_inl_max, cmp.rht_delta.delta_inl_max, cmp.uglms_delta.delta_dnl_max,
        cmp.rht_delta.delta_dnl_max, cmp.uglms_seconds, cmp.rht_seconds);
    return cmp;
}

void write_columns(const std::filesystem::path& path, std::span<const double> values) {
    std::ofstream out = open_for_write(path);
    std::string buf;
    for (std::size_t i = 0; i < values.size(); ++i) {
        buf += format("%zu %.10g\n", i, values[i]);
    }
    out << buf;
    if (!out) throw ConfigError("failed writing " + path.string());
}

void write_columns(const std::filesystem::path& path, std::span<const std::pair<double, double>> rows) {
    std::ofstream out = open_for_write(path);
    std::string buf;
    for (const auto& [a, b] : rows) {
        buf += format("%.10g %.10g\n", a, b);
    }
    out << buf;
    if (!out) throw ConfigError("failed writing " + path.string());
}

void prepare_output_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw ConfigError("cannot create output directory " + dir.string());
    }
    const auto probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) {
            throw ConfigError("output directory " + dir.string() + " is not writable");
        }
    }
    std::filesystem::remove(probe, ec);
}

} // namespace edgeprobe
