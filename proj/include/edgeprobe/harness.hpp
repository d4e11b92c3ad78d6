#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edgeprobe/adc_model.hpp"
#include "edgeprobe/estimator.hpp"
#include "edgeprobe/metrics.hpp"

namespace edgeprobe {

/// Bad configuration or unusable output location (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A post-run consistency check failed (CLI exit code 1).
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { single, grid, montecarlo, bench, rht };

enum class GridAxis { none, resolution, samples, noise };

inline constexpr double kDefaultSigmaUnit = 0.009;

struct ExperimentConfig {
    Mode mode = Mode::single;
    int resolution = 12;
    double v_ref_neg = 0.0;
    double v_ref_pos = 1.0;
    double noise_rms = 1.0;
    double sigma_unit = kDefaultSigmaUnit;
    bool ideal_device = false; ///< zero mismatch instead of a random draw

    int iterations = 200;
    int samples = 64;
    std::optional<double> half_span; ///< default from the noise level
    int extra_bits = 4;
    std::optional<double> measurement_variance;
    std::optional<double> sigma_prior;
    double nis_threshold = 9.0;
    double inflation = 1.2;
    InnovationModel innovation = InnovationModel::direct;
    bool pipelined = false;
    double epsilon_p = 0.0;

    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "out";

    // grid
    GridAxis axis = GridAxis::none;
    std::vector<int> resolutions;
    std::vector<int> sample_counts;
    std::vector<double> noise_levels;

    // montecarlo
    int device_count = 100;
    double inl_limit = 2.0;

    // bench
    bool table_samples = true; ///< 64 samples up to 12 bits, 128 above
    int warmup = 5;
    int min_timed = 50;
    int repeats = 3;

    // rht
    int hits_per_code = 128;

    /// Estimator settings for a given noise level and sweep size, with any
    /// explicit overrides from this config applied.
    [[nodiscard]] EkfConfig estimator(double noise, int sweep_samples) const;
    [[nodiscard]] DeviceSpec device_spec(int bits, double noise) const;
};

/// Random streams of device `index` under `seed`: device 0 is the one used by
/// single runs, grid cells and the RHT comparison.
struct DeviceStreams {
    Rng mismatch;
    Rng noise;
    Rng histogram;
};
DeviceStreams device_streams(std::uint64_t seed, std::uint64_t index);

/// Draws (or zeroes) the mismatch of device `index`.
SarDevice make_device(const ExperimentConfig& config, int bits, double noise, std::uint64_t index);

struct Timing {
    double selection_mean = 0.0;  ///< seconds per selection
    double selection_total = 0.0; ///< seconds
    double sweep_total = 0.0;     ///< simulated acquisition wall time, seconds
    double acquisition_model = 0.0; ///< M / 1 MS/s per sweep, seconds
    double wall_total = 0.0;
};

struct RunRecord {
    int bits = 0;
    std::vector<TracePoint> trace;
    LinearityReport truth;
    LinearityReport estimate;
    LinearityDelta delta;
    MismatchVector theta_true;
    MismatchVector theta_estimate;
    int inflations = 0;
    std::uint64_t conversions = 0;
    Timing timing;
    std::string summary;
};

/// Ground truth, one UGLMS run and the comparison for device 0. Writes
/// true/est/diff INL and DNL, convergence traces and both mismatch vectors.
RunRecord run_single(const ExperimentConfig& config);

/// Same as run_single without touching the filesystem.
RunRecord simulate(const ExperimentConfig& config, int bits, double noise, int samples, std::uint64_t index);

struct GridCell {
    GridAxis axis = GridAxis::none;
    double value = 0.0;
    int bits = 0;
    int samples = 0;
    double noise = 0.0;
    std::vector<TracePoint> trace;
};

/// Throws ConfigError unless at most one axis has more than one value.
GridAxis resolve_grid_axis(ExperimentConfig& config);

std::vector<GridCell> run_grid(const ExperimentConfig& config);

/// Extreme INL values of one device: the most positive and the most negative
/// INL of the ground truth and of the reconstruction.
struct MonteCarloRow {
    std::uint64_t device = 0;
    double reference_max = 0.0;
    double estimate_max = 0.0;
    double reference_min = 0.0;
    double estimate_min = 0.0;
    double delta_inl_max = 0.0; ///< per-code INL error
};

struct MonteCarloSummary {
    std::vector<MonteCarloRow> rows;
    double max_abs_error = 0.0; ///< over both extremes of every device
    double mean_error = 0.0;    ///< signed, estimate - reference
    int both_pass = 0;
    int both_fail = 0;
    int false_pass = 0; ///< reference outside the limit, estimate inside
    int false_fail = 0;
    std::string summary;
};

MonteCarloSummary run_montecarlo(const ExperimentConfig& config);

struct BenchRow {
    int bits = 0;
    int samples = 0;
    double selection_mean_us = 0.0;
    double selection_cv = 0.0; ///< coefficient of variation of the mean over repeats
    double selection_total_ms = 0.0;
    double acquisition_ms = 0.0;
    double total_ms = 0.0;
};

std::vector<BenchRow> bench_selection(const ExperimentConfig& config);

struct RhtComparison {
    LinearityReport truth;
    LinearityReport uglms;
    LinearityReport rht;
    LinearityDelta uglms_delta;
    LinearityDelta rht_delta;
    std::uint64_t uglms_conversions = 0;
    std::uint64_t rht_conversions = 0;
    double uglms_seconds = 0.0;
    double rht_seconds = 0.0;
    std::string summary;
};

RhtComparison run_rht_compare(const ExperimentConfig& config);

/// Two whitespace-separated columns, newline terminated, no header.
void write_columns(const std::filesystem::path& path, std::span<const double> values);
void write_columns(const std::filesystem::path& path, std::span<const std::pair<double, double>> rows);

/// Creates the directory and probes that it accepts files; ConfigError if not.
void prepare_output_dir(const std::filesystem::path& dir);

std::string to_string(GridAxis axis);

} // namespace edgeprobe
