#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "edgeprobe/harness.hpp"

using namespace edgeprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "edgeprobe_harness_test" / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<fs::path> dat_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".dat") out.push_back(e.path().filename());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void check_identical_dirs(const fs::path& a, const fs::path& b) {
    const auto fa = dat_files(a);
    REQUIRE(!fa.empty());
    REQUIRE(fa == dat_files(b));
    for (const auto& f : fa) {
        INFO(f.string());
        CHECK(slurp(a / f) == slurp(b / f));
    }
}

// Every line holds exactly two numbers.
void check_two_columns(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        double a = 0, b = 0;
        std::string extra;
        REQUIRE(static_cast<bool>(ls >> a >> b));
        REQUIRE_FALSE(static_cast<bool>(ls >> extra));
        ++lines;
    }
    CHECK(lines > 0);
    const std::string all = slurp(p);
    CHECK(all.back() == '\n');
}

ExperimentConfig small(const std::string& name) {
    ExperimentConfig c;
    c.resolution = 10;
    c.iterations = 40;
    c.samples = 32;
    c.out_dir = scratch(name);
    return c;
}

} // namespace

TEST_CASE("single run writes the plot files") {
    ExperimentConfig c = small("single_files");
    const RunRecord rec = run_single(c);
    for (const char* f : {"true_inl.dat", "est_inl.dat", "diff_inl.dat", "true_dnl.dat", "est_dnl.dat",
                          "diff_dnl.dat", "trace_inl.dat", "trace_dnl.dat"}) {
        INFO(f);
        REQUIRE(fs::exists(c.out_dir / f));
        check_two_columns(c.out_dir / f);
    }
    CHECK(rec.trace.size() == 40);
    CHECK(rec.conversions == 40 * 32);
    CHECK(rec.summary.find("single:") == 0);
}

TEST_CASE("noiseless ideal device: all differences are zero") {
    ExperimentConfig c = small("single_ideal");
    c.noise_rms = 0.0;
    c.ideal_device = true;
    const RunRecord rec = run_single(c);
    CHECK(rec.delta.delta_inl_max == 0.0);
    CHECK(rec.delta.delta_dnl_max == 0.0);
    std::ifstream in(c.out_dir / "diff_inl.dat");
    double code = 0, v = 0;
    while (in >> code >> v) REQUIRE(v == 0.0);
}

TEST_CASE("same seed, byte-identical output in every mode") {
    auto twice = [](ExperimentConfig c, auto&& runner) {
        const fs::path base = c.out_dir;
        c.out_dir = base / "a";
        runner(c);
        c.out_dir = base / "b";
        runner(c);
        check_identical_dirs(base / "a", base / "b");
    };
    SUBCASE("single") { twice(small("det_single"), [](const ExperimentConfig& c) { run_single(c); }); }
    SUBCASE("single pipelined") {
        ExperimentConfig c = small("det_pipe");
        c.pipelined = true;
        twice(c, [](const ExperimentConfig& cfg) { run_single(cfg); });
    }
    SUBCASE("grid") {
        ExperimentConfig c = small("det_grid");
        c.mode = Mode::grid;
        c.axis = GridAxis::noise;
        c.noise_levels = {0.5, 1.0, 2.0};
        twice(c, [](const ExperimentConfig& cfg) { run_grid(cfg); });
    }
    SUBCASE("montecarlo") {
        ExperimentConfig c = small("det_mc");
        c.device_count = 6;
        twice(c, [](const ExperimentConfig& cfg) { run_montecarlo(cfg); });
    }
    SUBCASE("bench") {
        ExperimentConfig c = small("det_bench");
        c.resolutions = {8, 10};
        c.warmup = 1;
        c.min_timed = 5;
        c.repeats = 2;
        c.iterations = 10;
        twice(c, [](const ExperimentConfig& cfg) { bench_selection(cfg); });
    }
    SUBCASE("rht") {
        ExperimentConfig c = small("det_rht");
        c.hits_per_code = 16;
        twice(c, [](const ExperimentConfig& cfg) { run_rht_compare(cfg); });
    }
}

TEST_CASE("an output path below a regular file is a configuration error") {
    const fs::path base = scratch("unwritable");
    fs::create_directories(base);
    std::ofstream(base / "plain_file") << "x";
    ExperimentConfig c = small("unused");
    c.out_dir = base / "plain_file" / "sub";
    CHECK_THROWS_AS(run_single(c), ConfigError);
    CHECK_THROWS_AS(prepare_output_dir(c.out_dir), ConfigError);
}

TEST_CASE("grid axis resolution") {
    ExperimentConfig c = small("grid_axes");
    c.resolutions = {10, 12};
    c.noise_levels = {0.5, 1.0};
    CHECK_THROWS_AS(resolve_grid_axis(c), ConfigError);
    CHECK_THROWS_AS(run_grid(c), ConfigError);

    ExperimentConfig d = small("grid_axes2");
    d.axis = GridAxis::samples;
    CHECK(resolve_grid_axis(d) == GridAxis::samples);
    CHECK(d.sample_counts == std::vector<int>{8, 16, 32, 64, 128});

    ExperimentConfig e = small("grid_axes3");
    e.axis = GridAxis::resolution;
    e.noise_levels = {0.5, 1.0};
    CHECK_THROWS_AS(resolve_grid_axis(e), ConfigError);
}

TEST_CASE("grid files and the single-cell reduction") {
    ExperimentConfig c = small("grid_cells");
    c.axis = GridAxis::samples;
    c.sample_counts = {8, 32};
    const auto cells = run_grid(c);
    REQUIRE(cells.size() == 2);
    for (const char* f : {"grid_samples_8_inl.dat", "grid_samples_8_dnl.dat", "grid_samples_32_inl.dat",
                          "grid_samples_32_dnl.dat"}) {
        INFO(f);
        check_two_columns(c.out_dir / f);
    }

    ExperimentConfig one = small("grid_one");
    one.axis = GridAxis::samples;
    one.sample_counts = {32};
    const auto single_cell = run_grid(one);
    const RunRecord rec = run_single(small("grid_one_single"));
    REQUIRE(single_cell.size() == 1);
    REQUIRE(single_cell[0].trace.size() == rec.trace.size());
    for (std::size_t k = 0; k < rec.trace.size(); ++k) {
        REQUIRE(single_cell[0].trace[k].delta_inl_max == rec.trace[k].delta_inl_max);
        REQUIRE(single_cell[0].trace[k].record.code == rec.trace[k].record.code);
    }
}

TEST_CASE("one Monte Carlo device equals the single run") {
    ExperimentConfig c = small("mc_one");
    c.device_count = 1;
    const MonteCarloSummary mc = run_montecarlo(c);
    const RunRecord rec = run_single(small("mc_one_single"));
    REQUIRE(mc.rows.size() == 1);
    double tmax = -1e9, emax = -1e9;
    for (double v : rec.truth.inl) tmax = std::max(tmax, v);
    for (double v : rec.estimate.inl) emax = std::max(emax, v);
    CHECK(mc.rows[0].reference_max == tmax);
    CHECK(mc.rows[0].estimate_max == emax);
    CHECK(mc.rows[0].delta_inl_max == rec.delta.delta_inl_max);
    check_two_columns(c.out_dir / "inl_statistic_pos.dat");
    check_two_columns(c.out_dir / "inl_statistic_neg.dat");
}

TEST_CASE("doubling the device count keeps the first rows") {
    ExperimentConfig c = small("mc_double_a");
    c.device_count = 4;
    const MonteCarloSummary a = run_montecarlo(c);
    c.out_dir = scratch("mc_double_b");
    c.device_count = 8;
    const MonteCarloSummary b = run_montecarlo(c);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.rows[i].reference_max == b.rows[i].reference_max);
        CHECK(a.rows[i].estimate_max == b.rows[i].estimate_max);
        CHECK(a.rows[i].reference_min == b.rows[i].reference_min);
        CHECK(a.rows[i].estimate_min == b.rows[i].estimate_min);
    }
    c.device_count = 0;
    CHECK_THROWS_AS(run_montecarlo(c), ConfigError);
}

TEST_CASE("RHT comparison conversion counts at 12 bits") {
    ExperimentConfig c;
    c.resolution = 12;
    c.out_dir = scratch("rht_counts");
    const RhtComparison cmp = run_rht_compare(c);
    CHECK(cmp.uglms_conversions == 12800);
    CHECK(cmp.rht_conversions == 524288);
    for (const char* f : {"true_inl.dat", "uglms_inl.dat", "rht_inl.dat", "true_dnl.dat", "uglms_dnl.dat",
                          "rht_dnl.dat"}) {
        INFO(f);
        check_two_columns(c.out_dir / f);
    }
}

TEST_CASE("both methods are exact on a noiseless ideal device") {
    ExperimentConfig c = small("rht_ideal");
    c.noise_rms = 0.0;
    c.ideal_device = true;
    c.hits_per_code = 16;
    const RhtComparison cmp = run_rht_compare(c);
    CHECK(cmp.uglms.max_abs_inl == 0.0);
    CHECK(cmp.rht.max_abs_inl <= 1.0 / 16);
}

TEST_CASE("bench writes codes and a timing table") {
    ExperimentConfig c = small("bench_files");
    c.resolutions = {8, 10};
    c.warmup = 1;
    c.min_timed = 5;
    c.repeats = 2;
    c.iterations = 10;
    const auto rows = bench_selection(c);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].samples == 64);
    CHECK(rows[0].acquisition_ms == doctest::Approx(10 * 64 / 1e3));
    check_two_columns(c.out_dir / "bench_selected_codes_8.dat");
    CHECK(fs::exists(c.out_dir / "bench_timing.txt"));
    c.repeats = 0;
    CHECK_THROWS_AS(bench_selection(c), ConfigError);
}

TEST_CASE("device streams depend only on seed and index") {
    const DeviceStreams a = device_streams(7, 3);
    const DeviceStreams b = device_streams(7, 3);
    CHECK(a.mismatch.key() == b.mismatch.key());
    CHECK(a.noise.key() != a.mismatch.key());
    CHECK(device_streams(7, 4).mismatch.key() != a.mismatch.key());
    CHECK(device_streams(8, 3).mismatch.key() != a.mismatch.key());
}
