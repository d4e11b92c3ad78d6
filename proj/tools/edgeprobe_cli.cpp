// Command line front end: single, grid, montecarlo, bench and rht experiments.
//
// Exit codes: 0 success, 1 failed consistency check, 2 configuration or I/O error.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "edgeprobe/harness.hpp"

using namespace edgeprobe;

int main(int argc, char** argv) {
    CLI::App app{"Adaptive code-edge probing for SAR ADC linearity test (simulation)"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "flat key=value file; command line flags take precedence");

    ExperimentConfig cfg;
    std::string out_dir = cfg.out_dir.string();
    std::string innovation = "direct";
    std::string axis = "none";
    double half_span = 0.0;
    double measurement_variance = 0.0;
    double sigma_prior = 0.0;

    app.add_option("--seed", cfg.seed, "experiment seed");
    app.add_option("--out", out_dir, "output directory");

    app.add_option("--resolution,-n", cfg.resolution, "ADC resolution in bits")->check(CLI::Range(8, 20));
    app.add_option("--noise", cfg.noise_rms, "input-referred noise, LSB RMS")->check(CLI::NonNegativeNumber);
    app.add_option("--sigma-unit", cfg.sigma_unit, "relative std of one unit capacitor");
    app.add_flag("--ideal", cfg.ideal_device, "use a converter without mismatch");
    app.add_option("--vref-neg", cfg.v_ref_neg, "negative reference, volts");
    app.add_option("--vref-pos", cfg.v_ref_pos, "positive reference, volts");

    app.add_option("--iterations", cfg.iterations, "iteration budget")->check(CLI::PositiveNumber);
    app.add_option("--samples", cfg.samples, "conversions per sweep")->check(CLI::PositiveNumber);
    app.add_option("--half-span", half_span, "sweep half span, LSB (default from noise)");
    app.add_option("--extra-bits", cfg.extra_bits, "stimulus DAC bits beyond the ADC");
    app.add_option("--measurement-variance", measurement_variance, "R in LSB^2 (default (noise^2+1/12)/M)");
    app.add_option("--sigma-prior", sigma_prior, "prior std of the LSB capacitor mismatch (default 2 sigma_unit)");
    app.add_option("--nis-threshold", cfg.nis_threshold, "NIS threshold tau");
    app.add_option("--inflation", cfg.inflation, "covariance inflation factor alpha");
    app.add_option("--innovation", innovation, "sweep residual model")
        ->check(CLI::IsMember({"direct", "predicted"}));
    app.add_flag("--pipelined", cfg.pipelined, "select the next code while the current sweep runs");
    app.add_option("--epsilon-p", cfg.epsilon_p, "stop when every edge std is below this, LSB (0 = off)");

    app.add_option("--axis", axis, "grid axis")->check(CLI::IsMember({"none", "resolution", "samples", "noise"}));
    app.add_option("--resolutions", cfg.resolutions, "grid/bench resolutions")->delimiter(',');
    app.add_option("--sample-counts", cfg.sample_counts, "grid sweep sizes")->delimiter(',');
    app.add_option("--noise-levels", cfg.noise_levels, "grid noise levels")->delimiter(',');

    app.add_option("--devices", cfg.device_count, "Monte Carlo device count");
    app.add_option("--inl-limit", cfg.inl_limit, "pass limit on max |INL|, LSB");

    app.add_option("--warmup", cfg.warmup, "bench warmup iterations");
    app.add_option("--min-timed", cfg.min_timed, "bench minimum timed iterations");
    app.add_option("--repeats", cfg.repeats, "bench repetitions");

    app.add_option("--hpc", cfg.hits_per_code, "ramp histogram hits per code")->check(CLI::PositiveNumber);

    const std::map<std::string, Mode> modes = {{"single", Mode::single},
                                               {"grid", Mode::grid},
                                               {"montecarlo", Mode::montecarlo},
                                               {"bench", Mode::bench},
                                               {"rht", Mode::rht}};
    app.add_subcommand("single", "one UGLMS run against ground truth");
    app.add_subcommand("grid", "convergence traces over one parameter axis");
    app.add_subcommand("montecarlo", "INL correlation over many devices");
    app.add_subcommand("bench", "code selection timing per resolution");
    app.add_subcommand("rht", "compare with a ramp histogram test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    cfg.mode = modes.at(app.get_subcommands().front()->get_name());
    cfg.out_dir = out_dir;
    cfg.innovation = innovation == "predicted" ? InnovationModel::predicted : InnovationModel::direct;
    cfg.axis = axis == "resolution" ? GridAxis::resolution
             : axis == "samples"    ? GridAxis::samples
             : axis == "noise"      ? GridAxis::noise
                                    : GridAxis::none;
    if (app.count("--half-span") > 0) cfg.half_span = half_span;
    if (app.count("--measurement-variance") > 0) cfg.measurement_variance = measurement_variance;
    if (app.count("--sigma-prior") > 0) cfg.sigma_prior = sigma_prior;

    // Per-mode defaults unless set explicitly.
    const bool has_resolution = app.count("--resolution") > 0;
    const bool has_iterations = app.count("--iterations") > 0;
    const bool has_samples = app.count("--samples") > 0;
    if (cfg.mode == Mode::grid) {
        if (!has_resolution) cfg.resolution = 16;
        if (!has_iterations) cfg.iterations = 1000;
    }
    if (cfg.mode == Mode::montecarlo) {
        if (!has_resolution) cfg.resolution = 16;
        if (!has_samples) cfg.samples = 128;
    }
    if (cfg.mode == Mode::bench) {
        cfg.table_samples = !has_samples;
    }

    try {
        switch (cfg.mode) {
        case Mode::single: {
            const RunRecord rec = run_single(cfg);
            std::cout << rec.summary << '\n';
            break;
        }
        case Mode::grid: {
            const auto cells = run_grid(cfg);
            for (const GridCell& cell : cells) {
                const TracePoint& last = cell.trace.back();
                std::printf("grid: axis=%s value=%g bits=%d samples=%d noise=%g final_dINL=%.4f final_dDNL=%.4f\n",
                            to_string(cell.axis).c_str(), cell.value, cell.bits, cell.samples, cell.noise,
                            last.delta_inl_max, last.delta_dnl_max);
            }
            break;
        }
        case Mode::montecarlo: {
            const MonteCarloSummary mc = run_montecarlo(cfg);
            std::cout << mc.summary << '\n';
            break;
        }
        case Mode::bench: {
            bench_selection(cfg);
            std::ifstream table(cfg.out_dir / "bench_timing.txt");
            std::cout << table.rdbuf();
            break;
        }
        case Mode::rht: {
            const RhtComparison cmp = run_rht_compare(cfg);
            std::cout << cmp.summary << '\n';
            break;
        }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violated: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
