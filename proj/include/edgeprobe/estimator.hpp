#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "edgeprobe/adc_model.hpp"
#include "edgeprobe/metrics.hpp"
#include "edgeprobe/rng.hpp"
#include "edgeprobe/stimulus.hpp"

namespace edgeprobe {

/// d f_c / d theta at theta = 0 for every code edge, row-major, computed once
/// per resolution: rows[c][i] = 2^i (bit_i(c+1) - (c+1) / 2^N).
class JacobianTable {
public:
    explicit JacobianTable(int bits);

    [[nodiscard]] int bits() const { return bits_; }
    [[nodiscard]] std::uint64_t rows() const { return rows_; }
    [[nodiscard]] std::span<const double> row(std::uint64_t code) const;
    [[nodiscard]] Eigen::Map<const Eigen::RowVectorXd> row_vector(std::uint64_t code) const;

private:
    int bits_;
    std::uint64_t rows_;
    std::vector<double> data_;
};

JacobianTable precompute_jacobian(int bits);

/// How the sweep outcome is turned into an edge-position innovation.
enum class InnovationModel {
    /// Expected sweep statistic at the current estimate minus the observed
    /// one, divided by the predicted sensitivity. Accounts for the noise
    /// blur and for sweep levels that are not symmetric about the center.
    predicted,
    /// -z / slope with the slope of an ideal staircase at the sweep center.
    direct,
};

struct EkfConfig {
    double measurement_variance = 0.0; ///< R, LSB^2
    double sigma_prior = 0.04;         ///< prior std of theta[i] is sigma_prior / sqrt(2^i)
    double nis_threshold = 9.0;        ///< tau
    double inflation = 1.2;            ///< alpha
    int samples = 64;                  ///< M, conversions per sweep
    double half_span = 0.25;           ///< LSB
    int extra_bits = 4;
    double noise_rms = 1.0;            ///< noise level the sweep model assumes, LSB
    InnovationModel innovation = InnovationModel::predicted;
    bool pipelined = false;
    int max_iterations = 200;
    double epsilon_p = 0.0;            ///< stop once every edge std <= epsilon_p; 0 disables

    /// Defaults for a given noise level, sweep size and mismatch population:
    /// sweep span from default_sweep_params, R = (noise^2 + 1/12) / M and
    /// sigma_prior = 2 sigma_unit.
    static EkfConfig defaults(double noise_rms, int samples, double sigma_unit);

    /// Throws std::invalid_argument on R <= 0, alpha <= 1, tau <= 0 and friends.
    void validate() const;
};

struct IterationRecord {
    std::uint64_t code = 0;
    double z = 0.0;          ///< sweep statistic, mean code - (code + 0.5)
    double innovation = 0.0; ///< inferred true edge minus predicted edge, LSB
    double s = 0.0;          ///< predicted innovation variance
    double nis = 0.0;
    double gain = 0.0;
    bool inflated = false;
};

struct EkfState {
    Eigen::VectorXd theta_hat;
    Eigen::MatrixXd p;
    int k = 0;
    int inflation_count = 0;
    int rejected = 0;
    std::vector<IterationRecord> history;

    /// theta_hat = 0, P = diag(sigma_prior^2 / 2^i).
    static EkfState initial(int bits, double sigma_prior);

    [[nodiscard]] int bits() const { return static_cast<int>(theta_hat.size()); }

    /// Estimate as a mismatch vector; components are clipped into (-1, 1).
    [[nodiscard]] MismatchVector estimate() const;
};

/// S = j P j^T + R.
double predicted_variance(const EkfState& state, const JacobianTable& table, std::uint64_t code, double r);

/// j P j^T / (j P j^T + R), in [0, 1).
double gain(const EkfState& state, const JacobianTable& table, std::uint64_t code, double r);

/// Code with the largest gain, ranked through j P j^T (the gain is increasing
/// in it); ties go to the lowest code. Uses the bit
/// structure of the Jacobian rows so a scan costs O(2^N) after O(N^2) setup,
/// and runs in parallel. Every code's gain is computed independently of how
/// the scan is partitioned, so the result does not depend on it.
std::uint64_t select_code(const EkfState& state, const JacobianTable& table, double r);

/// Same scan split into exactly `partitions` chunks, reduced in order.
std::uint64_t select_code_partitioned(const EkfState& state, const JacobianTable& table, double r,
                                      std::size_t partitions);

/// Reference scan evaluating j P j^T from the stored rows for every code.
std::uint64_t select_code_bruteforce(const EkfState& state, const JacobianTable& table, double r);

struct UpdateOutcome {
    bool accepted = false;
    double s = 0.0;
    double gain = 0.0;
};

/// Scalar Kalman update: K = P j^T / S, theta += K * innovation,
/// P = (I - K j) P, then P = (P + P^T) / 2. A non-finite innovation leaves
/// the state untouched apart from the rejection counter.
UpdateOutcome update(EkfState& state, const JacobianTable& table, std::uint64_t code, double innovation,
                     double r, double z = 0.0);

/// Same update along an explicit measurement row; `code` only labels the
/// history entry.
UpdateOutcome update(EkfState& state, const Eigen::Ref<const Eigen::RowVectorXd>& j, std::uint64_t code,
                     double innovation, double r, double z = 0.0);

/// NIS = innovation^2 / S; inflates P by alpha when NIS > tau. Annotates the
/// latest history entry. Returns whether P was inflated.
bool inflate_if_needed(EkfState& state, double innovation, double s, double tau, double alpha);

/// Largest predicted edge std over all codes is at most epsilon_p.
bool converged(const EkfState& state, double epsilon_p);

struct StepOutcome {
    std::uint64_t code = 0;
    SweepPlan plan;
    SweepResult sweep;
    double innovation = 0.0;
    bool accepted = false;
};

/// Turns a finished sweep into an innovation for `code` under the estimate.
double sweep_innovation(const EkfState& state, const SweepPlan& plan, const SweepResult& sweep,
                        const EkfConfig& config);

/// Plans the sweep for `code` around model_edge(theta_hat, code).
SweepPlan plan_for(const EkfState& state, std::uint64_t code, const EkfConfig& config);

/// One full iteration: select, sweep around the current prediction, update,
/// inflate. When `preselected` is set it replaces the selection.
StepOutcome step(EkfState& state, const SarDevice& device, const JacobianTable& table, const EkfConfig& config,
                 Rng& rng, std::optional<std::uint64_t> preselected = std::nullopt);

struct TracePoint {
    int iteration = 0; ///< 1-based
    IterationRecord record;
    double delta_inl_max = 0.0;
    double delta_dnl_max = 0.0;
};

struct RunResult {
    EkfState state;
    std::vector<TracePoint> trace;
    bool converged = false;
    std::uint64_t conversions = 0;
    double selection_seconds = 0.0;
    double sweep_seconds = 0.0;
    std::vector<double> selection_samples; ///< wall time of each selection, seconds
};

/// Iterates step() until max_iterations or convergence. In pipelined mode the
/// selection for iteration k+1 is computed from the covariance before the
/// update of iteration k, concurrently with that iteration's sweep. When
/// `truth` is given every trace row carries the INL/DNL error of the current
/// estimate against it.
RunResult run(const SarDevice& device, const JacobianTable& table, const EkfConfig& config, Rng& rng,
              const LinearityReport* truth = nullptr);

} // namespace edgeprobe
