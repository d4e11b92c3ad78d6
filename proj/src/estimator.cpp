#include "edgeprobe/estimator.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <future>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_reduce.h>

namespace edgeprobe {

JacobianTable::JacobianTable(int bits) : bits_(bits) {
    if (bits < 1 || bits > kMaxResolution) {
        throw std::invalid_argument("Jacobian table needs 1 <= bits <= 20, got " + std::to_string(bits));
    }
    rows_ = (std::uint64_t{1} << bits) - 1;
    data_.resize(rows_ * static_cast<std::uint64_t>(bits));
    const double inv_full = std::ldexp(1.0, -bits);
    for (std::uint64_t c = 0; c < rows_; ++c) {
        const std::uint64_t d = c + 1;
        const double s = static_cast<double>(d) * inv_full;
        double* row = data_.data() + c * static_cast<std::uint64_t>(bits);
        for (int i = 0; i < bits; ++i) {
            const double bit = static_cast<double>((d >> i) & 1U);
            row[i] = std::ldexp(bit - s, i);
        }
    }
}

std::span<const double> JacobianTable::row(std::uint64_t code) const {
    if (code >= rows_) {
        throw std::out_of_range("code " + std::to_string(code) + " outside the Jacobian table");
    }
    return {data_.data() + code * static_cast<std::uint64_t>(bits_), static_cast<std::size_t>(bits_)};
}

Eigen::Map<const Eigen::RowVectorXd> JacobianTable::row_vector(std::uint64_t code) const {
    const auto r = row(code);
    return {r.data(), static_cast<Eigen::Index>(r.size())};
}

JacobianTable precompute_jacobian(int bits) { return JacobianTable(bits); }

EkfConfig EkfConfig::defaults(double noise_rms, int samples, double sigma_unit) {
    const SweepDefaults sweep = default_sweep_params(noise_rms);
    EkfConfig c;
    c.samples = samples;
    c.half_span = sweep.half_span;
    c.extra_bits = sweep.extra_bits;
    c.noise_rms = noise_rms;
    c.measurement_variance = std::max((noise_rms * noise_rms + 1.0 / 12.0) / samples, 1e-6);
    c.sigma_prior = 2.0 * sigma_unit;
    return c;
}

void EkfConfig::validate() const {
    if (!(measurement_variance > 0.0)) throw std::invalid_argument("R must be positive");
    if (!(sigma_prior > 0.0)) throw std::invalid_argument("sigma_prior must be positive");
    if (!(nis_threshold > 0.0)) throw std::invalid_argument("NIS threshold must be positive");
    if (!(inflation > 1.0)) throw std::invalid_argument("inflation factor must exceed 1");
    if (samples < 1) throw std::invalid_argument("sweep needs at least one sample");
    if (!(half_span > 0.0)) throw std::invalid_argument("half span must be positive");
    if (extra_bits < 1) throw std::invalid_argument("stimulus needs at least one extra bit");
    if (!(noise_rms >= 0.0)) throw std::invalid_argument("noise_rms must be non-negative");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
    if (!(epsilon_p >= 0.0)) throw std::invalid_argument("epsilon_p must be non-negative");
}

EkfState EkfState::initial(int bits, double sigma_prior) {
    EkfState s;
    s.theta_hat = Eigen::VectorXd::Zero(bits);
    s.p = Eigen::MatrixXd::Zero(bits, bits);
    for (int i = 0; i < bits; ++i) {
        s.p(i, i) = sigma_prior * sigma_prior * std::ldexp(1.0, -i);
    }
    return s;
}

MismatchVector EkfState::estimate() const {
    constexpr double kLimit = 0.999;
    std::vector<double> t(static_cast<std::size_t>(theta_hat.size()));
    for (Eigen::Index i = 0; i < theta_hat.size(); ++i) {
        t[static_cast<std::size_t>(i)] = std::clamp(theta_hat(i), -kLimit, kLimit);
    }
    return MismatchVector(std::move(t));
}

double predicted_variance(const EkfState& state, const JacobianTable& table, std::uint64_t code, double r) {
    const auto j = table.row_vector(code);
    const double q = j * state.p * j.transpose();
    return std::max(q, 0.0) + r;
}

double gain(const EkfState& state, const JacobianTable& table, std::uint64_t code, double r) {
    const double s = predicted_variance(state, table, code, r);
    return (s - r) / s;
}

namespace {

struct Candidate {
    double value = -1.0;
    std::uint64_t code = 0;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
    return a.value > b.value || (a.value == b.value && a.code < b.code);
}

// The best few candidates by (value desc, code asc). Keeping the top k of a
// union is associative, so any split of the scan yields the same list.
struct Shortlist {
    static constexpr std::size_t kSize = 8;
    std::array<Candidate, kSize> items{};
    std::size_t n = 0;

    [[nodiscard]] bool admits(double v) const { return n < kSize || v >= items[kSize - 1].value; }

    void insert(Candidate c) {
        if (n == kSize && !ranks_before(c, items[kSize - 1])) return;
        std::size_t pos = n < kSize ? n++ : kSize - 1;
        while (pos > 0 && ranks_before(c, items[pos - 1])) {
            items[pos] = items[pos - 1];
            --pos;
        }
        items[pos] = c;
    }

    [[nodiscard]] Candidate best() const { return n > 0 ? items[0] : Candidate{}; }
};

Shortlist merge(Shortlist a, const Shortlist& b) {
    for (std::size_t k = 0; k < b.n; ++k) a.insert(b.items[k]);
    return a;
}

// j_c = G (b - s 1) with G = diag(2^i), b the bits of d = c + 1, s = d / 2^N.
// Hence j P j^T = b'Qb - 2 s r'b + s^2 t with Q = G P G, r = Q 1, t = 1'Q1.
// Splitting b into low and high halves, b'Qb = A_lo + A_hi + 2 X(hi, lo),
// where X is built per high pattern by adding one column sum per low bit.
class QuadraticScan {
public:
    explicit QuadraticScan(const Eigen::MatrixXd& p) : bits_(static_cast<int>(p.rows())) {
        lo_bits_ = bits_ / 2;
        hi_bits_ = bits_ - lo_bits_;
        const int n = bits_;
        q_.resize(n, n);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < n; ++k) {
                q_(i, k) = std::ldexp(p(i, k), i + k);
            }
        }
        row_sum_ = q_.rowwise().sum();
        total_ = row_sum_.sum();
        inv_full_ = std::ldexp(1.0, -n);

        a_lo_ = pattern_quadratic(0, lo_bits_);
        a_hi_ = pattern_quadratic(lo_bits_, hi_bits_);
        b_lo_ = pattern_linear(0, lo_bits_);
        b_hi_ = pattern_linear(lo_bits_, hi_bits_);
    }

    [[nodiscard]] std::uint64_t blocks() const { return std::uint64_t{1} << hi_bits_; }

    // Shortlist of the largest j P j^T among high patterns [first, last).
    Shortlist scan(std::uint64_t first, std::uint64_t last) const {
        const std::uint64_t lo_count = std::uint64_t{1} << lo_bits_;
        std::vector<double> u(static_cast<std::size_t>(lo_bits_));
        std::vector<double> cross(lo_count);
        Shortlist best;
        for (std::uint64_t hi = first; hi < last; ++hi) {
            for (int k = 0; k < lo_bits_; ++k) {
                double acc = 0.0;
                for (int i = 0; i < hi_bits_; ++i) {
                    if ((hi >> i) & 1U) acc += q_(lo_bits_ + i, k);
                }
                u[static_cast<std::size_t>(k)] = acc;
            }
            cross[0] = 0.0;
            for (std::uint64_t lo = 1; lo < lo_count; ++lo) {
                cross[lo] = cross[lo & (lo - 1)] + u[static_cast<std::size_t>(std::countr_zero(lo))];
            }
            const double a_hi = a_hi_[hi];
            const double b_hi = b_hi_[hi];
            for (std::uint64_t lo = 0; lo < lo_count; ++lo) {
                const std::uint64_t d = (hi << lo_bits_) | lo;
                if (d == 0) continue;
                const double s = static_cast<double>(d) * inv_full_;
                double q = a_lo_[lo] + a_hi + 2.0 * cross[lo] - 2.0 * s * (b_lo_[lo] + b_hi) + s * s * total_;
                q = std::max(q, 0.0);
                if (best.admits(q)) {
                    best.insert({q, d - 1});
                }
            }
        }
        return best;
    }

private:
    // Sum of Q over all bit pairs of each pattern in a bit field.
    std::vector<double> pattern_quadratic(int offset, int width) const {
        std::vector<double> out(std::size_t{1} << width, 0.0);
        for (std::uint64_t pat = 1; pat < out.size(); ++pat) {
            double acc = 0.0;
            for (int i = 0; i < width; ++i) {
                if (!((pat >> i) & 1U)) continue;
                for (int k = 0; k < width; ++k) {
                    if ((pat >> k) & 1U) acc += q_(offset + i, offset + k);
                }
            }
            out[pat] = acc;
        }
        return out;
    }

    std::vector<double> pattern_linear(int offset, int width) const {
        std::vector<double> out(std::size_t{1} << width, 0.0);
        for (std::uint64_t pat = 1; pat < out.size(); ++pat) {
            double acc = 0.0;
            for (int i = 0; i < width; ++i) {
                if ((pat >> i) & 1U) acc += row_sum_(offset + i);
            }
            out[pat] = acc;
        }
        return out;
    }

    int bits_;
    int lo_bits_ = 0;
    int hi_bits_ = 0;
    Eigen::MatrixXd q_;
    Eigen::VectorXd row_sum_;
    double total_ = 0.0;
    double inv_full_ = 0.0;
    std::vector<double> a_lo_, a_hi_, b_lo_, b_hi_;
};

void check_dimensions(const EkfState& state, const JacobianTable& table) {
    if (state.bits() != table.bits() || state.p.rows() != table.bits() || state.p.cols() != table.bits()) {
        throw std::invalid_argument("estimator state and Jacobian table disagree on resolution");
    }
}

Shortlist parallel_scan(const QuadraticScan& scan) {
    return tbb::parallel_reduce(
        tbb::blocked_range<std::uint64_t>(0, scan.blocks()), Shortlist{},
        [&](const tbb::blocked_range<std::uint64_t>& range, const Shortlist& acc) {
            return merge(acc, scan.scan(range.begin(), range.end()));
        },
        [](const Shortlist& a, const Shortlist& b) { return merge(a, b); });
}

double quadratic_form(const EkfState& state, const JacobianTable& table, std::uint64_t code) {
    const auto j = table.row_vector(code);
    return std::max(j.dot(state.p * j.transpose()), 0.0);
}

// The scan's closed form loses ~1e-11 relative to cancellation, more than
// separates neighbouring codes under a 1/2^i prior. Re-rank the near-best
// entries with the direct row product.
std::uint64_t refine(const Shortlist& list, const EkfState& state, const JacobianTable& table) {
    const double top = list.best().value;
    const double floor = top - 1e-9 * std::abs(top);
    Candidate best;
    for (std::size_t k = 0; k < list.n; ++k) {
        if (list.items[k].value < floor) continue;
        const Candidate exact{quadratic_form(state, table, list.items[k].code), list.items[k].code};
        if (ranks_before(exact, best)) best = exact;
    }
    return best.code;
}

} // namespace

// Gain q / (q + R) is increasing in q = j P j^T, so ranking by q selects the
// same code without the compression of gains close to 1.
std::uint64_t select_code(const EkfState& state, const JacobianTable& table, double /*r*/) {
    check_dimensions(state, table);
    const QuadraticScan scan(state.p);
    return refine(parallel_scan(scan), state, table);
}

std::uint64_t select_code_partitioned(const EkfState& state, const JacobianTable& table, double /*r*/,
                                      std::size_t partitions) {
    check_dimensions(state, table);
    if (partitions == 0) {
        throw std::invalid_argument("need at least one partition");
    }
    const QuadraticScan scan(state.p);
    const std::uint64_t blocks = scan.blocks();
    Shortlist list;
    for (std::size_t part = 0; part < partitions; ++part) {
        const std::uint64_t first = blocks * part / partitions;
        const std::uint64_t last = blocks * (part + 1) / partitions;
        list = merge(list, scan.scan(first, last));
    }
    return refine(list, state, table);
}

std::uint64_t select_code_bruteforce(const EkfState& state, const JacobianTable& table, double /*r*/) {
    check_dimensions(state, table);
    Candidate best;
    for (std::uint64_t c = 0; c < table.rows(); ++c) {
        const Candidate here{quadratic_form(state, table, c), c};
        if (ranks_before(here, best)) best = here;
    }
    return best.code;
}

UpdateOutcome update(EkfState& state, const Eigen::Ref<const Eigen::RowVectorXd>& j, std::uint64_t code,
                     double innovation, double r, double z) {
    if (j.size() != state.bits() || state.p.rows() != state.bits() || state.p.cols() != state.bits()) {
        throw std::invalid_argument("Jacobian row and estimator state disagree on resolution");
    }
    const Eigen::VectorXd pj = state.p * j.transpose();
    const double q = std::max(j.dot(pj), 0.0);
    const double s = q + r;

    UpdateOutcome out;
    out.s = s;
    out.gain = q / s;
    if (!std::isfinite(innovation) || !(s > 0.0)) {
        ++state.rejected;
        spdlog::error("rejected update at code {}: innovation {} with S {}", code, innovation, s);
        return out;
    }

    const Eigen::VectorXd k = pj / s;
    state.theta_hat += k * innovation;
    state.p.noalias() -= k * pj.transpose();
    state.p = 0.5 * (state.p + state.p.transpose()).eval();

    IterationRecord rec;
    rec.code = code;
    rec.z = z;
    rec.innovation = innovation;
    rec.s = s;
    rec.gain = out.gain;
    rec.nis = innovation * innovation / s;
    state.history.push_back(rec);
    ++state.k;
    out.accepted = true;
    return out;
}

UpdateOutcome update(EkfState& state, const JacobianTable& table, std::uint64_t code, double innovation,
                     double r, double z) {
    check_dimensions(state, table);
    return update(state, table.row_vector(code), code, innovation, r, z);
}

bool inflate_if_needed(EkfState& state, double innovation, double s, double tau, double alpha) {
    const double nis = innovation * innovation / s;
    const bool inflate = nis > tau;
    if (inflate) {
        state.p *= alpha;
        ++state.inflation_count;
    }
    if (!state.history.empty()) {
        state.history.back().nis = nis;
        state.history.back().inflated = inflate;
    }
    return inflate;
}

bool converged(const EkfState& state, double epsilon_p) {
    const QuadraticScan scan(state.p);
    const Candidate worst = parallel_scan(scan).best();
    return std::sqrt(std::max(worst.value, 0.0)) <= epsilon_p;
}

namespace {

// Model edges around `code`, resolved the way the bit-trial search resolves
// them, for the sweep response prediction.
std::vector<double> local_edges(const CdacWeights& cdac, std::uint64_t first, std::uint64_t last) {
    std::vector<double> edges;
    edges.reserve(last - first + 1);
    for (std::uint64_t c = first; c <= last; ++c) {
        edges.push_back(model_edge(cdac, c));
    }
    resolve_sar_edges(edges);
    return edges;
}

} // namespace

SweepPlan plan_for(const EkfState& state, std::uint64_t code, const EkfConfig& config) {
    const CdacWeights cdac(state.estimate());
    const HiResDac dac(state.bits(), config.extra_bits);
    return plan_sweep(code, model_edge(cdac, code), config.half_span, config.samples, dac);
}

double sweep_innovation(const EkfState& state, const SweepPlan& plan, const SweepResult& sweep,
                        const EkfConfig& config) {
    constexpr double kMinSlope = 0.05;
    const std::uint64_t code = plan.target_code;
    const std::uint64_t last_code = (std::uint64_t{1} << state.bits()) - 2;
    const auto window = static_cast<std::uint64_t>(std::ceil(plan.half_span + 6.0 * config.noise_rms)) + 2;
    const std::uint64_t first = code > window ? code - window : 0;
    const std::uint64_t last = std::min(code + window, last_code);

    if (config.innovation == InnovationModel::direct) {
        std::vector<double> ideal;
        for (std::uint64_t c = first; c <= last; ++c) {
            ideal.push_back(plan.center + (static_cast<double>(c) - static_cast<double>(code)));
        }
        const SweepResponse nominal = predict_sweep(plan, ideal, first, config.noise_rms);
        return -sweep.z / std::max(nominal.slope, kMinSlope);
    }

    const CdacWeights cdac(state.estimate());
    const std::vector<double> edges = local_edges(cdac, first, last);
    const SweepResponse expected = predict_sweep(plan, edges, first, config.noise_rms);
    return (expected.expected_z - sweep.z) / std::max(expected.slope, kMinSlope);
}

StepOutcome step(EkfState& state, const SarDevice& device, const JacobianTable& table, const EkfConfig& config,
                 Rng& rng, std::optional<std::uint64_t> preselected) {
    const double r = config.measurement_variance;
    StepOutcome out;
    out.code = preselected ? *preselected : select_code(state, table, r);
    out.plan = plan_for(state, out.code, config);
    out.sweep = execute_sweep(device, out.plan, rng);
    out.innovation = sweep_innovation(state, out.plan, out.sweep, config);
    const UpdateOutcome upd = update(state, table, out.code, out.innovation, r, out.sweep.z);
    out.accepted = upd.accepted;
    if (upd.accepted) {
        inflate_if_needed(state, out.innovation, upd.s, config.nis_threshold, config.inflation);
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

RunResult run(const SarDevice& device, const JacobianTable& table, const EkfConfig& config, Rng& rng,
              const LinearityReport* truth) {
    config.validate();
    if (table.bits() != device.resolution()) {
        throw std::invalid_argument("Jacobian table resolution differs from the device");
    }
    const double r = config.measurement_variance;
    RunResult result;
    result.state = EkfState::initial(device.resolution(), config.sigma_prior);
    EkfState& state = result.state;

    auto timed_select = [&](const EkfState& snapshot) {
        const auto t0 = Clock::now();
        const std::uint64_t code = select_code(snapshot, table, r);
        const double dt = seconds_since(t0);
        result.selection_seconds += dt;
        result.selection_samples.push_back(dt);
        return code;
    };

    std::uint64_t next = config.pipelined ? timed_select(state) : 0;
    for (int it = 0; it < config.max_iterations; ++it) {
        std::uint64_t code = 0;
        SweepPlan plan;
        SweepResult sweep;
        if (config.pipelined) {
            code = next;
            plan = plan_for(state, code, config);
            // Selection for the next iteration reads the covariance as it is
            // now, before this iteration's update.
            const bool more = it + 1 < config.max_iterations;
            const auto t0 = Clock::now();
            auto pending = std::async(std::launch::async, [&] { return execute_sweep(device, plan, rng); });
            if (more) {
                next = timed_select(state);
            }
            sweep = pending.get();
            result.sweep_seconds += seconds_since(t0);
        } else {
            code = timed_select(state);
            plan = plan_for(state, code, config);
            const auto t0 = Clock::now();
            sweep = execute_sweep(device, plan, rng);
            result.sweep_seconds += seconds_since(t0);
        }
        result.conversions += sweep.codes.size();

        const double innovation = sweep_innovation(state, plan, sweep, config);
        const UpdateOutcome upd = update(state, table, code, innovation, r, sweep.z);
        if (!upd.accepted) {
            continue;
        }
        inflate_if_needed(state, innovation, upd.s, config.nis_threshold, config.inflation);

        TracePoint tp;
        tp.iteration = it + 1;
        tp.record = state.history.back();
        if (truth != nullptr) {
            const LinearityReport est = linearity(edges_from_theta(state.estimate()));
            const LinearityDelta d = compare_max(est, *truth);
            tp.delta_inl_max = d.delta_inl_max;
            tp.delta_dnl_max = d.delta_dnl_max;
        }
        result.trace.push_back(tp);

        if (config.epsilon_p > 0.0 && converged(state, config.epsilon_p)) {
            result.converged = true;
            break;
        }
    }
    return result;
}

} // namespace edgeprobe
