#include "stoclock/ou_clock.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stoclock {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kChunk = 256;

struct OUStep {
    double decay;
    double sd;
    OUStep(const OUParams& p, double dt)
        : decay(std::exp(-p.alpha * dt)),
          sd(std::sqrt(-std::expm1(-2.0 * p.alpha * dt) / (2.0 * p.alpha))) {}
};

void check_dt(double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive");
}

struct MeanSe {
    double mean;
    double se;
};

MeanSe mean_se(std::span<const double> xs) {
    const double n = static_cast<double>(xs.size());
    if (xs.empty()) return {0.0, 0.0};
    const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double var = xs.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {m, std::sqrt(var / n)};
}

std::vector<double> log_grid(double lo, double hi, double ratio) {
    std::vector<double> g;
    for (double c = lo; c <= hi * (1.0 + 1e-12); c *= ratio) g.push_back(c);
    return g;
}

// Sums of exp(-lambda tau^{(c)}) for every (lambda, c) in the grid.
struct LevelScan {
    std::vector<double> c_grid;      // ascending
    std::vector<double> sums;        // [lambda][c]
    std::size_t n_paths = 0;
    std::size_t exhausted_top = 0;   // paths not reaching the largest raw level
};

LevelScan scan_levels(const OUParams& params, std::span<const double> lambdas,
                      std::vector<double> c_grid, std::size_t n_paths, std::uint64_t stream,
                      const McOptions& opts) {
    LevelScan out;
    out.c_grid = std::move(c_grid);
    out.n_paths = n_paths;
    const std::size_t nc = out.c_grid.size();
    const std::size_t nl = lambdas.size();

    // Raw levels 1/c ascending means c descending.
    std::vector<double> raw(nc);
    for (std::size_t k = 0; k < nc; ++k) raw[k] = 1.0 / out.c_grid[nc - 1 - k];
    const double spread = out.c_grid.back() / out.c_grid.front();
    const double horizon = clock_horizon(params, opts.horizon_multiple, std::max(1.0, spread));

    const std::size_t chunks = chunk_count(n_paths, kChunk);
    std::vector<std::vector<double>> partial(chunks);
    std::vector<std::size_t> exhausted(chunks, 0);
    parallel_chunks(n_paths, kChunk, opts.threads,
                    [&](std::size_t chunk, std::size_t begin, std::size_t end) {
                        std::vector<double> acc(nl * nc, 0.0);
                        std::vector<double> times(nc);
                        for (std::size_t p = begin; p < end; ++p) {
                            PathRng rng(opts.seed, stream, p);
                            detail::first_passage_levels(params, opts.dt, horizon, opts.estimator,
                                                         opts.occupation_eps(), raw, rng, times);
                            if (std::isinf(times.back())) ++exhausted[chunk];
                            for (std::size_t k = 0; k < nc; ++k) {
                                const double tau = times[nc - 1 - k];  // back to c ascending
                                if (std::isinf(tau)) continue;
                                for (std::size_t l = 0; l < nl; ++l)
                                    acc[l * nc + k] += std::exp(-lambdas[l] * tau);
                            }
                        }
                        partial[chunk] = std::move(acc);
                    });
    out.sums.assign(nl * nc, 0.0);
    for (std::size_t c = 0; c < chunks; ++c) {
        for (std::size_t i = 0; i < out.sums.size(); ++i) out.sums[i] += partial[c][i];
        out.exhausted_top += exhausted[c];
    }
    return out;
}

double objective_at(const LevelScan& scan, std::span<const double> psi, std::size_t k) {
    const std::size_t nc = scan.c_grid.size();
    double obj = 0.0;
    for (std::size_t l = 0; l < psi.size(); ++l) {
        const double m = scan.sums[l * nc + k] / static_cast<double>(scan.n_paths);
        if (!(m > 0.0)) return kInf;
        const double d = std::log(m) + psi[l];
        obj += d * d;
    }
    return obj;
}

std::size_t argmin_objective(const LevelScan& scan, std::span<const double> psi,
                             std::vector<double>* values = nullptr) {
    std::size_t best = 0;
    double best_v = kInf;
    std::vector<double> v(scan.c_grid.size());
    for (std::size_t k = 0; k < scan.c_grid.size(); ++k) {
        v[k] = objective_at(scan, psi, k);
        if (v[k] < best_v) {
            best_v = v[k];
            best = k;
        }
    }
    if (values) *values = std::move(v);
    return best;
}

}  // namespace

const char* to_string(ClockEstimator e) {
    return e == ClockEstimator::tanaka ? "tanaka" : "occupation";
}

ClockEstimator parse_clock_estimator(const std::string& s) {
    if (s == "tanaka") return ClockEstimator::tanaka;
    if (s == "occupation") return ClockEstimator::occupation;
    throw std::invalid_argument("unknown clock estimator '" + s + "' (expected tanaka|occupation)");
}

MCReport make_report(std::string label, double estimate, double std_error, std::size_t n_paths,
                     double target, double bias, double sigma_mult) {
    MCReport r;
    r.label = std::move(label);
    r.estimate = estimate;
    r.std_error = std_error;
    r.n_paths = n_paths;
    r.target = target;
    r.bias_budget = bias;
    r.sigma_mult = sigma_mult;
    r.pass = std::abs(estimate - target) <= r.tolerance();
    return r;
}

double bias_budget(double dt) { return kBiasConstant * std::sqrt(dt); }

double McOptions::occupation_eps() const { return eps > 0.0 ? eps : 4.0 * std::sqrt(dt); }

OUPath simulate_ou(const OUParams& params, double r0, double dt, double horizon,
                   std::uint64_t seed) {
    params.validate();
    check_dt(dt);
    if (!(horizon > 0.0)) throw std::invalid_argument("simulate_ou: horizon must be positive");
    const auto steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
    OUPath path;
    path.dt = dt;
    path.seed = seed;
    path.r.resize(steps + 1);
    path.r[0] = r0;
    const OUStep step(params, dt);
    PathRng rng(seed, streams::ou_path, 0);
    for (std::size_t i = 0; i < steps; ++i)
        path.r[i + 1] = path.r[i] * step.decay + step.sd * rng.normal();
    return path;
}

ClockPath local_time(const OUPath& path, ClockEstimator estimator, double eps, double norm_const) {
    if (estimator == ClockEstimator::occupation && !(eps > 0.0))
        throw std::invalid_argument("local_time: occupation estimator needs eps > 0");
    if (!(norm_const > 0.0)) throw std::invalid_argument("local_time: norm_const must be positive");
    ClockPath clock;
    clock.dt = path.dt;
    clock.estimator = estimator;
    clock.norm_const = norm_const;
    clock.kappa.assign(path.r.size(), 0.0);
    double raw = 0.0;
    for (std::size_t i = 0; i + 1 < path.r.size(); ++i) {
        if (estimator == ClockEstimator::tanaka) {
            raw += detail::tanaka_increment(path.r[i], path.r[i + 1]);
        } else if (std::abs(path.r[i]) < eps) {
            raw += path.dt / (2.0 * eps);
        }
        clock.kappa[i + 1] = norm_const * raw;
    }
    return clock;
}

double inverse_local_time(const ClockPath& clock, double s) {
    if (!(s >= 0.0)) throw std::invalid_argument("inverse_local_time: s must be >= 0");
    const auto it = std::upper_bound(clock.kappa.begin(), clock.kappa.end(), s);
    if (it == clock.kappa.end()) return kInf;
    return static_cast<double>(it - clock.kappa.begin()) * clock.dt;
}

double first_hitting_time(const OUParams& params, double r0, double dt, std::uint64_t seed,
                          double horizon, bool bridge_correction) {
    PathRng rng(seed, streams::hitting, 0);
    params.validate();
    check_dt(dt);
    if (r0 == 0.0) throw std::invalid_argument("first_hitting_time: requires r0 != 0");
    const OUStep step(params, dt);
    const auto max_steps = static_cast<std::size_t>(std::ceil(horizon / dt));
    double r = r0;
    for (std::size_t n = 0; n < max_steps; ++n) {
        const double next = r * step.decay + step.sd * rng.normal();
        if (next == 0.0 || (next > 0) != (r > 0)) return static_cast<double>(n + 1) * dt;
        if (bridge_correction) {
            const double p = std::exp(-2.0 * r * next / (step.sd * step.sd));
            if (rng.uniform() < p) return static_cast<double>(n + 1) * dt;
        }
        r = next;
    }
    return kInf;
}

namespace detail {

std::size_t first_passage_levels(const OUParams& params, double dt, double horizon,
                                 ClockEstimator estimator, double eps,
                                 std::span<const double> raw_levels, PathRng& rng,
                                 std::span<double> out_times) {
    const OUStep step(params, dt);
    const auto max_steps = static_cast<std::size_t>(std::ceil(horizon / dt));
    const std::size_t nl = raw_levels.size();
    std::fill(out_times.begin(), out_times.end(), kInf);
    std::size_t next = 0;
    double r = 0.0;
    double raw = 0.0;
    const double occ_inc = dt / (2.0 * eps);
    std::size_t n = 0;
    while (next < nl && n < max_steps) {
        const double r_next = r * step.decay + step.sd * rng.normal();
        if (estimator == ClockEstimator::tanaka) {
            raw += tanaka_increment(r, r_next);
        } else if (std::abs(r) < eps) {
            raw += occ_inc;
        }
        r = r_next;
        ++n;
        while (next < nl && raw > raw_levels[next]) out_times[next++] = static_cast<double>(n) * dt;
    }
    return n;
}

}  // namespace detail

CalibrationResult calibrate_clock(const OUParams& params, std::span<const double> lambda_grid,
                                  const McOptions& opts, double c_lo, double c_hi) {
    params.validate();
    check_dt(opts.dt);
    if (lambda_grid.empty()) throw std::invalid_argument("calibrate_clock: empty lambda grid");
    for (double l : lambda_grid)
        if (!(l > 0.0) || !std::isfinite(l))
            throw std::invalid_argument("calibrate_clock: lambdas must lie in (0, inf)");
    if (!(c_lo > 0.0 && c_hi > c_lo)) throw std::invalid_argument("calibrate_clock: bad bracket");

    std::vector<double> psi;
    for (double l : lambda_grid) psi.push_back(laplace_exponent(l, params));

    CalibrationResult res;
    res.lambda_grid.assign(lambda_grid.begin(), lambda_grid.end());
    for (double p : psi) res.targets.push_back(-p);

    const std::size_t n_pilot = std::max<std::size_t>(2000, opts.n_paths / 10);
    const LevelScan pilot = scan_levels(params, lambda_grid, log_grid(c_lo, c_hi, 1.005), n_pilot,
                                        streams::calibration_pilot, opts);
    const std::size_t kp = argmin_objective(pilot, psi);
    res.pilot_norm_const = pilot.c_grid[kp];
    if (kp == 0 || kp + 1 == pilot.c_grid.size()) {
        std::ostringstream os;
        os << "calibration failed: objective minimum at bracket edge c=" << pilot.c_grid[kp]
           << " of [" << c_lo << ", " << c_hi << "]";
        res.message = os.str();
        res.norm_const = pilot.c_grid[kp];
        return res;
    }

    const double c1 = pilot.c_grid[kp];
    const LevelScan main = scan_levels(params, lambda_grid, log_grid(c1 / 1.08, c1 * 1.08, 1.0002),
                                       opts.n_paths, streams::calibration_main, opts);
    std::vector<double> obj;
    const std::size_t k = argmin_objective(main, psi, &obj);
    res.n_paths = opts.n_paths;
    if (k == 0 || k + 1 == main.c_grid.size()) {
        std::ostringstream os;
        os << "calibration failed: refined minimum at bracket edge c=" << main.c_grid[k];
        res.message = os.str();
        res.norm_const = main.c_grid[k];
        return res;
    }

    // Parabola through three neighbours in log c.
    const double h = std::log(main.c_grid[k + 1] / main.c_grid[k]);
    const double denom = obj[k - 1] - 2.0 * obj[k] + obj[k + 1];
    double shift = denom > 0.0 ? 0.5 * h * (obj[k - 1] - obj[k + 1]) / denom : 0.0;
    shift = std::clamp(shift, -h, h);
    res.norm_const = main.c_grid[k] * std::exp(shift);
    res.objective = obj[k];

    const std::size_t nc = main.c_grid.size();
    for (std::size_t l = 0; l < lambda_grid.size(); ++l)
        res.log_means.push_back(std::log(main.sums[l * nc + k] / static_cast<double>(main.n_paths)));
    res.exhausted = main.exhausted_top;
    const double frac = static_cast<double>(res.exhausted) / static_cast<double>(opts.n_paths);
    if (frac > opts.max_exhausted_fraction) {
        std::ostringstream os;
        os << "calibration failed: " << res.exhausted << " of " << opts.n_paths
           << " paths exhausted the horizon";
        res.message = os.str();
        return res;
    }
    res.ok = true;
    res.message = "ok";
    return res;
}

bool LaplaceValidation::all_pass() const {
    if (!exhausted_ok || !mean_tau1.pass) return false;
    return std::all_of(rows.begin(), rows.end(), [](const LaplaceRow& r) { return r.report.pass; });
}

LaplaceValidation validate_laplace(const OUParams& params, double norm_const,
                                   std::span<const double> lambda_grid,
                                   std::span<const double> s_grid,
                                   std::span<const double> r0_grid, const McOptions& opts) {
    params.validate();
    check_dt(opts.dt);
    if (!(norm_const > 0.0)) throw std::invalid_argument("validate_laplace: needs a calibrated clock");

    // Clock levels: every s plus s = 1 for the mean of tau_1.
    std::vector<double> levels(s_grid.begin(), s_grid.end());
    for (double s : levels)
        if (!(s > 0.0)) throw std::invalid_argument("validate_laplace: s must be positive");
    levels.push_back(1.0);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::vector<double> raw(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) raw[i] = levels[i] / norm_const;
    const std::size_t idx_one =
        static_cast<std::size_t>(std::find(levels.begin(), levels.end(), 1.0) - levels.begin());

    const double horizon = clock_horizon(params, opts.horizon_multiple, levels.back());
    const std::size_t n = opts.n_paths;
    const std::size_t nl = levels.size();
    std::vector<double> taus(n * nl);
    parallel_chunks(n, kChunk, opts.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            PathRng rng(opts.seed, streams::laplace, p);
            detail::first_passage_levels(params, opts.dt, horizon, opts.estimator,
                                         opts.occupation_eps(), raw, rng,
                                         std::span<double>(taus.data() + p * nl, nl));
        }
    });

    LaplaceValidation out;
    out.n_paths = n;
    for (std::size_t p = 0; p < n; ++p)
        if (std::isinf(taus[p * nl + nl - 1])) ++out.exhausted;
    out.exhausted_ok =
        static_cast<double>(out.exhausted) <= opts.max_exhausted_fraction * static_cast<double>(n);

    const double bias = bias_budget(opts.dt);
    std::vector<double> sample(n);
    for (double lambda : lambda_grid) {
        const double psi = laplace_exponent(lambda, params);
        for (double s : s_grid) {
            const std::size_t li =
                static_cast<std::size_t>(std::find(levels.begin(), levels.end(), s) - levels.begin());
            for (std::size_t p = 0; p < n; ++p) {
                const double tau = taus[p * nl + li];
                sample[p] = std::isinf(tau) ? 0.0 : std::exp(-lambda * tau);
            }
            const MeanSe ms = mean_se(sample);
            std::ostringstream label;
            label << "E[exp(-" << lambda << " tau_" << s << ")]";
            out.rows.push_back({"tau", lambda, s, 0.0,
                                make_report(label.str(), ms.mean, ms.se, n, std::exp(-s * psi), bias)});
        }
    }
    // Censored paths are counted in exhausted, not in the mean.
    sample.clear();
    for (std::size_t p = 0; p < n; ++p)
        if (std::isfinite(taus[p * nl + idx_one])) sample.push_back(taus[p * nl + idx_one]);
    const MeanSe mt = mean_se(sample);
    const double target = mean_inverse_local_time();
    out.mean_tau1 = make_report("E[tau_1]", mt.mean, mt.se, sample.size(), target, 0.02 * target, 0.0);

    for (double lambda : lambda_grid) {
        for (double r0 : r0_grid) {
            McOptions o = opts;
            MCReport rep = hitting_laplace_mc(params, lambda, r0, o);
            out.rows.push_back({"hitting", lambda, 0.0, r0, rep});
        }
    }
    return out;
}

double clock_horizon(const OUParams& params, double horizon_multiple, double level) {
    return horizon_multiple * mean_inverse_local_time() * level * std::max(1.0, 1.0 / params.alpha);
}

MCReport hitting_laplace_mc(const OUParams& params, double lambda, double r0,
                            const McOptions& opts, bool bridge_correction,
                            HittingArgument target_form) {
    params.validate();
    check_dt(opts.dt);
    if (r0 == 0.0) throw std::invalid_argument("hitting_laplace_mc: requires r0 != 0");
    const OUStep step(params, opts.dt);
    const double horizon = clock_horizon(params, opts.horizon_multiple, 1.0 + std::abs(r0));
    const auto max_steps = static_cast<std::size_t>(std::ceil(horizon / opts.dt));
    const std::size_t n = opts.n_paths;
    std::vector<double> sample(n);
    // Streams are keyed by the start point so different r0 use disjoint paths.
    const std::uint64_t stream =
        streams::hitting ^ (static_cast<std::uint64_t>(std::llround(std::abs(r0) * 1e6)) << 8);
    parallel_chunks(n, kChunk, opts.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            PathRng rng(opts.seed, stream, p);
            double r = r0;
            double hit = kInf;
            for (std::size_t k = 0; k < max_steps; ++k) {
                const double next = r * step.decay + step.sd * rng.normal();
                if (next == 0.0 || (next > 0) != (r > 0)) {
                    hit = static_cast<double>(k + 1) * opts.dt;
                    break;
                }
                if (bridge_correction &&
                    rng.uniform() < std::exp(-2.0 * r * next / (step.sd * step.sd))) {
                    hit = static_cast<double>(k + 1) * opts.dt;
                    break;
                }
                r = next;
            }
            sample[p] = std::isinf(hit) ? 0.0 : std::exp(-lambda * hit);
        }
    });
    const MeanSe ms = mean_se(sample);
    std::ostringstream label;
    label << "E[exp(-" << lambda << " T_0) | R_0=" << r0 << "]";
    return make_report(label.str(), ms.mean, ms.se, n,
                       hitting_transform(lambda, r0, params, target_form), bias_budget(opts.dt));
}

TauMoments mean_inverse_local_time_mc(const OUParams& params, double norm_const, double s,
                                      const McOptions& opts) {
    params.validate();
    const double raw = s / norm_const;
    const double horizon = clock_horizon(params, opts.horizon_multiple, s);
    std::vector<double> sample(opts.n_paths);
    parallel_chunks(opts.n_paths, kChunk, opts.threads,
                    [&](std::size_t, std::size_t begin, std::size_t end) {
                        double t = 0.0;
                        for (std::size_t p = begin; p < end; ++p) {
                            PathRng rng(opts.seed, streams::laplace, p);
                            detail::first_passage_levels(params, opts.dt, horizon, opts.estimator,
                                                         opts.occupation_eps(),
                                                         std::span<const double>(&raw, 1), rng,
                                                         std::span<double>(&t, 1));
                            sample[p] = t;
                        }
                    });
    TauMoments m;
    for (double& t : sample)
        if (std::isinf(t)) {
            ++m.exhausted;
            t = horizon;
        }
    const MeanSe ms = mean_se(sample);
    m.mean = ms.mean;
    m.std_error = ms.se;
    return m;
}

}  // namespace stoclock
