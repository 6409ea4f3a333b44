#include "stoclock/logou_strategy.hpp"

#include "stoclock/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace stoclock {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kChunk = 128;
constexpr std::array<double, 3> kCalibrationLambdas = {0.5, 1.0, 2.0};

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(double sum, double sum_sq, std::size_t n) {
    if (n == 0) return {kNaN, kNaN};
    const double dn = static_cast<double>(n);
    const double mean = sum / dn;
    const double var = n > 1 ? std::max(0.0, (sum_sq - dn * mean * mean) / (dn - 1.0)) : 0.0;
    return {mean, std::sqrt(var / dn)};
}

// Fraction of wealth left after the consumption feedback with rate multiplier
// m runs over the clock increment [kappa, kappa + dk], integrated exactly:
// ((e^{(u-dk) psi} - 1) / (e^{u psi} - 1))^m with u = 1 - kappa.
double consumption_fraction(double u, double dk, double psi, double m) {
    const double log_ratio = std::log1p(std::exp(u * psi) * std::expm1(-dk * psi) / std::expm1(u * psi));
    return -std::expm1(m * log_ratio);
}

struct SpecConst {
    const NuTable* table = nullptr;
    double nu_scale = 1.0;
    double m = 1.0;
};

struct SpecState {
    double X = 0.0;
    double logZ = 0.0;
    double sum_zc = 0.0;
    double utility = 0.0;
    double foc_num = 0.0;
    double foc_den = 0.0;
    double max_nu = 0.0;
    double last_c = 0.0;  // consumption density of the latest step
    bool bankrupt = false;
};

struct Engine {
    StrategyConfig cfg;
    double theta = 0.0, rho_c = 0.0, sqdt = 0.0, decay = 0.0, ou_scale = 0.0, s_drift = 0.0;
    double psi = 0.0, y = 0.0, c_star = 0.0;
    std::size_t max_steps = 0;
    std::vector<std::size_t> cp_index;
    NuTable derived, literal;
    std::vector<SpecConst> specs;

    Engine(const StrategyConfig& c, const std::vector<StrategySpec>& in) : cfg(c) {
        cfg.validate();
        const NoArbitrageCheck na = noarb_check(cfg.market, cfg.ou);
        if (!na.ok) throw ArbitrageRefused(na.message);
        const double a = cfg.ou.alpha, dt = cfg.dt;
        theta = cfg.market.theta();
        rho_c = std::sqrt(1.0 - cfg.market.rho * cfg.market.rho);
        sqdt = std::sqrt(dt);
        decay = std::exp(-a * dt);
        ou_scale = std::sqrt(-std::expm1(-2.0 * a * dt) / (2.0 * a * dt));
        s_drift = (cfg.market.mu - 0.5 * cfg.market.sigma * cfg.market.sigma) * dt;
        psi = laplace_exponent(cfg.beta, cfg.ou);
        y = calibrate_y(cfg.x, cfg.beta, cfg.ou);
        c_star = strategy_norm_const(cfg);
        max_steps = static_cast<std::size_t>(
            std::ceil(clock_horizon(cfg.ou, cfg.horizon_multiple, 1.0) / dt));
        for (double t : cfg.checkpoints) cp_index.push_back(static_cast<std::size_t>(std::llround(t / dt)));
        derived = NuTable(cfg.beta, cfg.ou, NuVariant::derived);
        literal = NuTable(cfg.beta, cfg.ou, NuVariant::literal);
        const double m_literal = -std::expm1(-psi) / psi;
        for (const StrategySpec& s : in) {
            if (!(s.consumption_scale > 0.0))
                throw std::invalid_argument("strategy '" + s.name + "': consumption_scale must be > 0");
            specs.push_back({s.nu == NuVariant::derived ? &derived : &literal, s.nu_scale,
                             s.consumption_scale * (s.rule == ConsumptionRule::derived ? 1.0 : m_literal)});
        }
    }

    struct Snapshot {
        double M, X, Z;
    };

    // Runs one path. on_step(k, t, R, kappa, S, states) after every step,
    // on_checkpoint(j, states) when checkpoint j is reached or the path ends.
    // Returns true when the clock reached 1 within the horizon.
    template <class OnStep, class OnCheckpoint>
    bool run(std::size_t path, std::vector<SpecState>& st, OnStep&& on_step, OnCheckpoint&& on_cp) const {
        PathRng rng(cfg.seed, streams::strategy, path);
        const double rho = cfg.market.rho, sigma = cfg.market.sigma, beta = cfg.beta, dt = cfg.dt;
        st.assign(specs.size(), SpecState{});
        for (auto& s : st) s.X = cfg.x;
        double R = 0.0, kappa = 0.0, t = 0.0;
        std::size_t next_cp = 0;
        for (std::size_t k = 0; k < max_steps; ++k) {
            const double dB = sqdt * rng.normal();
            const double dW = rho * dB + rho_c * sqdt * rng.normal();
            const double Rn = R * decay + dW * ou_scale;
            double dk = c_star * detail::tanaka_increment(R, Rn);
            bool last = false;
            if (kappa + dk >= 1.0) {
                dk = 1.0 - kappa;
                last = true;
            }
            const double s_ratio = std::exp(s_drift + sigma * dB);
            const double tn = t + dt;
            const double disc = std::exp(-beta * tn);
            const double nu_d = derived(R), nu_l = literal(R);
            for (std::size_t i = 0; i < specs.size(); ++i) {
                const SpecConst& sc = specs[i];
                SpecState& s = st[i];
                const double nu = sc.nu_scale * (sc.table == &derived ? nu_d : nu_l);
                const double a = theta + rho * nu;
                s.max_nu = std::max(s.max_nu, std::abs(nu));
                double x_pre = s.X * (1.0 + a / sigma * (s_ratio - 1.0));
                if (!(x_pre > 0.0)) {
                    x_pre = 0.0;
                    s.bankrupt = true;
                }
                s.logZ += nu * dW - a * dB - 0.5 * (nu * nu + a * a - 2.0 * rho * nu * a) * dt;
                double C = 0.0;
                s.last_c = 0.0;
                if (dk > 0.0) {
                    C = last ? x_pre : x_pre * consumption_fraction(1.0 - kappa, dk, psi, sc.m);
                    const double Z = y * std::exp(s.logZ);
                    if (C > 0.0) {
                        const double c = C / dk;
                        s.last_c = c;
                        s.utility += disc * std::log(c) * dk;
                        s.foc_num += dk * std::abs(Z * c / disc - 1.0);
                        s.foc_den += dk;
                    } else {
                        s.utility = -kInf;
                    }
                    s.sum_zc += Z * C;
                }
                s.X = x_pre - C;
            }
            kappa += dk;
            R = Rn;
            t = tn;
            on_step(k, t, R, kappa, s_ratio, st);
            while (next_cp < cp_index.size() && (cp_index[next_cp] == k + 1 || last)) on_cp(next_cp++, st);
            if (last) return true;
        }
        return false;
    }

    Snapshot snapshot(const SpecState& s) const {
        const double Z = y * std::exp(s.logZ);
        return {s.X * Z + s.sum_zc, s.X, Z};
    }
};

struct ChunkAcc {
    std::size_t valid = 0, discarded = 0;
    // per spec
    std::vector<double> x_sum, x_sq, u_sum, u_sq, foc_num, foc_den, max_nu;
    std::vector<std::size_t> bankrupt;
    // per spec x checkpoint
    std::vector<double> m_sum, m_sq, xc_sum, zc_sum;

    ChunkAcc(std::size_t ns, std::size_t nc)
        : x_sum(ns), x_sq(ns), u_sum(ns), u_sq(ns), foc_num(ns), foc_den(ns), max_nu(ns),
          bankrupt(ns), m_sum(ns * nc), m_sq(ns * nc), xc_sum(ns * nc), zc_sum(ns * nc) {}
};

}  // namespace

void MarketParams::validate() const {
    if (!std::isfinite(mu)) throw std::invalid_argument("market: mu must be finite");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("market: sigma must be > 0");
    if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("market: rho must lie in (-1, 1)");
    if (!(s0 > 0.0)) throw std::invalid_argument("market: s0 must be > 0");
}

NoArbitrageCheck noarb_check(const MarketParams& market, const OUParams& ou) {
    market.validate();
    ou.validate();
    NoArbitrageCheck out;
    out.alpha = ou.alpha;
    out.theta = market.theta();
    out.threshold = 0.5 * out.theta * out.theta;
    out.ok = ou.alpha > out.threshold;
    std::ostringstream os;
    os.precision(12);
    if (out.ok) {
        out.psi_value = out.theta == 0.0 ? 0.0 : laplace_exponent(-out.threshold, ou);
        out.novikov = std::exp(-out.psi_value);
        os << "alpha = " << ou.alpha << " > theta^2/2 = " << out.threshold
           << ": no arbitrage on [0, tau_1]; E[exp(theta^2 tau_1/2)] = exp(-psi(-theta^2/2)) = " << out.novikov;
    } else {
        out.psi_value = kNaN;
        out.novikov = kInf;
        os << "simulation refused: alpha = " << ou.alpha << " <= theta^2/2 = " << out.threshold
           << "; the market is free of arbitrage on [0, tau_1] only when alpha > theta^2/2"
           << " (Novikov's condition E[exp(theta^2 tau_1/2)] < inf fails)";
    }
    out.message = os.str();
    return out;
}

MCReport novikov_mc(const MarketParams& market, const OUParams& ou, double norm_const, const McOptions& opts) {
    const NoArbitrageCheck na = noarb_check(market, ou);
    if (!na.ok) throw ArbitrageRefused(na.message);
    if (!(norm_const > 0.0)) throw std::invalid_argument("novikov_mc: norm_const must be > 0");
    const double half = na.threshold;
    const double horizon = clock_horizon(ou, opts.horizon_multiple, 1.0);
    const std::size_t nchunks = chunk_count(opts.n_paths, kChunk);
    std::vector<std::array<double, 3>> part(nchunks, {0.0, 0.0, 0.0});
    const double raw = 1.0 / norm_const;
    parallel_chunks(opts.n_paths, kChunk, opts.threads, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        std::array<double, 3> acc{0.0, 0.0, 0.0};
        double tau = 0.0;
        for (std::size_t p = b; p < e; ++p) {
            PathRng rng(opts.seed, streams::novikov, p);
            detail::first_passage_levels(ou, opts.dt, horizon, opts.estimator, opts.occupation_eps(),
                                         std::span<const double>(&raw, 1), rng, std::span<double>(&tau, 1));
            if (std::isinf(tau)) continue;
            const double v = std::exp(half * tau);
            acc[0] += v;
            acc[1] += v * v;
            acc[2] += 1.0;
        }
        part[chunk] = acc;
    });
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (const auto& a : part) {
        s += a[0];
        s2 += a[1];
        n += a[2];
    }
    const MeanSe ms = mean_se(s, s2, static_cast<std::size_t>(n));
    return make_report("E[exp(theta^2 tau_1/2)]", ms.mean, ms.se, static_cast<std::size_t>(n), na.novikov,
                       bias_budget(opts.dt) * na.novikov);
}

double calibrate_y(double x, double beta, const OUParams& ou) {
    if (!(x > 0.0)) throw std::invalid_argument("calibrate_y: x must be > 0");
    if (!(beta > 0.0)) throw std::invalid_argument("calibrate_y: beta must be > 0");
    const double psi = laplace_exponent(beta, ou);
    return -std::expm1(-psi) / (x * psi);
}

double utility_bound(double theta) {
    return 0.5 * (theta + (theta * theta + 1.0) * mean_inverse_local_time());
}

const char* to_string(ConsumptionRule r) { return r == ConsumptionRule::derived ? "derived" : "literal"; }

ConsumptionRule parse_consumption_rule(const std::string& s) {
    if (s == "derived") return ConsumptionRule::derived;
    if (s == "literal") return ConsumptionRule::literal;
    throw std::invalid_argument("consumption rule must be \"derived\" or \"literal\", got \"" + s + "\"");
}

void StrategyConfig::validate() const {
    market.validate();
    ou.validate();
    if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("x must be > 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be > 0");
    if (!(dt > 0.0 && dt <= 0.1)) throw std::invalid_argument("dt must lie in (0, 0.1]");
    if (n_paths == 0) throw std::invalid_argument("paths must be > 0");
    if (!(norm_const >= 0.0)) throw std::invalid_argument("norm_const must be >= 0");
    if (norm_const == 0.0 && calibration_paths == 0) throw std::invalid_argument("calibration_paths must be > 0");
    if (!(horizon_multiple > 0.0)) throw std::invalid_argument("horizon_multiple must be > 0");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (!(checkpoints[i] > 0.0)) throw std::invalid_argument("checkpoints must be > 0");
        if (i > 0 && !(checkpoints[i] > checkpoints[i - 1]))
            throw std::invalid_argument("checkpoints must be increasing");
    }
}

double strategy_norm_const(const StrategyConfig& cfg) {
    if (cfg.norm_const > 0.0) return cfg.norm_const;
    McOptions o;
    o.n_paths = cfg.calibration_paths;
    o.dt = cfg.dt;
    o.seed = cfg.seed;
    o.threads = cfg.threads;
    o.horizon_multiple = cfg.horizon_multiple;
    const CalibrationResult c = calibrate_clock(cfg.ou, kCalibrationLambdas, o);
    if (!c.ok) throw std::runtime_error("clock calibration failed: " + c.message);
    return c.norm_const;
}

bool StrategySummary::flat_pass() const {
    return std::all_of(martingale.begin(), martingale.end(), [](const MCReport& r) { return r.pass; });
}

PairedDifference EnsembleResult::difference(std::size_t a, std::size_t b) const {
    const auto& ua = path_utility.at(a);
    const auto& ub = path_utility.at(b);
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < ua.size(); ++p) {
        if (std::isnan(ua[p]) || std::isnan(ub[p])) continue;
        if (std::isinf(ua[p]) || std::isinf(ub[p])) {
            if (ua[p] == ub[p]) continue;
            return {ua[p] > ub[p] ? kInf : -kInf, 0.0};
        }
        const double d = ua[p] - ub[p];
        s += d;
        s2 += d * d;
        ++n;
    }
    const MeanSe ms = mean_se(s, s2, n);
    return {ms.mean, ms.se};
}

EnsembleResult simulate_strategies(const StrategyConfig& cfg, const std::vector<StrategySpec>& specs) {
    if (specs.empty()) throw std::invalid_argument("simulate_strategies: no strategies");
    const Engine eng(cfg, specs);
    const std::size_t ns = specs.size(), nc = cfg.checkpoints.size(), n = cfg.n_paths;
    EnsembleResult out;
    out.path_utility.assign(ns, std::vector<double>(n, kNaN));
    std::vector<ChunkAcc> parts(chunk_count(n, kChunk), ChunkAcc(ns, nc));

    parallel_chunks(n, kChunk, cfg.threads, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        ChunkAcc& acc = parts[chunk];
        std::vector<SpecState> st;
        std::vector<Engine::Snapshot> cps(ns * nc);
        for (std::size_t p = b; p < e; ++p) {
            const bool done = eng.run(
                p, st, [](std::size_t, double, double, double, double, const std::vector<SpecState>&) {},
                [&](std::size_t j, const std::vector<SpecState>& s) {
                    for (std::size_t i = 0; i < ns; ++i) cps[i * nc + j] = eng.snapshot(s[i]);
                });
            if (!done) {
                ++acc.discarded;
                continue;
            }
            ++acc.valid;
            for (std::size_t i = 0; i < ns; ++i) {
                const SpecState& s = st[i];
                acc.x_sum[i] += s.X;
                acc.x_sq[i] += s.X * s.X;
                acc.u_sum[i] += s.utility;
                acc.u_sq[i] += s.utility * s.utility;
                acc.foc_num[i] += s.foc_num;
                acc.foc_den[i] += s.foc_den;
                acc.max_nu[i] = std::max(acc.max_nu[i], s.max_nu);
                acc.bankrupt[i] += s.bankrupt ? 1 : 0;
                out.path_utility[i][p] = s.utility;
                for (std::size_t j = 0; j < nc; ++j) {
                    const Engine::Snapshot& c = cps[i * nc + j];
                    acc.m_sum[i * nc + j] += c.M;
                    acc.m_sq[i * nc + j] += c.M * c.M;
                    acc.xc_sum[i * nc + j] += c.X;
                    acc.zc_sum[i * nc + j] += c.Z;
                }
            }
        }
    });

    ChunkAcc tot(ns, nc);
    for (const ChunkAcc& a : parts) {
        tot.valid += a.valid;
        tot.discarded += a.discarded;
        for (std::size_t i = 0; i < ns; ++i) {
            tot.x_sum[i] += a.x_sum[i];
            tot.x_sq[i] += a.x_sq[i];
            tot.u_sum[i] += a.u_sum[i];
            tot.u_sq[i] += a.u_sq[i];
            tot.foc_num[i] += a.foc_num[i];
            tot.foc_den[i] += a.foc_den[i];
            tot.max_nu[i] = std::max(tot.max_nu[i], a.max_nu[i]);
            tot.bankrupt[i] += a.bankrupt[i];
        }
        for (std::size_t k = 0; k < ns * nc; ++k) {
            tot.m_sum[k] += a.m_sum[k];
            tot.m_sq[k] += a.m_sq[k];
            tot.xc_sum[k] += a.xc_sum[k];
            tot.zc_sum[k] += a.zc_sum[k];
        }
    }

    out.x = cfg.x;
    out.y = eng.y;
    out.psi_beta = eng.psi;
    out.norm_const = eng.c_star;
    out.nu_bound = eng.derived.sup_abs();
    out.dt = cfg.dt;
    out.n_paths = n;
    out.discarded = tot.discarded;
    out.discarded_ok = static_cast<double>(tot.discarded) < 1e-3 * static_cast<double>(n);
    out.checkpoints = cfg.checkpoints;
    const double bias = bias_budget(cfg.dt);
    const double xy = cfg.x * eng.y;
    for (std::size_t i = 0; i < ns; ++i) {
        StrategySummary s;
        s.spec = specs[i];
        const MeanSe xt = mean_se(tot.x_sum[i], tot.x_sq[i], tot.valid);
        s.terminal_wealth = make_report(specs[i].name + ": E[X_tau1]", xt.mean, xt.se, tot.valid, 0.0, bias);
        for (std::size_t j = 0; j < nc; ++j) {
            const std::size_t k = i * nc + j;
            const MeanSe m = mean_se(tot.m_sum[k], tot.m_sq[k], tot.valid);
            std::ostringstream label;
            label << specs[i].name << ": E[M_t] t=" << cfg.checkpoints[j];
            s.martingale.push_back(make_report(label.str(), m.mean, m.se, tot.valid, xy, 0.0));
            const double dn = static_cast<double>(tot.valid);
            s.mean_wealth.push_back(tot.xc_sum[k] / dn);
            s.mean_dual.push_back(tot.zc_sum[k] / dn);
        }
        const MeanSe u = mean_se(tot.u_sum[i], tot.u_sq[i], tot.valid);
        s.utility = u.mean;
        s.utility_se = std::isfinite(u.mean) ? u.se : kNaN;
        s.foc_residual = tot.foc_den[i] > 0.0 ? tot.foc_num[i] / tot.foc_den[i] : kNaN;
        s.max_abs_nu = tot.max_nu[i];
        s.bankrupt_paths = tot.bankrupt[i];
        out.strategies.push_back(std::move(s));
    }
    return out;
}

EnsembleResult simulate_optimal(const StrategyConfig& cfg, NuVariant nu, ConsumptionRule rule) {
    StrategySpec s;
    s.name = std::string("nu=") + to_string(nu) + ",c=" + to_string(rule);
    s.nu = nu;
    s.rule = rule;
    return simulate_strategies(cfg, {s});
}

StrategyPath simulate_path(const StrategyConfig& cfg, const StrategySpec& spec, std::size_t path_index) {
    const Engine eng(cfg, {spec});
    StrategyPath out;
    std::vector<SpecState> st;
    const auto record = [&](double t, double S, double R, double kappa, const SpecState& s) {
        const double Z = eng.y * std::exp(s.logZ);
        const double nu = spec.nu_scale * (spec.nu == NuVariant::derived ? eng.derived(R) : eng.literal(R));
        out.t.push_back(t);
        out.S.push_back(S);
        out.R.push_back(R);
        out.kappa.push_back(kappa);
        out.Z.push_back(Z);
        out.X.push_back(s.X);
        out.pi.push_back(s.X * (eng.theta + cfg.market.rho * nu) / (cfg.market.sigma * S));
        out.M.push_back(s.X * Z + s.sum_zc);
    };
    SpecState init;
    init.X = cfg.x;
    record(0.0, cfg.market.s0, 0.0, 0.0, init);
    out.c.push_back(0.0);
    double S = cfg.market.s0;
    out.completed = eng.run(
        path_index, st,
        [&](std::size_t, double t, double R, double kappa, double s_ratio, const std::vector<SpecState>& s) {
            S *= s_ratio;
            out.c.push_back(s[0].last_c);
            record(t, S, R, kappa, s[0]);
        },
        [](std::size_t, const std::vector<SpecState>&) {});
    out.tau1 = out.completed ? out.t.back() : kInf;
    return out;
}

Discrimination discriminate(const StrategyConfig& cfg) {
    std::vector<StrategySpec> specs;
    for (NuVariant nu : {NuVariant::derived, NuVariant::literal})
        for (ConsumptionRule r : {ConsumptionRule::derived, ConsumptionRule::literal}) {
            StrategySpec s;
            s.name = std::string("nu=") + to_string(nu) + ",c=" + to_string(r);
            s.nu = nu;
            s.rule = r;
            specs.push_back(s);
        }
    Discrimination d;
    d.ensemble = simulate_strategies(cfg, specs);
    const auto& st = d.ensemble.strategies;
    for (std::size_t i = 0; i < st.size(); ++i)
        if (st[i].saturation_pass() && st[i].flat_pass()) d.passing.push_back(i);
    d.exactly_one = d.passing.size() == 1;
    std::vector<std::size_t> pool = d.passing;
    if (pool.empty())
        for (std::size_t i = 0; i < st.size(); ++i) pool.push_back(i);
    d.winner = *std::max_element(pool.begin(), pool.end(),
                                 [&](std::size_t a, std::size_t b) { return st[a].utility < st[b].utility; });
    d.foc_best = 0;
    for (std::size_t i = 1; i < st.size(); ++i)
        if (st[i].foc_residual < st[d.foc_best].foc_residual) d.foc_best = i;
    std::ostringstream os;
    os << d.passing.size() << " of " << st.size() << " pairs pass saturation and flatness";
    if (!d.exactly_one) os << " (expected exactly one)";
    os << "; highest utility among " << (d.passing.empty() ? "all" : "passing") << ": " << st[d.winner].spec.name
       << "; smallest first-order-condition residual: " << st[d.foc_best].spec.name;
    d.message = os.str();
    return d;
}

DominanceResult dominance_test(const StrategyConfig& cfg, NuVariant nu, ConsumptionRule rule) {
    StrategySpec opt;
    opt.name = "optimal";
    opt.nu = nu;
    opt.rule = rule;
    std::vector<StrategySpec> specs{opt};
    auto add = [&](const std::string& name, double nu_scale, double c_scale) {
        StrategySpec s = opt;
        s.name = name;
        s.nu_scale = nu_scale;
        s.consumption_scale = c_scale;
        specs.push_back(s);
    };
    add("nu=0", 0.0, 1.0);
    add("consumption x0.8", 1.0, 0.8);
    add("consumption x1.25", 1.0, 1.25);
    add("nu opposite sign", -1.0, 1.0);
    DominanceResult res;
    res.ensemble = simulate_strategies(cfg, specs);
    const auto& st = res.ensemble.strategies;
    for (std::size_t i = 1; i < st.size(); ++i) {
        DominanceRow r;
        r.name = st[i].spec.name;
        r.utility = st[i].utility;
        r.utility_se = st[i].utility_se;
        r.advantage = res.ensemble.difference(0, i);
        r.bankrupt_fraction = static_cast<double>(st[i].bankrupt_paths) / static_cast<double>(cfg.n_paths);
        r.dominated = r.advantage.mean > 0.0;
        r.within_3se = r.advantage.mean >= -3.0 * r.advantage.std_error;
        r.tie = std::abs(r.advantage.mean) <= 3.0 * r.advantage.std_error;
        res.rows.push_back(r);
    }
    return res;
}

MCReport utility_bound_check(const StrategyConfig& cfg) {
    const EnsembleResult e = simulate_optimal(cfg, NuVariant::derived, ConsumptionRule::derived);
    const StrategySummary& s = e.strategies.front();
    const double bound = utility_bound(cfg.market.theta());
    MCReport r = make_report("u(x) - x", s.utility - cfg.x, s.utility_se, e.n_paths - e.discarded, bound, 0.0);
    r.pass = std::isfinite(r.estimate) && r.estimate <= bound + 3.0 * r.std_error;
    return r;
}

}  // namespace stoclock
