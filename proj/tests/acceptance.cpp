// Acceptance run: one PASS/FAIL line per criterion. Optional arguments pick
// a subset, e.g. `acceptance 1 4 5`.

#include "stoclock/cli.hpp"
#include "stoclock/finite_market.hpp"
#include "stoclock/logou_strategy.hpp"
#include "stoclock/ou_clock.hpp"
#include "stoclock/specfun.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace stoclock;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and run sizes.
constexpr double kHermiteTol = 1e-8;
constexpr double kDerivRelTol = 1e-6;
constexpr double kPsiSlopeTol = 1e-3;
constexpr double kJOriginTol = 1e-10;
constexpr double kSpecfunSeconds = 5.0;

constexpr std::size_t kLaplaceCalibPaths = 50000;
constexpr std::size_t kLaplacePaths = 200000;
constexpr double kLaplaceDt = 1e-4;
constexpr double kMeanTauRel = 0.02;
constexpr double kLaplaceSeconds = 15.0 * 60.0;

constexpr std::size_t kHittingPaths = 100000;
constexpr double kHittingDt = 1e-4;

constexpr double kBinomialU = 0.0588915;
constexpr double kBinomialV = -0.9411085;
constexpr double kBinomialTol = 1e-6;
constexpr double kConjugacyTol = 1e-6;
constexpr double kBinomialSeconds = 1.0;

constexpr double kGapTol = 1e-5;
constexpr double kCHatTol = 1e-7;
constexpr double kSaturationTol = 1e-8;
constexpr double kTrinomialSeconds = 30.0;

constexpr double kInfeasibleOffset = 0.01;

constexpr std::size_t kStrategyPaths = 50000;
constexpr double kStrategyDt = 5e-4;
constexpr double kDiscriminateSeconds = 20.0 * 60.0;

std::string data(const std::string& name) { return std::string(STOCLOCK_DATA_DIR) + "/" + name; }
std::string config(const std::string& name) { return std::string(STOCLOCK_CONFIG_DIR) + "/" + name; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

StrategyConfig strategy_config(const std::string& file) {
    StrategyConfig c = cli::parse_strategy_config(slurp(config(file)));
    c.n_paths = kStrategyPaths;
    c.dt = kStrategyDt;
    return c;
}

// One clock calibration shared by criteria 7 to 9.
double shared_norm_const() {
    static double c = 0.0;
    if (c == 0.0) c = strategy_norm_const(strategy_config("discriminate.json"));
    return c;
}

Outcome special_functions() {
    Timer t;
    double herr = 0.0;
    for (int i = 0; i <= 200; ++i) {
        const double x = 5.0 * i / 200.0;
        const double exact = std::exp(x * x) * std::sqrt(std::numbers::pi) / 2.0 * std::erfc(x);
        herr = std::max(herr, std::abs(hermite_h(-1.0, x) - exact));
    }
    double derr = 0.0;
    const double h = 1e-4;
    for (double xi : {-0.25, -0.5, -1.0, -1.5, -2.5})
        for (double x : {0.1, 0.5, 1.0, 2.0, 3.5}) {
            const double fd = (hermite_h(xi, x + h) - hermite_h(xi, x - h)) / (2.0 * h);
            derr = std::max(derr, std::abs(hermite_h_dx(xi, x) - fd) / std::abs(fd));
        }
    const double slope_err = std::abs(laplace_exponent(1e-4, OUParams{1.0}) / 1e-4 - std::sqrt(2.0 * std::numbers::pi));
    double jerr = 0.0;
    for (double alpha : {0.5, 1.0, 2.0})
        for (double lambda : {0.5, 1.0, 2.0}) jerr = std::max(jerr, std::abs(hitting_transform(lambda, 0.0, OUParams{alpha}) - 1.0));
    const double secs = t.seconds();
    Outcome o;
    o.pass = herr <= kHermiteTol && derr <= kDerivRelTol && slope_err <= kPsiSlopeTol && jerr <= kJOriginTol &&
             secs < kSpecfunSeconds;
    o.detail = "H_{-1} err " + fmt("%.2e", herr) + ", derivative rel err " + fmt("%.2e", derr) +
               ", psi slope err " + fmt("%.2e", slope_err) + ", |j(l,0)-1| " + fmt("%.1e", jerr) + ", " +
               fmt("%.2f", secs) + " s";
    return o;
}

Outcome laplace_validation() {
    Timer t;
    const std::vector<double> lambdas = {0.5, 1.0, 2.0}, s_grid = {1.0}, no_r0;
    bool ok = true;
    std::ostringstream d;
    for (double alpha : {0.5, 1.0, 2.0}) {
        McOptions o;
        o.dt = kLaplaceDt;
        o.seed = 2024;
        o.n_paths = kLaplaceCalibPaths;
        const CalibrationResult cal = calibrate_clock(OUParams{alpha}, lambdas, o, 0.3, 2.0);
        if (!cal.ok) {
            ok = false;
            d << "alpha=" << alpha << ": " << cal.message << "; ";
            continue;
        }
        o.n_paths = kLaplacePaths;
        const LaplaceValidation v = validate_laplace(OUParams{alpha}, cal.norm_const, lambdas, s_grid, no_r0, o);
        double worst = 0.0;
        bool rows_ok = v.exhausted_ok;
        for (const auto& row : v.rows) {
            rows_ok = rows_ok && row.report.pass;
            worst = std::max(worst, std::abs(row.report.estimate - row.report.target) / row.report.tolerance());
        }
        const double rel = std::abs(v.mean_tau1.estimate / mean_inverse_local_time() - 1.0);
        ok = ok && rows_ok && rel <= kMeanTauRel;
        d << "alpha=" << alpha << ": c=" << fmt("%.4f", cal.norm_const) << " worst |err|/band "
          << fmt("%.2f", worst) << " E[tau1] rel err " << fmt("%.4f", rel) << "; ";
    }
    const double secs = t.seconds();
    ok = ok && secs <= kLaplaceSeconds;
    d << fmt("%.0f", secs) << " s";
    return {ok, d.str()};
}

Outcome hitting_validation() {
    bool ok = true;
    std::ostringstream d;
    for (double r0 : {0.5, 1.0, 2.0}) {
        McOptions o;
        o.dt = kHittingDt;
        o.seed = 77;
        o.n_paths = kHittingPaths;
        const MCReport r = hitting_laplace_mc(OUParams{1.0}, 1.0, r0, o);
        ok = ok && r.pass;
        d << "r0=" << r0 << ": " << fmt("%.5f", r.estimate) << " vs " << fmt("%.5f", r.target) << " (band "
          << fmt("%.4f", r.tolerance()) << "); ";
    }
    return {ok, d.str()};
}

Outcome binomial() {
    Timer t;
    const EventTree tree = load_tree(data("binomial.json"));
    const UtilityField f = UtilityField::log();
    const double u = solve_primal(tree, f, 1.0).value;
    const double v = solve_dual(tree, f, 1.0).value;
    const double gap = conjugacy_gap(tree, f, 1.0);
    const double secs = t.seconds();
    Outcome o;
    o.pass = std::abs(u - kBinomialU) <= kBinomialTol && std::abs(v - kBinomialV) <= kBinomialTol &&
             gap <= kConjugacyTol && secs < kBinomialSeconds;
    o.detail = "u(1)=" + fmt("%.9f", u) + " v(1)=" + fmt("%.9f", v) + " conjugacy gap " + fmt("%.1e", gap) +
               ", " + fmt("%.2f", secs) + " s";
    return o;
}

Outcome trinomial() {
    Timer t;
    bool ok = true;
    double gap = 0.0, chat = 0.0, sat = 0.0;
    std::ostringstream fails;
    const std::vector<double> xs = {0.25, 0.5, 1.0, 2.0, 4.0}, ys = {0.25, 0.5, 1.0, 2.0, 4.0};
    for (const char* name : {"trinomial_terminal.json", "trinomial_uniform.json", "trinomial_random.json"}) {
        const EventTree tree = load_tree(data(name));
        const double beta = tree.utility ? tree.utility->beta : 0.0;
        for (const UtilityField& f : {UtilityField::log(beta), UtilityField::power(0.5, beta)}) {
            const DualityReport r = verify_duality(tree, f, xs, ys);
            for (const auto& c : r.checks) {
                if (c.name == "strong duality gap") gap = std::max(gap, c.residual), ok = ok && c.residual <= kGapTol;
                if (c.clause == "vii") chat = std::max(chat, c.residual), ok = ok && c.residual <= kCHatTol;
                if (c.clause == "viii") sat = std::max(sat, c.residual), ok = ok && c.residual <= kSaturationTol;
                if (c.clause == "iv" && !c.pass) {
                    ok = false;
                    fails << name << "/" << f.name() << " trend; ";
                }
            }
            // -v'(y) must fall monotonically toward -L(E) = 0.
            double prev = INFINITY;
            for (double y : {1.0, 10.0, 100.0, 1000.0}) {
                const double w = -solve_dual(tree, f, y).v_prime;
                if (!(w < prev && w > 0.0)) {
                    ok = false;
                    fails << name << "/" << f.name() << " v' at y=" << y << "; ";
                }
                prev = w;
            }
        }
    }
    const double secs = t.seconds();
    ok = ok && secs < kTrinomialSeconds;
    return {ok, fails.str() + "max gap " + fmt("%.1e", gap) + ", max c-hat err " + fmt("%.1e", chat) +
                    ", max saturation err " + fmt("%.1e", sat) + ", " + fmt("%.1f", secs) + " s"};
}

Outcome infeasibility() {
    const EventTree tree = load_tree(data("trinomial_endowment.json"));
    const double L = hedging_prices(tree).lower;
    const PrimalSolution s = solve_primal(tree, UtilityField::log(), -L - kInfeasibleOffset);
    Outcome o;
    o.pass = !s.feasible && s.certificate.has_value();
    o.detail = "L(E)=" + fmt("%.6f", L) + "; " + (s.certificate ? s.certificate->message : std::string("no certificate"));
    return o;
}

Outcome discrimination() {
    Timer t;
    StrategyConfig c = strategy_config("discriminate.json");
    c.norm_const = shared_norm_const();
    const Discrimination d = discriminate(c);
    std::ostringstream s;
    s << d.message << "; utilities";
    for (const auto& st : d.ensemble.strategies)
        s << " " << st.spec.name << "=" << fmt("%.4f", st.utility) << "(foc " << fmt("%.3g", st.foc_residual) << ")";
    const double secs = t.seconds();
    s << "; " << fmt("%.0f", secs) << " s";
    return {d.exactly_one && secs <= kDiscriminateSeconds, s.str()};
}

Outcome dominance() {
    StrategyConfig c = strategy_config("discriminate.json");
    c.norm_const = shared_norm_const();
    const Discrimination disc = discriminate(c);
    const StrategySpec win = disc.ensemble.strategies[disc.winner].spec;
    const DominanceResult hi = dominance_test(c, win.nu, win.rule);
    bool ok = true;
    std::ostringstream s;
    s << "winner " << win.name << ";";
    for (const auto& r : hi.rows) {
        const bool required = r.name == "nu=0" || r.name == "consumption x0.8" || r.name == "consumption x1.25";
        if (required) ok = ok && r.dominated;
        s << " " << r.name << " adv " << fmt("%.5f", r.advantage.mean) << "+-" << fmt("%.5f", r.advantage.std_error);
    }
    StrategyConfig c0 = strategy_config("dominance_rho0.json");
    c0.norm_const = shared_norm_const();
    const DominanceResult zero = dominance_test(c0, win.nu, win.rule);
    for (const auto& r : zero.rows)
        if (r.name == "nu=0") {
            ok = ok && r.tie;
            s << "; rho=0 nu=0 adv " << fmt("%.5f", r.advantage.mean) << "+-" << fmt("%.5f", r.advantage.std_error);
        }
    return {ok, s.str()};
}

Outcome bound() {
    StrategyConfig c = strategy_config("discriminate.json");
    c.norm_const = shared_norm_const();
    const MCReport r = utility_bound_check(c);
    return {r.pass, "utility - x = " + fmt("%.5f", r.estimate) + " (SE " + fmt("%.5f", r.std_error) +
                        ") vs bound " + fmt("%.5f", r.target)};
}

Outcome noarb() {
    bool ok = true;
    std::ostringstream s;
    const StrategyConfig refused = cli::parse_strategy_config(slurp(config("refused.json")));
    try {
        simulate_optimal(refused, NuVariant::derived, ConsumptionRule::derived);
        ok = false;
        s << "refused config was simulated; ";
    } catch (const ArbitrageRefused& e) {
        s << "refused: " << e.what() << "; ";
    }
    for (double mu : {0.05, 0.1, 0.3}) {
        MarketParams m;
        m.mu = mu;
        const NoArbitrageCheck chk = noarb_check(m, OUParams{1.0});
        ok = ok && chk.ok && std::isfinite(chk.novikov) && chk.novikov > 1.0;
        s << "theta=" << fmt("%.3f", m.theta()) << " novikov " << fmt("%.6f", chk.novikov) << "; ";
    }
    return {ok, s.str()};
}

Outcome determinism() {
    const fs::path base = fs::temp_directory_path() / "stoclock_acceptance_determinism";
    fs::remove_all(base);
    const std::vector<std::vector<std::string>> commands = {
        {"specfun", "eval", "--fn", "nu", "--params", "beta=1,alpha=1", "--grid", "r=-2:2:41"},
        {"ou", "calibrate", "--dt", "1e-3", "--paths", "2000", "--c-lo", "0.3", "--c-hi", "2"},
        {"tree", "verify", "--file", data("trinomial_random.json")},
        {"logou", "discriminate", "--config", config("discriminate.json"), "--paths", "4000", "--dt", "2e-3",
         "--calibration-paths", "4000"},
    };
    bool ok = true;
    std::ostringstream s;
    int i = 0;
    for (const auto& cmd : commands) {
        std::vector<std::string> outs, files;
        for (const char* threads : {"0", "1", "0"}) {
            const fs::path dir = base / (std::to_string(i) + "_" + std::to_string(outs.size()));
            std::vector<std::string> args = {"--seed", "7", "--threads", threads, "--format", "csv", "--out", dir.string()};
            args.insert(args.end(), cmd.begin(), cmd.end());
            std::ostringstream out, err;
            cli::run(args, out, err);
            outs.push_back(out.str());
            std::string all;
            for (const auto& e : fs::directory_iterator(dir)) all += e.path().filename().string() + slurp(e.path());
            files.push_back(all);
        }
        const bool same = outs[0] == outs[1] && outs[1] == outs[2] && files[0] == files[1] && files[1] == files[2] &&
                          !outs[0].empty();
        ok = ok && same;
        s << cmd[0] << " " << cmd[1] << (same ? " identical; " : " DIFFERS; ");
        ++i;
    }
    fs::remove_all(base);
    return {ok, s.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"special-function oracles", special_functions},
        {"OU Laplace transform of tau_1 after clock calibration", laplace_validation},
        {"OU zero-hitting transform", hitting_validation},
        {"complete binomial closed form", binomial},
        {"incomplete trinomial duality", trinomial},
        {"infeasibility below -L(E)", infeasibility},
        {"strategy discrimination: exactly one (nu, c) pair saturates with flat M", discrimination},
        {"dominance over perturbed strategies", dominance},
        {"achieved utility below the closed-form bound", bound},
        {"no-arbitrage gate and Novikov diagnostic", noarb},
        {"byte-identical reruns", determinism},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!pick.empty() && !pick.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
