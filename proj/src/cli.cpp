#include "stoclock/cli.hpp"

#include "stoclock/event_tree.hpp"
#include "stoclock/finite_market.hpp"
#include "stoclock/ou_clock.hpp"
#include "stoclock/specfun.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>

namespace stoclock::cli {

namespace {

using Json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shortest representation that round-trips.
std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

Json jnum(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json jvec(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(jnum(x));
    return a;
}

Json report_json(const MCReport& r) {
    return Json{{"label", r.label},          {"estimate", jnum(r.estimate)}, {"std_error", jnum(r.std_error)},
                {"target", jnum(r.target)},  {"bias_budget", r.bias_budget}, {"sigma_mult", r.sigma_mult},
                {"n_paths", r.n_paths},      {"pass", r.pass}};
}

struct Output {
    std::string stem;
    Json json;
    std::string csv;  // without the config header
    bool pass = true;
    std::string failure;  // names the failing checks
    bool plain = false;   // print csv body even with --format json
};

struct Globals {
    std::uint64_t seed = 1;
    unsigned threads = 0;
    std::string format;  // empty: json, or the bare table for specfun
    std::string out_dir;
};

std::size_t line_of_key(const std::string& text, const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
        std::size_t k = pos + needle.size();
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k < text.size() && text[k] == ':')
            return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
    }
    return 0;
}

std::string at_line(std::size_t line) { return line ? "line " + std::to_string(line) + ": " : ""; }

Json config_json(const StrategyConfig& c) {
    return Json{{"x", c.x},
                {"mu", c.market.mu},
                {"sigma", c.market.sigma},
                {"rho", c.market.rho},
                {"alpha", c.ou.alpha},
                {"beta", c.beta},
                {"dt", c.dt},
                {"paths", c.n_paths},
                {"seed", c.seed},
                {"s0", c.market.s0},
                {"norm_const", c.norm_const},
                {"calibration_paths", c.calibration_paths},
                {"horizon_multiple", c.horizon_multiple},
                {"checkpoints", jvec(c.checkpoints)}};
}

std::map<std::string, std::string> parse_params(const std::string& s) {
    std::map<std::string, std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--params entries must look like key=value, got '" + item + "'");
        out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw UsageError("parameter '" + key + "' must be a number, got '" + v + "'");
    }
}

// ---------------------------------------------------------------- specfun

Output specfun_eval(const std::string& fn, const std::string& params_text, const std::string& grid) {
    static const std::map<std::string, std::vector<std::string>> allowed = {
        {"hermite", {"xi", "x"}},
        {"psi", {"lambda", "alpha"}},
        {"j", {"lambda", "r", "alpha", "arg"}},
        {"g", {"t", "r", "k", "beta", "alpha"}},
        {"nu", {"r", "beta", "alpha", "variant"}},
    };
    const auto it = allowed.find(fn);
    if (it == allowed.end()) throw UsageError("--fn must be one of hermite, psi, j, g, nu");
    auto params = parse_params(params_text);
    for (const auto& [k, _] : params)
        if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
            throw UsageError("unknown parameter '" + k + "' for --fn " + fn);

    std::string grid_key;
    std::vector<double> grid_values;
    if (!grid.empty()) {
        static const std::regex re(R"(^([a-z]+)=([^:]+):([^:]+):([0-9]+)$)");
        std::smatch m;
        if (!std::regex_match(grid, m, re)) throw UsageError("--grid must look like key=start:stop:count");
        grid_key = m[1];
        if (std::find(it->second.begin(), it->second.end(), grid_key) == it->second.end() || grid_key == "arg" ||
            grid_key == "variant")
            throw UsageError("cannot grid over '" + grid_key + "' for --fn " + fn);
        const double a = to_double("grid start", m[2]), b = to_double("grid stop", m[3]);
        const int n = std::stoi(m[4]);
        if (n < 1) throw UsageError("--grid count must be >= 1");
        for (int i = 0; i < n; ++i) grid_values.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
    }

    auto need = [&](const std::string& k, std::optional<double> dflt = std::nullopt) {
        const auto p = params.find(k);
        if (p == params.end()) {
            if (!dflt) throw UsageError("--fn " + fn + " needs parameter '" + k + "'");
            return *dflt;
        }
        return to_double(k, p->second);
    };
    auto eval = [&]() -> double {
        const OUParams ou{need("alpha", 1.0)};
        if (fn == "hermite") return hermite_h(need("xi"), need("x"));
        if (fn == "psi") return laplace_exponent(need("lambda"), ou);
        if (fn == "j") {
            HittingArgument arg = HittingArgument::sqrt_alpha;
            if (const auto p = params.find("arg"); p != params.end()) {
                if (p->second == "over_sqrt2") arg = HittingArgument::over_sqrt2;
                else if (p->second != "sqrt_alpha") throw UsageError("arg must be sqrt_alpha or over_sqrt2");
            }
            return hitting_transform(need("lambda"), need("r"), ou, arg);
        }
        if (fn == "g") return beta_potential(need("t", 0.0), need("r"), need("k", 0.0), need("beta"), ou);
        NuVariant v = NuVariant::derived;
        if (const auto p = params.find("variant"); p != params.end()) {
            try {
                v = parse_nu_variant(p->second);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        return nu_feedback(need("r"), need("beta"), ou, v);
    };

    Output o;
    o.stem = "specfun_eval";
    Json cfg{{"fn", fn}};
    for (const auto& [k, v] : params) cfg[k] = v;
    if (!grid.empty()) cfg["grid"] = grid;
    o.json["config"] = cfg;
    std::ostringstream csv;
    if (grid.empty()) {
        const double v = eval();
        o.json["value"] = jnum(v);
        csv << num(v) << "\n";
    } else {
        csv << grid_key << ",value\n";
        Json rows = Json::array();
        for (double g : grid_values) {
            params[grid_key] = num(g);
            const double v = eval();
            csv << num(g) << "," << num(v) << "\n";
            rows.push_back(Json{{grid_key, g}, {"value", jnum(v)}});
        }
        o.json["rows"] = rows;
    }
    o.csv = csv.str();
    o.plain = true;
    return o;
}

// ---------------------------------------------------------------- ou

struct OuArgs {
    double alpha = 1.0;
    double dt = 1e-4;
    std::size_t paths = 10000;
    double r0 = 0.0;
    double horizon = 0.0;
    std::string estimator = "tanaka";
    double eps = 0.0;
    double norm_const = 0.0;
    std::size_t calibration_paths = 50000;
    std::size_t every = 100;
    std::vector<double> lambda_grid = {0.5, 1.0, 2.0};
    std::vector<double> s_grid = {0.5, 1.0};
    std::vector<double> r0_grid = {0.5, 1.0, 2.0};
    double c_lo = 0.25, c_hi = 4.0;
};

McOptions mc_options(const OuArgs& a, const Globals& g, std::size_t paths) {
    McOptions o;
    o.n_paths = paths;
    o.dt = a.dt;
    o.seed = g.seed;
    o.threads = g.threads;
    o.estimator = parse_clock_estimator(a.estimator);
    o.eps = a.eps;
    return o;
}

Json ou_config(const OuArgs& a, const Globals& g, const std::string& cmd) {
    Json c{{"command", "ou " + cmd}, {"alpha", a.alpha}, {"dt", a.dt}, {"seed", g.seed}, {"estimator", a.estimator}};
    if (cmd != "simulate") c["paths"] = a.paths;
    if (cmd == "simulate") {
        c["r0"] = a.r0;
        c["horizon"] = a.horizon;
        c["every"] = a.every;
    }
    if (cmd != "calibrate") {
        c["norm_const"] = a.norm_const;
        c["calibration_paths"] = a.calibration_paths;
    }
    if (cmd != "simulate") c["lambda_grid"] = jvec(a.lambda_grid);
    if (cmd == "calibrate") {
        c["c_lo"] = a.c_lo;
        c["c_hi"] = a.c_hi;
    }
    if (cmd == "validate-laplace") {
        c["s_grid"] = jvec(a.s_grid);
        c["r0_grid"] = jvec(a.r0_grid);
    }
    if (a.eps > 0.0) c["eps"] = a.eps;
    return c;
}

Json calibration_json(const CalibrationResult& c) {
    return Json{{"norm_const", c.norm_const},   {"pilot_norm_const", c.pilot_norm_const},
                {"objective", c.objective},     {"ok", c.ok},
                {"message", c.message},         {"lambda_grid", jvec(c.lambda_grid)},
                {"log_means", jvec(c.log_means)}, {"targets", jvec(c.targets)},
                {"n_paths", c.n_paths},         {"exhausted", c.exhausted}};
}

double resolve_norm_const(OuArgs& a, const Globals& g, Json& out) {
    if (a.norm_const > 0.0) return a.norm_const;
    const CalibrationResult c = calibrate_clock(OUParams{a.alpha}, a.lambda_grid, mc_options(a, g, a.calibration_paths));
    out["calibration"] = calibration_json(c);
    if (!c.ok) throw std::runtime_error("clock calibration failed: " + c.message);
    a.norm_const = c.norm_const;
    return c.norm_const;
}

Output ou_simulate(OuArgs a, const Globals& g) {
    Output o;
    o.stem = "ou_simulate";
    const OUParams ou{a.alpha};
    if (a.horizon <= 0.0) a.horizon = 8.0 * mean_inverse_local_time();
    if (a.every == 0) throw UsageError("--every must be >= 1");
    const double c = resolve_norm_const(a, g, o.json);
    const OUPath path = simulate_ou(ou, a.r0, a.dt, a.horizon, g.seed);
    const ClockPath clock = local_time(path, parse_clock_estimator(a.estimator),
                                       a.eps > 0.0 ? a.eps : 4.0 * std::sqrt(a.dt), c);
    std::ostringstream csv;
    csv << "t,R,kappa\n";
    for (std::size_t i = 0; i < path.r.size(); i += a.every)
        csv << num(static_cast<double>(i) * a.dt) << "," << num(path.r[i]) << "," << num(clock.kappa[i]) << "\n";
    o.csv = csv.str();
    Json res = o.json;
    o.json = Json{{"config", ou_config(a, g, "simulate")}};
    if (res.contains("calibration")) o.json["calibration"] = res["calibration"];
    o.json["steps"] = path.r.size() - 1;
    o.json["tau1"] = jnum(inverse_local_time(clock, 1.0));
    o.json["kappa_end"] = clock.kappa.back();
    return o;
}

Output ou_calibrate(const OuArgs& a, const Globals& g) {
    Output o;
    o.stem = "ou_calibrate";
    const CalibrationResult c =
        calibrate_clock(OUParams{a.alpha}, a.lambda_grid, mc_options(a, g, a.paths), a.c_lo, a.c_hi);
    o.json["config"] = ou_config(a, g, "calibrate");
    o.json["calibration"] = calibration_json(c);
    o.json["reference_norm_const"] = 1.0 / std::sqrt(2.0 * a.alpha);
    std::ostringstream csv;
    csv << "lambda,log_mean,target\n";
    for (std::size_t i = 0; i < c.lambda_grid.size(); ++i)
        csv << num(c.lambda_grid[i]) << "," << num(c.log_means[i]) << "," << num(c.targets[i]) << "\n";
    o.csv = csv.str();
    o.pass = c.ok;
    if (!c.ok) o.failure = "clock calibration: " + c.message;
    return o;
}

Output ou_validate(OuArgs a, const Globals& g) {
    Output o;
    o.stem = "ou_validate-laplace";
    Json cal;
    const double c = resolve_norm_const(a, g, cal);
    const LaplaceValidation v =
        validate_laplace(OUParams{a.alpha}, c, a.lambda_grid, a.s_grid, a.r0_grid, mc_options(a, g, a.paths));
    o.json["config"] = ou_config(a, g, "validate-laplace");
    if (cal.contains("calibration")) o.json["calibration"] = cal["calibration"];
    Json rows = Json::array();
    std::ostringstream csv;
    csv << "kind,lambda,s,r0,estimate,std_error,target,pass\n";
    std::vector<std::string> failed;
    for (const LaplaceRow& r : v.rows) {
        Json j = report_json(r.report);
        j["kind"] = r.kind;
        j["lambda"] = r.lambda;
        j["s"] = r.s;
        j["r0"] = r.r0;
        rows.push_back(j);
        csv << r.kind << "," << num(r.lambda) << "," << num(r.s) << "," << num(r.r0) << "," << num(r.report.estimate)
            << "," << num(r.report.std_error) << "," << num(r.report.target) << "," << (r.report.pass ? "true" : "false")
            << "\n";
        if (!r.report.pass) failed.push_back(r.report.label);
    }
    o.json["rows"] = rows;
    o.json["mean_tau1"] = report_json(v.mean_tau1);
    o.json["exhausted"] = v.exhausted;
    o.json["exhausted_ok"] = v.exhausted_ok;
    o.json["all_pass"] = v.all_pass();
    if (!v.mean_tau1.pass) failed.push_back("E[tau_1] within 2% of sqrt(2 pi)");
    if (!v.exhausted_ok) failed.push_back("horizon-exhausted paths below 0.1%");
    o.csv = csv.str();
    o.pass = v.all_pass();
    for (const auto& f : failed) o.failure += (o.failure.empty() ? "" : "; ") + f;
    return o;
}

// ---------------------------------------------------------------- tree

struct TreeArgs {
    std::string file;
    double x = 1.0;
    double y = 1.0;
    std::string domain = "probability";
    std::vector<double> x_grid, y_grid;
    std::string family;
    double gamma = std::nan("");
    double beta = std::nan("");
};

UtilitySpec tree_utility(const EventTree& tree, const TreeArgs& a) {
    UtilitySpec s = tree.utility.value_or(UtilitySpec{});
    if (!a.family.empty()) s.family = a.family;
    if (!std::isnan(a.gamma)) s.gamma = a.gamma;
    if (!std::isnan(a.beta)) s.beta = a.beta;
    return s;
}

Json tree_config(const TreeArgs& a, const UtilitySpec& u, const std::string& cmd) {
    Json c{{"command", "tree " + cmd}, {"file", a.file}};
    c["utility"] = Json{{"family", u.family}, {"gamma", u.gamma}, {"beta", u.beta}};
    if (cmd == "solve") c["x"] = a.x;
    if (cmd == "dual") {
        c["y"] = a.y;
        c["domain"] = a.domain;
    }
    if (cmd == "verify") {
        c["x_grid"] = jvec(a.x_grid);
        c["y_grid"] = jvec(a.y_grid);
    }
    return c;
}

Output tree_solve(const TreeArgs& a) {
    const EventTree tree = load_tree(a.file);
    const UtilitySpec us = tree_utility(tree, a);
    const UtilityField field = us.make();
    const HedgingPrices hp = hedging_prices(tree);
    const PrimalSolution s = solve_primal(tree, field, a.x);
    Output o;
    o.stem = "tree_solve";
    o.json["config"] = tree_config(a, us, "solve");
    o.json["lower_price"] = hp.lower;
    o.json["upper_price"] = hp.upper;
    o.json["feasible"] = s.feasible;
    o.json["value"] = jnum(s.value);
    if (s.certificate) {
        o.json["certificate"] = Json{{"x", s.certificate->x},
                                     {"lower_price", s.certificate->lower_price},
                                     {"measure", jvec(s.certificate->measure)},
                                     {"message", s.certificate->message}};
    } else {
        o.json["value_budget_form"] = jnum(s.value_budget_form);
        o.json["kkt_residual"] = s.kkt_residual;
        o.json["kkt_residual_budget_form"] = s.kkt_residual_budget_form;
        o.json["boundary_point"] = s.boundary_point;
        Json nodes = Json::array();
        for (std::size_t n = 0; n < tree.size(); ++n) {
            nodes.push_back(Json{{"id", tree.id(n)},
                                 {"c", s.c[n]},
                                 {"wealth", s.X[n]},
                                 {"position", jvec(s.H[n])}});
        }
        o.json["nodes"] = nodes;
    }
    o.csv = "x,u\n" + num(a.x) + "," + num(s.value) + "\n";
    return o;
}

Output tree_dual(const TreeArgs& a) {
    const EventTree tree = load_tree(a.file);
    const UtilitySpec us = tree_utility(tree, a);
    const UtilityField field = us.make();
    DualDomain dom;
    if (a.domain == "probability") dom = DualDomain::probability;
    else if (a.domain == "solid") dom = DualDomain::solid;
    else throw UsageError("--domain must be probability or solid");
    const DualSolution d = solve_dual(tree, field, a.y, dom);
    Output o;
    o.stem = "tree_dual";
    o.json["config"] = tree_config(a, us, "dual");
    o.json["value"] = jnum(d.value);
    o.json["v_prime"] = jnum(d.v_prime);
    o.json["xi"] = d.measure.xi;
    o.json["measure"] = jvec(d.measure.q);
    o.json["kkt_residual"] = d.kkt_residual;
    o.json["converged"] = d.converged;
    Json nodes = Json::array();
    for (std::size_t n = 0; n < tree.size(); ++n)
        nodes.push_back(Json{{"id", tree.id(n)}, {"Y", jnum(d.measure.Y[n])}, {"c_hat", d.c_hat[n]}});
    o.json["nodes"] = nodes;
    o.csv = "y,v\n" + num(a.y) + "," + num(d.value) + "\n";
    o.pass = d.converged;
    if (!d.converged) o.failure = "dual solver KKT residual " + num(d.kkt_residual) + " above 1e-8";
    return o;
}

Output tree_verify(TreeArgs a) {
    const EventTree tree = load_tree(a.file);
    const UtilitySpec us = tree_utility(tree, a);
    const UtilityField field = us.make();
    if (a.x_grid.empty()) {
        const double L = hedging_prices(tree).lower;
        for (double d : {0.25, 0.5, 1.0, 2.0, 4.0}) a.x_grid.push_back(-L + d);
    }
    if (a.y_grid.empty()) a.y_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
    const DualityReport r = verify_duality(tree, field, a.x_grid, a.y_grid);
    Output o;
    o.stem = "tree_verify";
    o.json["config"] = tree_config(a, us, "verify");
    o.json["lower_price"] = r.lower_price;
    o.json["upper_price"] = r.upper_price;
    Json checks = Json::array();
    for (const DualityCheck& c : r.checks) {
        checks.push_back(Json{{"name", c.name}, {"clause", c.clause}, {"pass", c.pass},
                              {"residual", jnum(c.residual)}, {"detail", c.detail}});
        if (!c.pass) o.failure += (o.failure.empty() ? "" : "; ") + c.name;
    }
    o.json["checks"] = checks;
    o.json["all_pass"] = r.all_pass();
    std::ostringstream csv;
    csv << "function,argument,value,derivative\n";
    for (std::size_t i = 0; i < r.x_grid.size(); ++i) csv << "u," << num(r.x_grid[i]) << "," << num(r.u_values[i]) << ",\n";
    for (std::size_t i = 0; i < r.y_grid.size(); ++i)
        csv << "v," << num(r.y_grid[i]) << "," << num(r.v_values[i]) << "," << num(r.v_prime[i]) << "\n";
    o.csv = csv.str();
    o.pass = r.all_pass();
    return o;
}

// ---------------------------------------------------------------- logou

Json summary_json(const StrategySummary& s) {
    Json m = Json::array();
    for (const MCReport& r : s.martingale) m.push_back(report_json(r));
    return Json{{"name", s.spec.name},
                {"nu", to_string(s.spec.nu)},
                {"nu_scale", s.spec.nu_scale},
                {"rule", to_string(s.spec.rule)},
                {"consumption_scale", s.spec.consumption_scale},
                {"terminal_wealth", report_json(s.terminal_wealth)},
                {"martingale", m},
                {"saturation_pass", s.saturation_pass()},
                {"flat_pass", s.flat_pass()},
                {"utility", jnum(s.utility)},
                {"utility_se", jnum(s.utility_se)},
                {"foc_residual", jnum(s.foc_residual)},
                {"max_abs_nu", s.max_abs_nu},
                {"bankrupt_paths", s.bankrupt_paths}};
}

Json ensemble_json(const EnsembleResult& e) {
    Json s = Json::array();
    for (const StrategySummary& x : e.strategies) s.push_back(summary_json(x));
    return Json{{"y", e.y},
                {"xy", e.x * e.y},
                {"psi_beta", e.psi_beta},
                {"norm_const", e.norm_const},
                {"nu_bound", e.nu_bound},
                {"n_paths", e.n_paths},
                {"discarded", e.discarded},
                {"discarded_ok", e.discarded_ok},
                {"strategies", s}};
}

std::string checkpoint_csv(const EnsembleResult& e) {
    std::ostringstream csv;
    csv << "strategy,t,mean_M,se_M,mean_X,mean_Z\n";
    for (const StrategySummary& s : e.strategies)
        for (std::size_t j = 0; j < e.checkpoints.size(); ++j)
            csv << s.spec.name << "," << num(e.checkpoints[j]) << "," << num(s.martingale[j].estimate) << ","
                << num(s.martingale[j].std_error) << "," << num(s.mean_wealth[j]) << "," << num(s.mean_dual[j]) << "\n";
    return csv.str();
}

Json noarb_json(const NoArbitrageCheck& n) {
    return Json{{"ok", n.ok},
                {"alpha", n.alpha},
                {"theta", n.theta},
                {"threshold", n.threshold},
                {"psi_at_minus_half_theta_sq", jnum(n.psi_value)},
                {"novikov", jnum(n.novikov)},
                {"message", n.message}};
}

Output logou_begin(const std::string& cmd, StrategyConfig& cfg) {
    Output o;
    o.stem = "logou_" + cmd;
    const NoArbitrageCheck na = noarb_check(cfg.market, cfg.ou);
    if (!na.ok) throw ArbitrageRefused(na.message);
    cfg.norm_const = strategy_norm_const(cfg);
    Json c = config_json(cfg);
    c["command"] = "logou " + cmd;
    o.json["config"] = c;
    o.json["noarb"] = noarb_json(na);
    return o;
}

void fail(Output& o, const std::string& what) {
    o.pass = false;
    o.failure += (o.failure.empty() ? "" : "; ") + what;
}

Output logou_simulate(StrategyConfig cfg, NuVariant nu, ConsumptionRule rule) {
    Output o = logou_begin("simulate", cfg);
    o.json["config"]["nu"] = to_string(nu);
    o.json["config"]["rule"] = to_string(rule);
    const EnsembleResult e = simulate_optimal(cfg, nu, rule);
    o.json["result"] = ensemble_json(e);
    o.csv = checkpoint_csv(e);
    const StrategySummary& s = e.strategies.front();
    if (!s.saturation_pass()) fail(o, "budget saturation |E[X_tau1]| <= 3 SE + bias");
    if (!s.flat_pass()) fail(o, "E[M_t] flat at x y");
    if (!e.discarded_ok) fail(o, "discarded paths below 0.1%");
    if (s.bankrupt_paths > 0) fail(o, "no bankrupt paths");
    return o;
}

Output logou_discriminate(StrategyConfig cfg) {
    Output o = logou_begin("discriminate", cfg);
    const Discrimination d = discriminate(cfg);
    o.json["result"] = ensemble_json(d.ensemble);
    Json passing = Json::array();
    for (std::size_t i : d.passing) passing.push_back(d.ensemble.strategies[i].spec.name);
    o.json["passing"] = passing;
    o.json["exactly_one"] = d.exactly_one;
    o.json["winner"] = d.ensemble.strategies[d.winner].spec.name;
    o.json["foc_best"] = d.ensemble.strategies[d.foc_best].spec.name;
    o.json["message"] = d.message;
    std::ostringstream csv;
    csv << "strategy,mean_X_tau1,se_X_tau1,saturation_pass,flat_pass,utility,utility_se,foc_residual\n";
    for (const StrategySummary& s : d.ensemble.strategies)
        csv << s.spec.name << "," << num(s.terminal_wealth.estimate) << "," << num(s.terminal_wealth.std_error) << ","
            << (s.saturation_pass() ? "true" : "false") << "," << (s.flat_pass() ? "true" : "false") << ","
            << num(s.utility) << "," << num(s.utility_se) << "," << num(s.foc_residual) << "\n";
    o.csv = csv.str() + "\n" + checkpoint_csv(d.ensemble);
    if (!d.exactly_one) fail(o, "exactly one (nu, c) pair passes saturation and flatness: " + d.message);
    return o;
}

Output logou_dominance(StrategyConfig cfg, NuVariant nu, ConsumptionRule rule) {
    Output o = logou_begin("dominance", cfg);
    o.json["config"]["nu"] = to_string(nu);
    o.json["config"]["rule"] = to_string(rule);
    const DominanceResult d = dominance_test(cfg, nu, rule);
    o.json["result"] = ensemble_json(d.ensemble);
    Json rows = Json::array();
    std::ostringstream csv;
    csv << "strategy,utility,utility_se,advantage,advantage_se,bankrupt_fraction,dominated,tie\n";
    const StrategySummary& opt = d.ensemble.strategies.front();
    csv << "optimal," << num(opt.utility) << "," << num(opt.utility_se) << ",0,0,0,,\n";
    for (const DominanceRow& r : d.rows) {
        rows.push_back(Json{{"name", r.name},
                            {"utility", jnum(r.utility)},
                            {"utility_se", jnum(r.utility_se)},
                            {"advantage", jnum(r.advantage.mean)},
                            {"advantage_se", jnum(r.advantage.std_error)},
                            {"bankrupt_fraction", r.bankrupt_fraction},
                            {"dominated", r.dominated},
                            {"within_3se", r.within_3se},
                            {"tie", r.tie}});
        csv << r.name << "," << num(r.utility) << "," << num(r.utility_se) << "," << num(r.advantage.mean) << ","
            << num(r.advantage.std_error) << "," << num(r.bankrupt_fraction) << "," << (r.dominated ? "true" : "false")
            << "," << (r.tie ? "true" : "false") << "\n";
        if (!r.within_3se) fail(o, "optimal utility >= '" + r.name + "' - 3 SE");
    }
    o.json["rows"] = rows;
    o.csv = csv.str();
    return o;
}

Output logou_bound(StrategyConfig cfg) {
    Output o = logou_begin("bound", cfg);
    const MCReport r = utility_bound_check(cfg);
    o.json["result"] = report_json(r);
    o.json["bound"] = utility_bound(cfg.market.theta());
    o.csv = "estimate,std_error,bound,pass\n" + num(r.estimate) + "," + num(r.std_error) + "," + num(r.target) + "," +
            (r.pass ? "true" : "false") + "\n";
    if (!r.pass) fail(o, "u(x) - x <= bound + 3 SE");
    return o;
}

// ---------------------------------------------------------------- emission

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    f << text;
}

void emit(const Output& o, const Globals& g, std::ostream& out) {
    const std::string config_line = "# config " + o.json.at("config").dump() + "\n";
    const std::string json_text = o.json.dump(2) + "\n";
    const std::string csv_text = config_line + o.csv;
    if (g.format == "json" || (g.format.empty() && !o.plain)) out << json_text;
    else out << (o.plain ? o.csv : csv_text);
    if (!g.out_dir.empty()) {
        std::filesystem::create_directories(g.out_dir);
        write_file(std::filesystem::path(g.out_dir) / (o.stem + ".json"), json_text);
        write_file(std::filesystem::path(g.out_dir) / (o.stem + ".csv"), csv_text);
    }
}

StrategyConfig load_strategy_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_strategy_config(ss.str());
}

}  // namespace

StrategyConfig parse_strategy_config(const std::string& text, StrategyConfig base) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const std::size_t line =
            1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(std::min<std::size_t>(
                                                                                          e.byte ? e.byte - 1 : 0, text.size())),
                                                    '\n'));
        throw ConfigError("line " + std::to_string(line) + ": JSON syntax error: " + e.what(), line);
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object", 1);
    for (const auto& [key, val] : doc.items()) {
        const std::size_t line = line_of_key(text, key);
        auto number = [&]() {
            if (!val.is_number()) throw ConfigError(at_line(line) + "\"" + key + "\" must be a number", line);
            return val.get<double>();
        };
        auto count = [&]() -> std::uint64_t {
            if (!val.is_number_unsigned() && !(val.is_number_integer() && val.get<long long>() >= 0))
                throw ConfigError(at_line(line) + "\"" + key + "\" must be a non-negative integer", line);
            return val.get<std::uint64_t>();
        };
        if (key == "x") base.x = number();
        else if (key == "mu") base.market.mu = number();
        else if (key == "sigma") base.market.sigma = number();
        else if (key == "rho") base.market.rho = number();
        else if (key == "s0") base.market.s0 = number();
        else if (key == "alpha") base.ou.alpha = number();
        else if (key == "beta") base.beta = number();
        else if (key == "dt") base.dt = number();
        else if (key == "paths") base.n_paths = count();
        else if (key == "seed") base.seed = count();
        else if (key == "norm_const") base.norm_const = number();
        else if (key == "calibration_paths") base.calibration_paths = count();
        else if (key == "horizon_multiple") base.horizon_multiple = number();
        else if (key == "checkpoints") {
            if (!val.is_array()) throw ConfigError(at_line(line) + "\"checkpoints\" must be an array", line);
            base.checkpoints.clear();
            for (const auto& v : val) {
                if (!v.is_number()) throw ConfigError(at_line(line) + "\"checkpoints\" entries must be numbers", line);
                base.checkpoints.push_back(v.get<double>());
            }
        } else {
            throw ConfigError(at_line(line) + "unknown key \"" + key + "\"", line);
        }
    }
    try {
        base.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return base;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Utility maximization under a stochastic clock: special functions, OU local-time clock, "
                 "finite-market duality and the log-utility strategy simulator",
                 "stoclock"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
    app.add_option("--format", g.format, "Standard output format")->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--out", g.out_dir, "Directory for JSON and CSV artifacts");

    // specfun
    auto* sf = app.add_subcommand("specfun", "Special functions")->require_subcommand(1);
    auto* sf_eval = sf->add_subcommand("eval", "Evaluate one function");
    std::string fn, params, grid;
    sf_eval->add_option("--fn", fn, "hermite|psi|j|g|nu")->required();
    sf_eval->add_option("--params", params, "key=value,...");
    sf_eval->add_option("--grid", grid, "key=start:stop:count");

    // ou
    OuArgs oa;
    auto* ou = app.add_subcommand("ou", "OU index and local-time clock")->require_subcommand(1);
    auto add_ou_common = [&](CLI::App* c) {
        c->add_option("--alpha", oa.alpha, "Mean-reversion rate");
        c->add_option("--dt", oa.dt, "Time step");
        c->add_option("--estimator", oa.estimator, "tanaka|occupation")->check(CLI::IsMember({"tanaka", "occupation"}));
        c->add_option("--eps", oa.eps, "Occupation half-width");
    };
    auto* ou_sim = ou->add_subcommand("simulate", "Simulate one path of R and its clock");
    add_ou_common(ou_sim);
    ou_sim->add_option("--r0", oa.r0, "Initial value");
    ou_sim->add_option("--horizon", oa.horizon, "Simulated time (default 8 sqrt(2 pi))");
    ou_sim->add_option("--every", oa.every, "Write every n-th step");
    ou_sim->add_option("--norm-const", oa.norm_const, "Clock normalization (default: calibrate)");
    ou_sim->add_option("--calibration-paths", oa.calibration_paths, "Paths for calibration");
    ou_sim->add_option("--lambda-grid", oa.lambda_grid, "Calibration lambdas")->delimiter(',');
    auto* ou_cal = ou->add_subcommand("calibrate", "Fit the clock normalization");
    add_ou_common(ou_cal);
    ou_cal->add_option("--paths", oa.paths, "Monte Carlo paths");
    ou_cal->add_option("--lambda-grid", oa.lambda_grid, "Lambdas")->delimiter(',');
    ou_cal->add_option("--c-lo", oa.c_lo, "Lower end of the pilot scan");
    ou_cal->add_option("--c-hi", oa.c_hi, "Upper end of the pilot scan");
    auto* ou_val = ou->add_subcommand("validate-laplace", "MC check of the Laplace transforms");
    add_ou_common(ou_val);
    ou_val->add_option("--paths", oa.paths, "Monte Carlo paths");
    ou_val->add_option("--lambda-grid", oa.lambda_grid, "Lambdas")->delimiter(',');
    ou_val->add_option("--s-grid", oa.s_grid, "Clock levels s")->delimiter(',');
    ou_val->add_option("--r0-grid", oa.r0_grid, "Starting points for hitting times")->delimiter(',');
    ou_val->add_option("--norm-const", oa.norm_const, "Clock normalization (default: calibrate)");
    ou_val->add_option("--calibration-paths", oa.calibration_paths, "Paths for calibration");

    // tree
    TreeArgs ta;
    auto* tree = app.add_subcommand("tree", "Finite event-tree market")->require_subcommand(1);
    auto add_tree_common = [&](CLI::App* c) {
        c->add_option("--file", ta.file, "Tree JSON file")->required();
        c->add_option("--family", ta.family, "Override utility family")->check(CLI::IsMember({"log", "power"}));
        c->add_option("--gamma", ta.gamma, "Override power exponent");
        c->add_option("--beta", ta.beta, "Override discount rate");
    };
    auto* t_solve = tree->add_subcommand("solve", "Primal problem at x");
    add_tree_common(t_solve);
    t_solve->add_option("--x", ta.x, "Initial wealth")->required();
    auto* t_dual = tree->add_subcommand("dual", "Dual problem at y");
    add_tree_common(t_dual);
    t_dual->add_option("--y", ta.y, "Dual variable")->required();
    t_dual->add_option("--domain", ta.domain, "probability|solid");
    auto* t_verify = tree->add_subcommand("verify", "Check the duality relations");
    add_tree_common(t_verify);
    t_verify->add_option("--x-grid", ta.x_grid, "Wealth grid")->delimiter(',');
    t_verify->add_option("--y-grid", ta.y_grid, "Dual grid")->delimiter(',');

    // logou
    auto* lg = app.add_subcommand("logou", "Log-utility strategy simulator")->require_subcommand(1);
    std::string config_file, nu_name = "derived", rule_name = "derived";
    std::optional<double> o_x, o_mu, o_sigma, o_rho, o_alpha, o_beta, o_dt, o_norm;
    std::optional<std::size_t> o_paths, o_cal_paths;
    auto add_lg = [&](CLI::App* c) {
        c->add_option("--config", config_file, "Config JSON");
        c->add_option("--x", o_x, "Initial wealth");
        c->add_option("--mu", o_mu, "Drift");
        c->add_option("--sigma", o_sigma, "Volatility");
        c->add_option("--rho", o_rho, "Correlation of B and W");
        c->add_option("--alpha", o_alpha, "Mean-reversion rate");
        c->add_option("--beta", o_beta, "Impatience rate");
        c->add_option("--dt", o_dt, "Time step");
        c->add_option("--paths", o_paths, "Monte Carlo paths");
        c->add_option("--norm-const", o_norm, "Clock normalization (default: calibrate)");
        c->add_option("--calibration-paths", o_cal_paths, "Paths for calibration");
    };
    auto* l_sim = lg->add_subcommand("simulate", "Simulate one (nu, c) pair");
    auto* l_dom = lg->add_subcommand("dominance", "Compare against perturbed strategies");
    auto* l_dis = lg->add_subcommand("discriminate", "Run all four (nu, c) pairs");
    auto* l_bnd = lg->add_subcommand("bound", "Achieved utility against the closed-form bound");
    for (CLI::App* c : {l_sim, l_dom, l_dis, l_bnd}) add_lg(c);
    for (CLI::App* c : {l_sim, l_dom}) {
        c->add_option("--nu", nu_name, "derived|literal")->check(CLI::IsMember({"derived", "literal"}));
        c->add_option("--rule", rule_name, "derived|literal")->check(CLI::IsMember({"derived", "literal"}));
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (g.out_dir.empty())
        if (const char* env = std::getenv(kOutDirEnv)) g.out_dir = env;
    const bool seed_given = app.count("--seed") > 0;

    try {
        Output o;
        if (sf_eval->parsed()) {
            o = specfun_eval(fn, params, grid);
        } else if (ou->parsed()) {
            if (ou_sim->parsed()) o = ou_simulate(oa, g);
            else if (ou_cal->parsed()) o = ou_calibrate(oa, g);
            else o = ou_validate(oa, g);
        } else if (tree->parsed()) {
            if (t_solve->parsed()) o = tree_solve(ta);
            else if (t_dual->parsed()) o = tree_dual(ta);
            else o = tree_verify(ta);
        } else {
            StrategyConfig cfg;
            if (!config_file.empty()) cfg = load_strategy_file(config_file);
            if (o_x) cfg.x = *o_x;
            if (o_mu) cfg.market.mu = *o_mu;
            if (o_sigma) cfg.market.sigma = *o_sigma;
            if (o_rho) cfg.market.rho = *o_rho;
            if (o_alpha) cfg.ou.alpha = *o_alpha;
            if (o_beta) cfg.beta = *o_beta;
            if (o_dt) cfg.dt = *o_dt;
            if (o_paths) cfg.n_paths = *o_paths;
            if (o_norm) cfg.norm_const = *o_norm;
            if (o_cal_paths) cfg.calibration_paths = *o_cal_paths;
            if (seed_given) cfg.seed = g.seed;
            cfg.threads = g.threads;
            try {
                cfg.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(std::string("invalid config: ") + e.what());
            }
            const NuVariant nu = parse_nu_variant(nu_name);
            const ConsumptionRule rule = parse_consumption_rule(rule_name);
            if (l_sim->parsed()) o = logou_simulate(cfg, nu, rule);
            else if (l_dom->parsed()) o = logou_dominance(cfg, nu, rule);
            else if (l_dis->parsed()) o = logou_discriminate(cfg);
            else o = logou_bound(cfg);
        }
        emit(o, g, out);
        if (!o.pass) {
            err << "check failed: " << o.failure << "\n";
            return kExitCheckFailed;
        }
        return kExitOk;
    } catch (const TreeFormatError& e) {
        err << "invalid tree: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "invalid config: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ArbitrageRefused& e) {
        err << "check failed: no-arbitrage gate: " << e.what() << "\n";
        return kExitCheckFailed;
    } catch (const ArbitrageError& e) {
        err << "check failed: no equivalent martingale measure: " << e.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "check failed: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}

}  // namespace stoclock::cli
