#pragma once

// Monte Carlo of the explicit log-utility solution in the OU local-time
// market: dual process Z, feedback consumption, portfolio, wealth and the
// process M = X Z + int Z c dkappa, with no-arbitrage, dominance and bound checks.

#include "stoclock/ou_clock.hpp"
#include "stoclock/specfun.hpp"

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stoclock {

/// dS = S (mu dt + sigma dB), d[B, W] = rho dt.
struct MarketParams {
    double mu = 0.1;
    double sigma = 0.3;
    double rho = 0.7;
    double s0 = 1.0;
    double theta() const { return mu / sigma; }
    void validate() const;
};

/// Raised when a simulation is requested for alpha <= theta^2 / 2.
class ArbitrageRefused : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NoArbitrageCheck {
    bool ok = false;
    double alpha = 0.0;
    double theta = 0.0;
    double threshold = 0.0;  // theta^2 / 2
    double psi_value = 0.0;  // psi(-theta^2/2), NaN when !ok
    double novikov = 0.0;    // exp(-psi(-theta^2/2)) = E[exp(theta^2 tau_1 / 2)], inf when !ok
    std::string message;
};

NoArbitrageCheck noarb_check(const MarketParams& market, const OUParams& ou);

/// MC estimate of E[exp(theta^2 tau_1 / 2)] on calibrated clock paths.
MCReport novikov_mc(const MarketParams& market, const OUParams& ou, double norm_const,
                    const McOptions& opts);

/// y = (1 - exp(-psi(beta))) / (x psi(beta)).
double calibrate_y(double x, double beta, const OUParams& ou);

/// (theta + (theta^2 + 1) E[tau_1]) / 2 with E[tau_1] = sqrt(2 pi).
double utility_bound(double theta);

/// Consumption feedback c = m X psi(beta) / (1 - exp(-(1 - kappa) psi(beta))).
///   derived : m = 1
///   literal : m = (1 - exp(-psi(beta))) / psi(beta)
enum class ConsumptionRule { derived, literal };

const char* to_string(ConsumptionRule r);
ConsumptionRule parse_consumption_rule(const std::string& s);

struct StrategySpec {
    std::string name;
    NuVariant nu = NuVariant::derived;
    double nu_scale = 1.0;  // 0 switches the feedback off, -1 flips its sign
    ConsumptionRule rule = ConsumptionRule::derived;
    double consumption_scale = 1.0;
};

struct StrategyConfig {
    double x = 1.0;
    MarketParams market;
    OUParams ou;
    double beta = 1.0;
    double dt = 5e-4;
    std::size_t n_paths = 50000;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    double norm_const = 0.0;  // 0 calibrates the clock at dt
    std::size_t calibration_paths = 50000;
    double horizon_multiple = 8.0;
    std::vector<double> checkpoints = {0.5, 1.0, 2.0, 4.0, 8.0};
    void validate() const;
};

/// Clock normalization used by the strategy simulator: config value or a
/// fresh calibration at the config's dt.
double strategy_norm_const(const StrategyConfig& cfg);

struct StrategySummary {
    StrategySpec spec;
    MCReport terminal_wealth;          // E[X_tau1] against 0
    std::vector<MCReport> martingale;  // E[M_t] against x y at each checkpoint
    std::vector<double> mean_wealth;   // E[X_t]
    std::vector<double> mean_dual;     // E[Z_t]
    double utility = 0.0;              // E[sum exp(-beta t) log(c) dkappa]
    double utility_se = 0.0;
    /// Clock-weighted mean of |Z c exp(beta t) - 1| over consumption events.
    double foc_residual = 0.0;
    double max_abs_nu = 0.0;
    std::size_t bankrupt_paths = 0;
    bool saturation_pass() const { return terminal_wealth.pass; }
    bool flat_pass() const;
};

struct PairedDifference {
    double mean = 0.0;  // E[U_a - U_b] over common paths
    double std_error = 0.0;
};

struct EnsembleResult {
    double x = 0.0;
    double y = 0.0;
    double psi_beta = 0.0;
    double norm_const = 0.0;
    double nu_bound = 0.0;  // sup |nu| of the derived table
    double dt = 0.0;
    std::size_t n_paths = 0;
    std::size_t discarded = 0;
    bool discarded_ok = true;
    std::vector<double> checkpoints;
    std::vector<StrategySummary> strategies;
    std::vector<std::vector<double>> path_utility;  // [strategy][path], NaN if discarded

    PairedDifference difference(std::size_t a, std::size_t b) const;
};

/// One pass over n_paths with common random numbers for every spec.
/// Throws ArbitrageRefused when alpha <= theta^2/2.
EnsembleResult simulate_strategies(const StrategyConfig& cfg, const std::vector<StrategySpec>& specs);

EnsembleResult simulate_optimal(const StrategyConfig& cfg, NuVariant nu, ConsumptionRule rule);

/// Per-step record of a single path. Index i is the state after step i;
/// c[i] is the density consumed over (t[i-1], t[i]], X[i] is wealth after it.
struct StrategyPath {
    std::vector<double> t, S, R, kappa, Z, X, c, pi, M;
    double tau1 = 0.0;
    bool completed = false;
};

StrategyPath simulate_path(const StrategyConfig& cfg, const StrategySpec& spec, std::size_t path_index);

struct Discrimination {
    EnsembleResult ensemble;  // the four (nu, rule) pairs
    std::vector<std::size_t> passing;
    bool exactly_one = false;
    std::size_t winner = 0;  // highest utility among passing pairs (among all if none pass)
    std::size_t foc_best = 0;
    std::string message;
};

Discrimination discriminate(const StrategyConfig& cfg);

struct DominanceRow {
    std::string name;
    double utility = 0.0;
    double utility_se = 0.0;
    PairedDifference advantage;  // optimal minus this strategy
    double bankrupt_fraction = 0.0;
    bool dominated = false;      // advantage > 0
    bool within_3se = false;     // advantage >= -3 SE
    bool tie = false;            // |advantage| <= 3 SE
};

struct DominanceResult {
    EnsembleResult ensemble;
    std::vector<DominanceRow> rows;  // perturbations only
};

/// Perturbations: nu = 0, consumption x0.8 and x1.25, opposite-sign nu.
DominanceResult dominance_test(const StrategyConfig& cfg, NuVariant nu = NuVariant::derived,
                               ConsumptionRule rule = ConsumptionRule::derived);

/// Achieved utility minus x against utility_bound(theta); pass <=> estimate <= bound + 3 SE.
MCReport utility_bound_check(const StrategyConfig& cfg);

}  // namespace stoclock
