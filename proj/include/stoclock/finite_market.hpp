#pragma once

// Utility maximization under a stochastic clock on a finite event tree:
// martingale-measure polytope, hedging prices of the endowment, primal
// consumption problem, dual problem over scaled martingale measures and a
// verifier for the duality relations.

#include "stoclock/event_tree.hpp"
#include "stoclock/utility.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stoclock {

/// No equivalent martingale measure exists on the tree.
class ArbitrageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Leaf weights of a (possibly non-equivalent) martingale measure.
using LeafMeasure = std::vector<double>;

struct MartingalePolytope {
    /// Rows of A q = b over leaf weights q >= 0: total mass, then one row per
    /// (non-leaf node, asset) martingale condition.
    std::vector<std::vector<double>> A;
    std::vector<double> b;
    bool empty = false;
    bool has_equivalent_measure = false;
    LeafMeasure equivalent_measure;  // strictly positive when it exists
    bool vertices_enumerated = false;
    std::vector<LeafMeasure> vertices;  // exact rational enumeration, converted
    std::string message;
};

/// Vertex enumeration runs only when the tree has at most max_vertex_leaves leaves.
MartingalePolytope martingale_polytope(const EventTree& tree, std::size_t max_vertex_leaves = 12);

/// Vertices of {q >= 0, sum q = 1, sum_c q_c (S(c) - S(n)) = 0} for the
/// children of a non-leaf node n, in exact rational arithmetic.
std::vector<std::vector<double>> one_step_vertices(const EventTree& tree, std::size_t n);

struct LinearOptimum {
    double value = 0.0;
    LeafMeasure measure;
};

/// Optimizes sum_n Q(n) f(n) over the closed martingale polytope by backward
/// induction over one-step vertices. Throws ArbitrageError if the polytope is empty.
LinearOptimum optimize_over_measures(const EventTree& tree, const std::vector<double>& f,
                                     bool maximize);

struct HedgingPrices {
    double lower = 0.0;  // L(E) = min_Q sum Q(n) e(n) dkappa(n)
    double upper = 0.0;  // U(E)
    LeafMeasure lower_measure;
    LeafMeasure upper_measure;
};

HedgingPrices hedging_prices(const EventTree& tree);

/// Smallest initial capital v and position H with v + H.(S(c) - S(n)) >= values[c]
/// for every child c of n.
struct OneStepHedge {
    double capital = 0.0;
    std::vector<double> position;
};
OneStepHedge one_step_superhedge(const EventTree& tree, std::size_t n,
                                 const std::vector<double>& child_values);

struct InfeasibilityCertificate {
    double x = 0.0;
    double lower_price = 0.0;
    /// Any c >= 0 has <c - e, Q> >= -lower_price > x under this measure.
    LeafMeasure measure;
    std::string message;
};

struct PrimalOptions {
    /// Relative perturbation of the starting consumption, used by the
    /// uniqueness check.
    double start_perturbation = 0.0;
    bool budget_check = true;
};

struct PrimalSolution {
    bool feasible = false;
    std::optional<InfeasibilityCertificate> certificate;
    double x = 0.0;
    std::vector<double> c;                  // per node, 0 where dkappa = 0
    std::vector<std::vector<double>> H;     // per node, empty at leaves
    std::vector<double> X;                  // wealth on arrival, before consumption
    std::vector<double> terminal_wealth;    // per leaf, after the last consumption
    double value = 0.0;
    double kkt_residual = 0.0;
    double value_budget_form = 0.0;         // second solve over vertex budget constraints
    double kkt_residual_budget_form = 0.0;
    std::size_t budget_constraints = 0;
    bool boundary_point = false;            // x == -L(E)
};

PrimalSolution solve_primal(const EventTree& tree, const UtilityField& field, double x,
                            const PrimalOptions& opts = {});

/// Sum over nodes of P(n) dkappa(n) U(t(n), c(n)).
double primal_objective(const EventTree& tree, const UtilityField& field,
                        const std::vector<double>& c);

/// probability: Q ranges over the martingale polytope (scale 1).
/// solid: xi Q with xi in [0, 1].
enum class DualDomain { probability, solid };

const char* to_string(DualDomain d);

struct MeasureElement {
    double xi = 1.0;
    double y = 1.0;
    LeafMeasure q;          // sums to 1
    std::vector<double> Y;  // per node: xi y Q(n) / P(n)
};

MeasureElement make_measure(const EventTree& tree, const LeafMeasure& q, double xi, double y);

struct DualSolution {
    double y = 0.0;
    MeasureElement measure;
    double value = 0.0;
    /// dv/dy by the envelope formula -sum dkappa W (I(t, Y) - e).
    double v_prime = 0.0;
    std::vector<double> c_hat;  // I(t(n), Y(n)) where dkappa > 0
    double kkt_residual = 0.0;
    bool converged = false;
    DualDomain domain = DualDomain::probability;
};

/// y <= 0 returns value +inf.
DualSolution solve_dual(const EventTree& tree, const UtilityField& field, double y,
                        DualDomain domain = DualDomain::probability);

struct PairingResult {
    double direct = 0.0;     // sum_n xi y Q(n) c(n) dkappa(n) with Q(n) from leaf sums
    double recursive = 0.0;  // sum_n P(n) Y(n) c(n) dkappa(n) with Y by backward recursion
    double mismatch = 0.0;
};

/// Throws std::logic_error if the two evaluations differ by more than 1e-12 (relative).
PairingResult pairing(const EventTree& tree, const std::vector<double>& c,
                      const MeasureElement& m);

struct DualityCheck {
    std::string name;
    std::string clause;
    bool pass = false;
    double residual = 0.0;
    std::string detail;
};

struct DualityReport {
    double lower_price = 0.0;
    double upper_price = 0.0;
    std::vector<double> x_grid, u_values;
    std::vector<double> y_grid, v_values, v_prime, v_prime_fd;
    std::vector<DualityCheck> checks;
    bool all_pass() const;
};

struct VerifyOptions {
    double infeasible_offset = 0.01;
    double gap_tol = 1e-5;
    double conjugacy_tol = 1e-6;
    double c_hat_tol = 1e-7;
    double saturation_tol = 1e-8;
    double kkt_tol = 1e-8;
    double primal_forms_tol = 1e-6;
    double uniqueness_tol = 1e-7;
    std::vector<double> trend_y = {1.0, 10.0, 100.0, 1000.0};
};

/// Throws ArbitrageError when the tree admits no equivalent martingale measure.
DualityReport verify_duality(const EventTree& tree, const UtilityField& field,
                             const std::vector<double>& x_grid, const std::vector<double>& y_grid,
                             const VerifyOptions& opts = {});

/// |u(x) - min_y (v(y) + x y)| with the minimizer located by a root search on v'.
double strong_duality_gap(const EventTree& tree, const UtilityField& field, double x,
                          double* y_star = nullptr);

/// |max_x (u(x) - x y) - v(y)| with the maximizer refined by Brent's method.
double conjugacy_gap(const EventTree& tree, const UtilityField& field, double y,
                     double* x_star = nullptr);

}  // namespace stoclock
