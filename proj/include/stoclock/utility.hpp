#pragma once

// Deterministic utility random fields U(t, x) = exp(-beta t) U_0(x) with
// derivative, inverse marginal, convex conjugate and elasticity diagnostics.

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stoclock {

enum class UtilityFamily { log, power, custom };

const char* to_string(UtilityFamily f);

/// User-supplied field. u and u_prime are required; the remaining callbacks
/// are needed only by the solvers.
struct CustomField {
    std::string name = "custom";
    std::function<double(double, double)> u;
    std::function<double(double, double)> u_prime;
    std::function<double(double, double)> u_second;
    std::function<double(double, double)> inverse_marginal;
};

class UtilityField {
public:
    static UtilityField log(double beta = 0.0);
    /// (x^gamma - 1)/gamma with gamma < 1, gamma != 0.
    static UtilityField power(double gamma, double beta = 0.0);
    static UtilityField custom(CustomField f, double beta = 0.0);

    UtilityFamily family() const { return family_; }
    double gamma() const { return gamma_; }
    double beta() const { return beta_; }
    std::string name() const;

    double u(double t, double x) const;
    double u_prime(double t, double x) const;
    double u_second(double t, double x) const;
    /// Value of U(t, 0+): -inf for log and gamma < 0.
    double u_at_zero(double t) const;
    double inverse_marginal(double t, double y) const;
    double conjugate(double t, double y) const;
    /// dV/dy = -I(t, y).
    double conjugate_prime(double t, double y) const;
    /// d2V/dy2 = -1 / U''(t, I(t, y)).
    double conjugate_second(double t, double y) const;

    /// Optional envelope K1(x) <= U_x(t, x) <= K2(x) and bounds G, D for U(t, 1).
    std::optional<std::pair<std::function<double(double)>, std::function<double(double)>>> envelope;
    std::optional<std::pair<double, double>> bounds;

private:
    UtilityField() = default;
    UtilityFamily family_ = UtilityFamily::log;
    double gamma_ = 0.0;
    double beta_ = 0.0;
    CustomField custom_;
};

double u_eval(const UtilityField& f, double t, double x);
double u_prime(const UtilityField& f, double t, double x);
double inverse_marginal(const UtilityField& f, double t, double y);
double conjugate(const UtilityField& f, double t, double y);

/// Constants with U(t, delta x) >= A + B U(t, x) for the built-in families
/// (equality for log and power). Custom fields have none.
std::optional<std::pair<double, double>> scaling_constants(const UtilityField& f, double delta);

struct ElasticityProfile {
    std::vector<double> x;
    std::vector<double> elasticity;  // x U_x / U where U > 0, NaN elsewhere
    double tail_sup = 0.0;           // sup over the last quarter of valid samples
    std::optional<double> analytic_limit;
    bool flagged = false;            // tail_sup >= 1
};

ElasticityProfile elasticity_profile(const UtilityField& f, const std::vector<double>& x_grid,
                                     double t = 0.0);

struct FieldCheck {
    std::string name;
    bool pass = false;
    double residual = 0.0;
};

struct FieldValidation {
    std::vector<FieldCheck> checks;
    bool all_pass() const;
};

/// Concavity, monotonicity, Inada trend at extreme arguments, the conjugate
/// identity U(I(y)) = V(y) + y I(y), round trip U_x(I(y)) = y and the
/// elasticity flag. Identity checks are skipped for custom fields without I.
FieldValidation validate_field(const UtilityField& f, const std::vector<double>& t_grid,
                               const std::vector<double>& x_grid);

}  // namespace stoclock
