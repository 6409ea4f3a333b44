#pragma once

// Closed-form functions of the Ornstein-Uhlenbeck local-time example:
// Gamma, the Hermite function H_xi, the inverse-local-time Laplace exponent,
// the zero-hitting transform, the beta-potential of the clock and the
// feedback drift nu of the optimal dual process.

#include <stdexcept>
#include <string>
#include <vector>

namespace stoclock {

/// Raised when a quadrature does not reach its requested tolerance.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double achieved)
        : std::runtime_error(what), achieved_(achieved) {}
    double achieved_tolerance() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// Mean-reversion rate of dR = -alpha R dt + dW.
struct OUParams {
    double alpha = 1.0;
    void validate() const;
};

struct SpecEvalConfig {
    double quad_rel_tol = 1e-10;
    int quad_max_subdiv = 2048;
    void validate() const;
};

/// Argument scaling inside the zero-hitting transform j(lambda, r).
///   sqrt_alpha : H_{-lambda/alpha}(|r| sqrt(alpha)), the transform of the
///                OU process dR = -alpha R dt + dW for every alpha.
///   over_sqrt2 : H_{-lambda/alpha}(|r| / sqrt(2)); coincides with
///                sqrt_alpha only at alpha = 1/2.
enum class HittingArgument { sqrt_alpha, over_sqrt2 };

/// Feedback drift variants.
///   derived : nu(r) = sgn(r) d/dr log j(beta, |r|)
///   literal : nu(r) = -sgn(r) h(|r|/sqrt 2), h(z) = -(2 beta/alpha) H_{xi-1}(z)/H_xi(z)
enum class NuVariant { derived, literal };

const char* to_string(HittingArgument a);
const char* to_string(NuVariant v);
NuVariant parse_nu_variant(const std::string& s);

/// Gamma function; throws std::domain_error at the poles 0, -1, -2, ...
double gamma_fn(double x);

/// H_xi(x) = 1/(2 Gamma(-xi)) * int_0^inf exp(-s - 2 x sqrt(s)) s^{-xi/2-1} ds,
/// for xi < 0 and x >= 0.
double hermite_h(double xi, double x, const SpecEvalConfig& cfg = {});

/// d/dx H_xi(x) = 2 xi H_{xi-1}(x).
double hermite_h_dx(double xi, double x, const SpecEvalConfig& cfg = {});

/// psi(lambda) = alpha 2^{1+lambda/alpha} Gamma(1/2 + lambda/(2 alpha))^2
///               / (sqrt(2 pi) Gamma(lambda/alpha)),  lambda > -alpha.
/// psi(0) = 0. Negative on (-alpha, 0).
double laplace_exponent(double lambda, const OUParams& params);

/// E[tau_1] = psi'(0), independent of alpha.
inline double mean_inverse_local_time() { return 2.5066282746310002; }

/// j(lambda, r) = E[exp(-lambda T_0) | R_0 = r], lambda > 0.
double hitting_transform(double lambda, double r, const OUParams& params,
                         HittingArgument arg = HittingArgument::sqrt_alpha,
                         const SpecEvalConfig& cfg = {});

/// g(t, r, k) = exp(-beta t) j(beta, |r|) (1 - exp(-(1-k) psi(beta))) / psi(beta)
double beta_potential(double t, double r, double k, double beta, const OUParams& params,
                      const SpecEvalConfig& cfg = {});

double nu_feedback(double r, double beta, const OUParams& params, NuVariant variant,
                   const SpecEvalConfig& cfg = {});

/// Tabulated nu_feedback on |r| in [0, r_max] with linear interpolation; the
/// tail beyond r_max is continued as C/|r|. Odd in r by construction.
class NuTable {
public:
    NuTable() = default;
    NuTable(double beta, const OUParams& params, NuVariant variant, double r_max = 8.0,
            double step = 2.5e-3, const SpecEvalConfig& cfg = {});

    double operator()(double r) const;
    double sup_abs() const { return sup_abs_; }

private:
    std::vector<double> values_;
    double step_ = 1.0;
    double r_max_ = 0.0;
    double sup_abs_ = 0.0;
};

}  // namespace stoclock
