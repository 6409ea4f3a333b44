#include "stoclock/specfun.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace stoclock {

namespace {

std::size_t refinements_for(int max_subdiv) {
    // Each double-exponential refinement halves the step, so the node count
    // at level k is ~2^k per unit of the transformed range.
    const int levels = static_cast<int>(std::ceil(std::log2(static_cast<double>(max_subdiv))));
    return static_cast<std::size_t>(std::clamp(levels, 4, 20));
}

double sign_of(double r) { return r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0); }

// 1 / H_{-z}(0) written through log-gamma: 2^z Gamma((1+z)/2) / Gamma(1/2).
double hitting_prefactor(double z) {
    return std::exp(z * std::numbers::ln2 + std::lgamma(0.5 * (1.0 + z)) -
                    std::lgamma(0.5));
}

}  // namespace

void OUParams::validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument("OUParams: alpha must be positive and finite");
}

void SpecEvalConfig::validate() const {
    if (!(quad_rel_tol > 0.0 && quad_rel_tol < 1e-4))
        throw std::invalid_argument("SpecEvalConfig: quad_rel_tol must lie in (0, 1e-4)");
    if (quad_max_subdiv < 16)
        throw std::invalid_argument("SpecEvalConfig: quad_max_subdiv must be >= 16");
}

const char* to_string(HittingArgument a) {
    return a == HittingArgument::sqrt_alpha ? "sqrt_alpha" : "over_sqrt2";
}

const char* to_string(NuVariant v) { return v == NuVariant::derived ? "derived" : "literal"; }

NuVariant parse_nu_variant(const std::string& s) {
    if (s == "derived") return NuVariant::derived;
    if (s == "literal") return NuVariant::literal;
    throw std::invalid_argument("unknown nu variant '" + s + "' (expected derived|literal)");
}

double gamma_fn(double x) {
    if (std::isnan(x)) throw std::domain_error("gamma_fn: NaN argument");
    if (x <= 0.0 && x == std::floor(x))
        throw std::domain_error("gamma_fn: pole at non-positive integer " + std::to_string(x));
    return std::tgamma(x);
}

double hermite_h(double xi, double x, const SpecEvalConfig& cfg) {
    if (!(xi < 0.0)) throw std::domain_error("hermite_h: requires xi < 0");
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::domain_error("hermite_h: requires x >= 0");
    cfg.validate();

    // With s = u^2 the integral becomes int_0^inf exp(-u^2 - 2xu) u^a du,
    // a = -xi - 1 > -1. On [0,1] the further change v = u^{a+1}/(a+1)
    // absorbs the u^a factor so the integrand is bounded at the origin.
    const double a = -xi - 1.0;
    const double ap1 = a + 1.0;
    const double v_max = 1.0 / ap1;
    auto head = [x, ap1](double v) {
        const double u = std::pow(ap1 * v, 1.0 / ap1);
        return std::exp(-u * (u + 2.0 * x));
    };
    auto tail = [x, a](double u) {
        if (!(u > 0.0) || !std::isfinite(u)) return 0.0;
        return std::exp(-u * (u + 2.0 * x) + a * std::log(u));
    };

    const std::size_t levels = refinements_for(cfg.quad_max_subdiv);
    boost::math::quadrature::tanh_sinh<double> ts(levels);
    boost::math::quadrature::exp_sinh<double> es(levels);

    // The reported error is the change over the last refinement, which lags
    // the true error; asking for 100x more forces one extra level.
    const double target = std::max(cfg.quad_rel_tol * 1e-2, 1e-15);
    double err_head = 0.0;
    double err_tail = 0.0;
    double l1 = 0.0;
    const double inner = ts.integrate(head, 0.0, v_max, target, &err_head, &l1);
    const double outer =
        es.integrate(tail, 1.0, std::numeric_limits<double>::infinity(), target, &err_tail, &l1);
    const double total = inner + outer;
    const double achieved = (err_head + err_tail) / std::abs(total);
    if (!std::isfinite(total) || !(total > 0.0) || achieved > cfg.quad_rel_tol) {
        std::ostringstream os;
        os << "hermite_h(" << xi << ", " << x << "): quadrature reached relative error "
           << achieved << " > " << cfg.quad_rel_tol;
        throw NumericalError(os.str(), achieved);
    }
    return total / std::tgamma(-xi);
}

double hermite_h_dx(double xi, double x, const SpecEvalConfig& cfg) {
    return 2.0 * xi * hermite_h(xi - 1.0, x, cfg);
}

double laplace_exponent(double lambda, const OUParams& params) {
    params.validate();
    if (!(lambda > -params.alpha))
        throw std::domain_error(
            "laplace_exponent: E[exp(-lambda tau_s)] is infinite for lambda <= -alpha");
    if (lambda == 0.0) return 0.0;
    const double z = lambda / params.alpha;
    // Gamma(z) < 0 on (-1, 0); the squared factor stays positive.
    const double sign = z < 0.0 ? -1.0 : 1.0;
    const double log_mag = std::log(params.alpha) + (1.0 + z) * std::numbers::ln2 +
                           2.0 * std::lgamma(0.5 + 0.5 * z) -
                           0.5 * std::log(2.0 * std::numbers::pi) - std::lgamma(z);
    return sign * std::exp(log_mag);
}

double hitting_transform(double lambda, double r, const OUParams& params, HittingArgument arg,
                         const SpecEvalConfig& cfg) {
    params.validate();
    if (!(lambda > 0.0)) throw std::domain_error("hitting_transform: requires lambda > 0");
    const double z = lambda / params.alpha;
    const double scale =
        arg == HittingArgument::sqrt_alpha ? std::sqrt(params.alpha) : std::numbers::sqrt2 / 2.0;
    return hitting_prefactor(z) * hermite_h(-z, std::abs(r) * scale, cfg);
}

double beta_potential(double t, double r, double k, double beta, const OUParams& params,
                      const SpecEvalConfig& cfg) {
    if (!(beta > 0.0)) throw std::domain_error("beta_potential: requires beta > 0");
    if (!(k >= 0.0 && k <= 1.0)) throw std::domain_error("beta_potential: requires k in [0,1]");
    if (k == 1.0) return 0.0;
    const double psi = laplace_exponent(beta, params);
    const double j = hitting_transform(beta, r, params, HittingArgument::sqrt_alpha, cfg);
    return std::exp(-beta * t) * j * (-std::expm1(-(1.0 - k) * psi)) / psi;
}

double nu_feedback(double r, double beta, const OUParams& params, NuVariant variant,
                   const SpecEvalConfig& cfg) {
    params.validate();
    if (!(beta > 0.0)) throw std::domain_error("nu_feedback: requires beta > 0");
    if (r == 0.0) return 0.0;
    const double xi = -beta / params.alpha;
    const double s = sign_of(r);
    if (variant == NuVariant::derived) {
        const double z = std::abs(r) * std::sqrt(params.alpha);
        const double ratio = hermite_h(xi - 1.0, z, cfg) / hermite_h(xi, z, cfg);
        return -s * (2.0 * beta / std::sqrt(params.alpha)) * ratio;
    }
    const double z = std::abs(r) / std::numbers::sqrt2;
    const double h = -(2.0 * beta / params.alpha) * hermite_h(xi - 1.0, z, cfg) / hermite_h(xi, z, cfg);
    return -s * h;
}

NuTable::NuTable(double beta, const OUParams& params, NuVariant variant, double r_max,
                 double step, const SpecEvalConfig& cfg)
    : step_(step), r_max_(r_max) {
    if (!(step > 0.0) || !(r_max > step))
        throw std::invalid_argument("NuTable: need 0 < step < r_max");
    const auto n = static_cast<std::size_t>(std::ceil(r_max / step));
    r_max_ = static_cast<double>(n) * step;
    values_.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        values_[i] = nu_feedback(static_cast<double>(i) * step, beta, params, variant, cfg);
        sup_abs_ = std::max(sup_abs_, std::abs(values_[i]));
    }
    // Right-limit at 0+ replaces the sgn(0) = 0 convention at the first node so
    // that interpolation near zero follows the one-sided limit.
    if (n >= 2) values_[0] = 2.0 * values_[1] - values_[2];
    sup_abs_ = std::max(sup_abs_, std::abs(values_[0]));
}

double NuTable::operator()(double r) const {
    if (values_.empty()) return 0.0;
    if (r == 0.0) return 0.0;
    const double a = std::abs(r);
    const double s = r > 0 ? 1.0 : -1.0;
    if (a >= r_max_) return s * values_.back() * (r_max_ / a);
    const double pos = a / step_;
    const auto i = static_cast<std::size_t>(pos);
    const double w = pos - static_cast<double>(i);
    return s * ((1.0 - w) * values_[i] + w * values_[i + 1]);
}

}  // namespace stoclock
