#include "stoclock/utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stoclock {

namespace {

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw std::domain_error(std::string(what) + ": argument must be positive");
}

}  // namespace

const char* to_string(UtilityFamily f) {
    switch (f) {
        case UtilityFamily::log: return "log";
        case UtilityFamily::power: return "power";
        case UtilityFamily::custom: return "custom";
    }
    return "?";
}

UtilityField UtilityField::log(double beta) {
    if (!(beta >= 0.0)) throw std::invalid_argument("UtilityField: beta must be >= 0");
    UtilityField f;
    f.family_ = UtilityFamily::log;
    f.beta_ = beta;
    return f;
}

UtilityField UtilityField::power(double gamma, double beta) {
    if (!(gamma < 1.0) || gamma == 0.0 || !std::isfinite(gamma))
        throw std::invalid_argument("UtilityField: power family needs gamma < 1, gamma != 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("UtilityField: beta must be >= 0");
    UtilityField f;
    f.family_ = UtilityFamily::power;
    f.gamma_ = gamma;
    f.beta_ = beta;
    return f;
}

UtilityField UtilityField::custom(CustomField c, double beta) {
    if (!c.u || !c.u_prime) throw std::invalid_argument("UtilityField: custom field needs u and u_prime");
    if (!(beta >= 0.0)) throw std::invalid_argument("UtilityField: beta must be >= 0");
    UtilityField f;
    f.family_ = UtilityFamily::custom;
    f.beta_ = beta;
    f.custom_ = std::move(c);
    return f;
}

std::string UtilityField::name() const {
    switch (family_) {
        case UtilityFamily::log: return "log";
        case UtilityFamily::power: return "power(" + std::to_string(gamma_) + ")";
        case UtilityFamily::custom: return custom_.name;
    }
    return "?";
}

// Custom callbacks receive t and carry their own discounting.
double UtilityField::u(double t, double x) const {
    require_positive(x, "u_eval");
    switch (family_) {
        case UtilityFamily::log: return std::exp(-beta_ * t) * std::log(x);
        case UtilityFamily::power: return std::exp(-beta_ * t) * std::expm1(gamma_ * std::log(x)) / gamma_;
        case UtilityFamily::custom: return custom_.u(t, x);
    }
    return 0.0;
}

double UtilityField::u_prime(double t, double x) const {
    require_positive(x, "u_prime");
    switch (family_) {
        case UtilityFamily::log: return std::exp(-beta_ * t) / x;
        case UtilityFamily::power: return std::exp(-beta_ * t + (gamma_ - 1.0) * std::log(x));
        case UtilityFamily::custom: return custom_.u_prime(t, x);
    }
    return 0.0;
}

double UtilityField::u_second(double t, double x) const {
    require_positive(x, "u_second");
    switch (family_) {
        case UtilityFamily::log: return -std::exp(-beta_ * t) / (x * x);
        case UtilityFamily::power:
            return (gamma_ - 1.0) * std::exp(-beta_ * t + (gamma_ - 2.0) * std::log(x));
        case UtilityFamily::custom:
            if (!custom_.u_second) throw std::logic_error("custom field has no u_second");
            return custom_.u_second(t, x);
    }
    return 0.0;
}

double UtilityField::u_at_zero(double t) const {
    switch (family_) {
        case UtilityFamily::log: return -std::numeric_limits<double>::infinity();
        case UtilityFamily::power:
            return gamma_ < 0.0 ? -std::numeric_limits<double>::infinity()
                                : -std::exp(-beta_ * t) / gamma_;
        case UtilityFamily::custom: return custom_.u(t, std::numeric_limits<double>::min());
    }
    return 0.0;
}

double UtilityField::inverse_marginal(double t, double y) const {
    require_positive(y, "inverse_marginal");
    switch (family_) {
        case UtilityFamily::log: return std::exp(-beta_ * t) / y;
        case UtilityFamily::power: return std::exp((std::log(y) + beta_ * t) / (gamma_ - 1.0));
        case UtilityFamily::custom:
            if (!custom_.inverse_marginal)
                throw std::logic_error("custom field has no inverse_marginal");
            return custom_.inverse_marginal(t, y);
    }
    return 0.0;
}

double UtilityField::conjugate(double t, double y) const {
    require_positive(y, "conjugate");
    switch (family_) {
        case UtilityFamily::log: return std::exp(-beta_ * t) * (-beta_ * t - std::log(y) - 1.0);
        case UtilityFamily::power: {
            // V = (1-gamma)/gamma * y I - d/gamma with d = exp(-beta t), since d I^gamma = y I.
            const double i = inverse_marginal(t, y);
            return (1.0 - gamma_) / gamma_ * y * i - std::exp(-beta_ * t) / gamma_;
        }
        case UtilityFamily::custom: {
            const double i = inverse_marginal(t, y);
            return u(t, i) - y * i;
        }
    }
    return 0.0;
}

double UtilityField::conjugate_prime(double t, double y) const { return -inverse_marginal(t, y); }

double UtilityField::conjugate_second(double t, double y) const {
    switch (family_) {
        case UtilityFamily::log: require_positive(y, "conjugate_second"); return std::exp(-beta_ * t) / (y * y);
        case UtilityFamily::power: return -inverse_marginal(t, y) / ((gamma_ - 1.0) * y);
        case UtilityFamily::custom: return -1.0 / u_second(t, inverse_marginal(t, y));
    }
    return 0.0;
}

double u_eval(const UtilityField& f, double t, double x) { return f.u(t, x); }
double u_prime(const UtilityField& f, double t, double x) { return f.u_prime(t, x); }
double inverse_marginal(const UtilityField& f, double t, double y) { return f.inverse_marginal(t, y); }
double conjugate(const UtilityField& f, double t, double y) { return f.conjugate(t, y); }

std::optional<std::pair<double, double>> scaling_constants(const UtilityField& f, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::domain_error("scaling_constants: delta in (0,1)");
    switch (f.family()) {
        case UtilityFamily::log: return std::pair{std::log(delta), 1.0};
        case UtilityFamily::power: {
            const double b = std::pow(delta, f.gamma());
            return std::pair{(b - 1.0) / f.gamma(), b};
        }
        case UtilityFamily::custom: return std::nullopt;
    }
    return std::nullopt;
}

ElasticityProfile elasticity_profile(const UtilityField& f, const std::vector<double>& x_grid,
                                     double t) {
    for (std::size_t i = 1; i < x_grid.size(); ++i)
        if (!(x_grid[i] > x_grid[i - 1]))
            throw std::invalid_argument("elasticity_profile: x_grid must be increasing");
    ElasticityProfile p;
    p.x = x_grid;
    std::vector<double> valid;
    for (double x : x_grid) {
        const double u = f.u(t, x);
        const double e = u > 0.0 ? x * f.u_prime(t, x) / u : std::numeric_limits<double>::quiet_NaN();
        p.elasticity.push_back(e);
        if (u > 0.0) valid.push_back(e);
    }
    if (!valid.empty()) {
        const std::size_t start = valid.size() - std::max<std::size_t>(1, valid.size() / 4);
        p.tail_sup = *std::max_element(valid.begin() + static_cast<std::ptrdiff_t>(start), valid.end());
    }
    if (f.family() == UtilityFamily::log) p.analytic_limit = 0.0;
    if (f.family() == UtilityFamily::power) p.analytic_limit = std::max(f.gamma(), 0.0);
    p.flagged = p.tail_sup >= 1.0;
    return p;
}

bool FieldValidation::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const FieldCheck& c) { return c.pass; });
}

FieldValidation validate_field(const UtilityField& f, const std::vector<double>& t_grid,
                               const std::vector<double>& x_grid) {
    FieldValidation out;
    double worst_concave = 0.0;
    double worst_increase = 0.0;
    double worst_identity = 0.0;
    double worst_roundtrip = 0.0;
    bool inada = true;
    const bool has_inverse = f.family() != UtilityFamily::custom;
    for (double t : t_grid) {
        for (std::size_t i = 0; i < x_grid.size(); ++i) {
            for (std::size_t j = i + 1; j < x_grid.size(); ++j) {
                const double a = x_grid[i];
                const double b = x_grid[j];
                const double mid = f.u(t, 0.5 * (a + b));
                const double chord = 0.5 * (f.u(t, a) + f.u(t, b));
                worst_concave = std::max(worst_concave, chord - mid);
                const double step = a < b ? f.u(t, b) - f.u(t, a) : f.u(t, a) - f.u(t, b);
                worst_increase = std::max(worst_increase, -step);
            }
        }
        const double u1 = f.u_prime(t, 1.0);
        inada = inada && f.u_prime(t, 1e-300) > 10.0 * u1 && f.u_prime(t, 1e300) < 0.1 * u1;
        if (has_inverse) {
            for (double y : x_grid) {
                const double i = f.inverse_marginal(t, y);
                const double lhs = f.u(t, i);
                const double rhs = f.conjugate(t, y) + y * i;
                worst_identity = std::max(worst_identity, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
                worst_roundtrip = std::max(worst_roundtrip, std::abs(f.u_prime(t, i) - y) / y);
            }
        }
    }
    out.checks.push_back({"concave (midpoint)", worst_concave <= 1e-12, worst_concave});
    out.checks.push_back({"increasing", worst_increase <= 0.0, worst_increase});
    out.checks.push_back({"inada endpoints", inada, 0.0});
    if (has_inverse) {
        out.checks.push_back({"conjugate identity", worst_identity <= 1e-10, worst_identity});
        out.checks.push_back({"marginal round trip", worst_roundtrip <= 1e-10, worst_roundtrip});
    }
    std::vector<double> tail;
    for (double x = 10.0; x <= 1e12; x *= 10.0) tail.push_back(x);
    const ElasticityProfile ep = elasticity_profile(f, tail);
    out.checks.push_back({"asymptotic elasticity < 1", !ep.flagged, ep.tail_sup});
    return out;
}

}  // namespace stoclock
