#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stoclock/utility.hpp"

#include <cmath>
#include <vector>

using namespace stoclock;

namespace {

const std::vector<double> kT = {0.0, 0.5, 2.0};
const std::vector<double> kX = {0.01, 0.2, 1.0, 3.0, 50.0};

std::vector<UtilityField> builtins() {
    return {UtilityField::log(0.0), UtilityField::log(0.3), UtilityField::power(0.5, 0.1),
            UtilityField::power(-1.0, 0.2)};
}

}  // namespace

TEST_CASE("log field closed forms") {
    const double beta = 0.3;
    const UtilityField f = UtilityField::log(beta);
    for (double t : kT) {
        const double d = std::exp(-beta * t);
        for (double x : kX) {
            CHECK(f.u(t, x) == doctest::Approx(d * std::log(x)));
            CHECK(f.u_prime(t, x) == doctest::Approx(d / x));
            CHECK(f.u_second(t, x) == doctest::Approx(-d / (x * x)));
        }
        for (double y : {0.1, 1.0, 7.0}) {
            CHECK(f.inverse_marginal(t, y) == doctest::Approx(d / y));
            CHECK(f.conjugate(t, y) == doctest::Approx(d * (std::log(d / y) - 1.0)));
        }
        CHECK(std::isinf(f.u_at_zero(t)));
    }
}

TEST_CASE("power field closed forms") {
    const double g = 0.5, beta = 0.1;
    const UtilityField f = UtilityField::power(g, beta);
    for (double t : kT) {
        const double d = std::exp(-beta * t);
        for (double x : kX) {
            CHECK(f.u(t, x) == doctest::Approx(d * (std::pow(x, g) - 1.0) / g));
            CHECK(f.u_prime(t, x) == doctest::Approx(d * std::pow(x, g - 1.0)));
        }
        for (double y : {0.1, 1.0, 7.0})
            CHECK(f.inverse_marginal(t, y) == doctest::Approx(std::pow(y / d, 1.0 / (g - 1.0))));
        CHECK(f.u_at_zero(t) == doctest::Approx(-d / g));
    }
    CHECK_THROWS(UtilityField::power(1.0));
    CHECK_THROWS(UtilityField::power(0.0));
}

TEST_CASE("derivatives against finite differences") {
    for (const UtilityField& f : builtins()) {
        CAPTURE(f.name());
        for (double t : kT) {
            for (double x : {0.3, 1.0, 4.0}) {
                const double h = 1e-5 * x;
                CHECK(f.u_prime(t, x) == doctest::Approx((f.u(t, x + h) - f.u(t, x - h)) / (2 * h)).epsilon(1e-6));
                CHECK(f.u_second(t, x) ==
                      doctest::Approx((f.u_prime(t, x + h) - f.u_prime(t, x - h)) / (2 * h)).epsilon(1e-5));
            }
            for (double y : {0.2, 1.0, 3.0}) {
                const double h = 1e-5 * y;
                CHECK(f.conjugate_prime(t, y) ==
                      doctest::Approx((f.conjugate(t, y + h) - f.conjugate(t, y - h)) / (2 * h)).epsilon(1e-6));
                CHECK(f.conjugate_second(t, y) ==
                      doctest::Approx((f.conjugate_prime(t, y + h) - f.conjugate_prime(t, y - h)) / (2 * h))
                          .epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("Fenchel inequality and equality at I(y)") {
    for (const UtilityField& f : builtins()) {
        for (double t : kT)
            for (double y : {0.05, 0.5, 2.0, 20.0}) {
                const double v = f.conjugate(t, y);
                for (double x : kX) CHECK(v >= f.u(t, x) - x * y - 1e-12);
                const double xi = f.inverse_marginal(t, y);
                CHECK(v == doctest::Approx(f.u(t, xi) - xi * y));
                CHECK(f.u_prime(t, xi) == doctest::Approx(y));
            }
    }
}

TEST_CASE("free functions forward to the field") {
    const UtilityField f = UtilityField::power(0.5, 0.0);
    CHECK(u_eval(f, 0.0, 4.0) == f.u(0.0, 4.0));
    CHECK(u_prime(f, 0.0, 4.0) == f.u_prime(0.0, 4.0));
    CHECK(inverse_marginal(f, 0.0, 2.0) == f.inverse_marginal(0.0, 2.0));
    CHECK(conjugate(f, 0.0, 2.0) == f.conjugate(0.0, 2.0));
}

TEST_CASE("scaling constants bound U(t, delta x) from below") {
    for (const UtilityField& f : builtins()) {
        for (double delta : {0.1, 0.3, 0.9}) {
            const auto ab = scaling_constants(f, delta);
            REQUIRE(ab.has_value());
            for (double t : kT)
                for (double x : kX)
                    CHECK(f.u(t, delta * x) >= ab->first + ab->second * f.u(t, x) - 1e-9 * (1 + std::abs(f.u(t, x))));
        }
        CHECK_THROWS(scaling_constants(f, 1.5));
    }
}

TEST_CASE("asymptotic elasticity") {
    std::vector<double> grid;
    for (int i = 0; i < 40; ++i) grid.push_back(std::pow(10.0, 0.25 * i));
    const ElasticityProfile lg = elasticity_profile(UtilityField::log(), grid);
    CHECK_FALSE(lg.flagged);
    REQUIRE(lg.analytic_limit.has_value());
    CHECK(*lg.analytic_limit == 0.0);
    CHECK(lg.tail_sup < 0.2);
    const ElasticityProfile pw = elasticity_profile(UtilityField::power(0.5), grid);
    CHECK_FALSE(pw.flagged);
    CHECK(pw.tail_sup == doctest::Approx(0.5).epsilon(0.01));
    CHECK(pw.tail_sup < 1.0);

    // U(x) = x / log(x + e) has elasticity tending to 1.
    CustomField c;
    c.u = [](double, double x) { return x / std::log(x + std::exp(1.0)); };
    c.u_prime = [](double, double x) {
        const double l = std::log(x + std::exp(1.0));
        return 1.0 / l - x / ((x + std::exp(1.0)) * l * l);
    };
    const ElasticityProfile cu = elasticity_profile(UtilityField::custom(c), grid);
    CHECK(cu.tail_sup > 0.9);
}

TEST_CASE("field validation passes for the built-in families") {
    for (const UtilityField& f : builtins()) {
        const FieldValidation v = validate_field(f, kT, kX);
        for (const auto& c : v.checks) {
            CAPTURE(f.name());
            CAPTURE(c.name);
            CHECK(c.pass);
        }
    }
}

TEST_CASE("field validation flags a convex function") {
    CustomField c;
    c.u = [](double, double x) { return x * x; };
    c.u_prime = [](double, double x) { return 2.0 * x; };
    c.u_second = [](double, double) { return 2.0; };
    const FieldValidation v = validate_field(UtilityField::custom(c), kT, kX);
    CHECK_FALSE(v.all_pass());
}
