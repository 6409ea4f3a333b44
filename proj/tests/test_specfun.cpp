#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stoclock/specfun.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>

using namespace stoclock;

namespace {

double h_minus_one(double x) {
    return std::exp(x * x) * std::sqrt(std::numbers::pi) / 2.0 * std::erfc(x);
}

// psi from the resolvent of the OU transition density at 0, normalized so
// that psi'(0) = sqrt(2 pi).
double psi_from_resolvent(double lambda, double alpha) {
    boost::math::quadrature::tanh_sinh<double> ts;
    auto f = [&](double u) {
        const double v = -std::expm1(2.0 * alpha * std::log(u)) / (2.0 * alpha);
        return std::pow(u, lambda - 1.0) / std::sqrt(2.0 * std::numbers::pi * v);
    };
    return std::sqrt(2.0 * alpha) / ts.integrate(f, 0.0, 1.0);
}

}  // namespace

TEST_CASE("H_{-1} matches the erfc closed form") {
    for (int i = 0; i <= 50; ++i) {
        const double x = 0.1 * i;
        CHECK(hermite_h(-1.0, x) == doctest::Approx(h_minus_one(x)).epsilon(1e-9));
    }
}

TEST_CASE("three-term recurrence gives H_{-2}") {
    // H_0 = 2x H_{-1} + 2 H_{-2}
    for (double x : {0.0, 0.3, 1.0, 2.5}) {
        const double expect = (1.0 - 2.0 * x * h_minus_one(x)) / 2.0;
        CHECK(hermite_h(-2.0, x) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("H_xi at the origin") {
    // H_xi(0) = 2^xi sqrt(pi) / Gamma((1 - xi)/2)
    for (double xi : {-0.25, -0.5, -1.7, -3.0}) {
        const double expect = std::pow(2.0, xi) * std::sqrt(std::numbers::pi) / std::tgamma((1.0 - xi) / 2.0);
        CHECK(hermite_h(xi, 0.0) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("derivative identity against central differences") {
    const double h = 1e-4;
    for (double xi : {-0.3, -1.0, -2.4}) {
        for (double x : {0.1, 0.7, 2.0, 4.0}) {
            const double fd = (hermite_h(xi, x + h) - hermite_h(xi, x - h)) / (2.0 * h);
            CHECK(hermite_h_dx(xi, x) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("H_xi is positive and decreasing for xi < 0") {
    for (double xi : {-0.1, -0.9, -4.0}) {
        double prev = hermite_h(xi, 0.0);
        for (int i = 1; i <= 30; ++i) {
            const double v = hermite_h(xi, 0.2 * i);
            CHECK(v > 0.0);
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("domain errors") {
    CHECK_THROWS_AS(hermite_h(0.5, 1.0), std::domain_error);
    CHECK_THROWS_AS(hermite_h(-1.0, -0.1), std::domain_error);
    CHECK_THROWS_AS(gamma_fn(-2.0), std::domain_error);
    CHECK_THROWS_AS(gamma_fn(0.0), std::domain_error);
    CHECK(gamma_fn(0.5) == doctest::Approx(std::sqrt(std::numbers::pi)));
    OUParams p;
    CHECK_THROWS_AS(laplace_exponent(-1.5, p), std::domain_error);
    CHECK_THROWS_AS(hitting_transform(0.0, 1.0, p), std::domain_error);
}

TEST_CASE("laplace exponent matches the resolvent integral") {
    for (double alpha : {0.5, 1.0, 2.0}) {
        OUParams p{alpha};
        for (double lambda : {0.5, 1.0, 2.0}) {
            CHECK(laplace_exponent(lambda, p) ==
                  doctest::Approx(psi_from_resolvent(lambda, alpha)).epsilon(1e-8));
        }
    }
}

TEST_CASE("laplace exponent near zero and on (-alpha, 0)") {
    OUParams p{1.0};
    CHECK(laplace_exponent(0.0, p) == 0.0);
    CHECK(std::abs(laplace_exponent(1e-4, p) / 1e-4 - std::sqrt(2.0 * std::numbers::pi)) < 1e-3);
    CHECK(laplace_exponent(1.0, p) == doctest::Approx(4.0 / std::sqrt(2.0 * std::numbers::pi)));
    for (double l : {-0.9, -0.5, -0.1}) CHECK(laplace_exponent(l, p) < 0.0);
    // Increasing and concave on a grid.
    double prev = laplace_exponent(-0.95, p), prev_slope = INFINITY;
    for (int i = 1; i < 60; ++i) {
        const double l = -0.95 + 0.1 * i;
        const double v = laplace_exponent(l, p);
        const double slope = (v - prev) / 0.1;
        CHECK(slope > 0.0);
        CHECK(slope <= prev_slope * (1.0 + 1e-12));
        prev = v;
        prev_slope = slope;
    }
}

TEST_CASE("hitting transform") {
    SUBCASE("equals one at the origin") {
        for (double alpha : {0.5, 1.0, 3.0})
            for (double lambda : {0.1, 1.0, 5.0})
                CHECK(std::abs(hitting_transform(lambda, 0.0, OUParams{alpha}) - 1.0) <= 1e-10);
    }
    SUBCASE("lambda = alpha reduces to erfc") {
        for (double alpha : {0.5, 2.0})
            for (double r : {0.2, 1.0, 2.0}) {
                const double z = r * std::sqrt(alpha);
                const double expect = std::exp(z * z) * std::erfc(z);
                CHECK(hitting_transform(alpha, r, OUParams{alpha}) == doctest::Approx(expect).epsilon(1e-9));
            }
    }
    SUBCASE("solves the backward equation 1/2 j'' - alpha r j' = lambda j") {
        const double h = 1e-3;
        for (double alpha : {0.5, 1.0, 2.0}) {
            OUParams p{alpha};
            for (double r : {0.3, 1.0, 1.8}) {
                const double lambda = 0.7;
                const double jm = hitting_transform(lambda, r - h, p);
                const double j0 = hitting_transform(lambda, r, p);
                const double jp = hitting_transform(lambda, r + h, p);
                const double lhs = 0.5 * (jp - 2.0 * j0 + jm) / (h * h) - alpha * r * (jp - jm) / (2.0 * h);
                CHECK(lhs == doctest::Approx(lambda * j0).epsilon(1e-5));
            }
        }
    }
    SUBCASE("the two argument forms agree only at alpha = 1/2") {
        CHECK(hitting_transform(1.0, 1.3, OUParams{0.5}, HittingArgument::over_sqrt2) ==
              doctest::Approx(hitting_transform(1.0, 1.3, OUParams{0.5})).epsilon(1e-12));
        CHECK(std::abs(hitting_transform(1.0, 1.3, OUParams{1.0}, HittingArgument::over_sqrt2) -
                       hitting_transform(1.0, 1.3, OUParams{1.0})) > 1e-2);
    }
    SUBCASE("symmetric and decreasing in |r|") {
        OUParams p{1.0};
        double prev = 1.0;
        for (int i = 1; i <= 20; ++i) {
            const double r = 0.15 * i;
            const double v = hitting_transform(1.0, r, p);
            CHECK(v == doctest::Approx(hitting_transform(1.0, -r, p)).epsilon(1e-14));
            CHECK(v < prev);
            prev = v;
        }
    }
}

TEST_CASE("beta potential") {
    OUParams p{1.0};
    const double beta = 1.0;
    const double psi = laplace_exponent(beta, p);
    CHECK(beta_potential(0.3, 0.5, 1.0, beta, p) == 0.0);
    CHECK(beta_potential(0.0, 0.0, 0.0, beta, p) == doctest::Approx(-std::expm1(-psi) / psi));
    const double t = 0.4, r = 0.8, k = 0.3;
    const double expect = std::exp(-beta * t) * hitting_transform(beta, r, p) * -std::expm1(-(1.0 - k) * psi) / psi;
    CHECK(beta_potential(t, r, k, beta, p) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("feedback drift") {
    const double beta = 1.0;
    SUBCASE("derived variant is the log-derivative of j") {
        const double h = 1e-5;
        for (double alpha : {0.5, 1.0, 2.0}) {
            OUParams p{alpha};
            for (double r : {0.2, 0.9, 2.2}) {
                const double fd = (std::log(hitting_transform(beta, r + h, p)) -
                                   std::log(hitting_transform(beta, r - h, p))) / (2.0 * h);
                CHECK(nu_feedback(r, beta, p, NuVariant::derived) == doctest::Approx(fd).epsilon(1e-6));
                CHECK(nu_feedback(-r, beta, p, NuVariant::derived) == doctest::Approx(-fd).epsilon(1e-6));
            }
        }
    }
    SUBCASE("odd in r, zero at the origin") {
        OUParams p{1.0};
        for (NuVariant v : {NuVariant::derived, NuVariant::literal}) {
            CHECK(nu_feedback(0.0, beta, p, v) == 0.0);
            for (double r : {0.1, 0.5, 3.0})
                CHECK(nu_feedback(-r, beta, p, v) == doctest::Approx(-nu_feedback(r, beta, p, v)).epsilon(1e-14));
        }
    }
    SUBCASE("literal variant at alpha = 1/2 is -sqrt(2) times the derived one") {
        OUParams p{0.5};
        for (double r : {0.3, 1.0, 2.0})
            CHECK(nu_feedback(r, beta, p, NuVariant::literal) ==
                  doctest::Approx(-std::sqrt(2.0) * nu_feedback(r, beta, p, NuVariant::derived)).epsilon(1e-10));
    }
    SUBCASE("table interpolates and is bounded") {
        OUParams p{1.0};
        NuTable tab(beta, p, NuVariant::derived);
        for (double r : {-7.3, -2.0, -0.01, 0.0, 0.4, 1.234, 5.5}) {
            CHECK(tab(r) == doctest::Approx(nu_feedback(r, beta, p, NuVariant::derived)).epsilon(1e-5));
            CHECK(std::abs(tab(r)) <= tab.sup_abs());
        }
        CHECK(std::abs(tab(50.0)) <= tab.sup_abs());
        CHECK(tab(-50.0) == doctest::Approx(-tab(50.0)));
    }
}
