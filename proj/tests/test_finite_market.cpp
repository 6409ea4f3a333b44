#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stoclock/finite_market.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace stoclock;

namespace {

std::string data(const std::string& name) { return std::string(STOCLOCK_DATA_DIR) + "/" + name; }

// Maximizer of sum_i w_i log(1 + h (r_i - 1)) over admissible h, by
// bisection on the decreasing derivative.
double best_log_fraction(const std::vector<double>& w, const std::vector<double>& r) {
    double lo = -1e300, hi = 1e300;
    for (double ri : r) {
        if (ri > 1.0) lo = std::max(lo, -1.0 / (ri - 1.0));
        if (ri < 1.0) hi = std::min(hi, 1.0 / (1.0 - ri));
    }
    auto slope = [&](double h) {
        double s = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) s += w[i] * (r[i] - 1.0) / (1.0 + h * (r[i] - 1.0));
        return s;
    };
    const double eps = 1e-12 * (hi - lo);
    auto tol = [](double a, double b) { return std::abs(a - b) < 1e-15; };
    const auto br = boost::math::tools::bisect([&](double h) { return -slope(h); }, lo + eps, hi - eps, tol);
    return 0.5 * (br.first + br.second);
}

// Log utility on a one-asset tree without endowment: V_n(X) = A_n log X + B_n.
struct LogDp {
    const EventTree& t;
    double beta;
    std::vector<double> A, B;

    explicit LogDp(const EventTree& tree, double b) : t(tree), beta(b), A(tree.size()), B(tree.size()) {
        for (std::size_t n = tree.size(); n-- > 0;) solve(n);
    }

    void solve(std::size_t n) {
        const double w = std::exp(-beta * t.time(n)) * t.dkappa(n);
        double S = 0.0, Bc = 0.0;
        std::vector<double> wc, rc;
        for (std::size_t c : t.children(n)) {
            S += t.prob(c) * A[c];
            Bc += t.prob(c) * B[c];
            wc.push_back(t.prob(c) * A[c]);
            rc.push_back(t.price(c)[0] / t.price(n)[0]);
        }
        A[n] = w + S;
        double b = Bc;
        // Utility is taken of the density C / dkappa.
        if (w > 0.0) b += w * std::log(w / (A[n] * t.dkappa(n)));
        if (S > 0.0) {
            const double h = best_log_fraction(wc, rc);
            double G = 0.0;
            for (std::size_t i = 0; i < wc.size(); ++i) G += wc[i] * std::log(1.0 + h * (rc[i] - 1.0));
            b += S * std::log(S / A[n]) + G;
        }
        B[n] = b;
    }

    double u(double x) const { return A[0] * std::log(x) + B[0]; }
};

std::string one_period(const std::vector<double>& up, const std::vector<double>& p, double root_dk = 0.0,
                       const std::vector<double>& endow = {}) {
    std::ostringstream os;
    os.precision(17);
    os << R"({"nodes": [{"id": "0", "price": [1.0], "dkappa": )" << root_dk;
    if (!endow.empty()) os << R"(, "endow": )" << endow[0];
    os << "}";
    for (std::size_t i = 0; i < up.size(); ++i) {
        os << R"(, {"id": "c)" << i << R"(", "parent": "0", "prob": )" << p[i] << R"(, "price": [)" << up[i]
           << R"(], "dkappa": )" << 1.0 - root_dk;
        if (!endow.empty()) os << R"(, "endow": )" << endow[i + 1];
        os << "}";
    }
    os << "]}";
    return os.str();
}

std::vector<double> flat(const EventTree& t, double v) { return std::vector<double>(t.size(), v); }

}  // namespace

TEST_CASE("tree parsing errors carry a location") {
    try {
        parse_tree("{\n  \"nodes\": [\n    {\"id\": \"0\" \"price\": 1}\n  ]\n}");
        FAIL("expected a TreeFormatError");
    } catch (const TreeFormatError& e) {
        CHECK(e.line() == 3);
        CHECK(e.column() > 0);
    }
    CHECK_THROWS_AS(parse_tree(one_period({2.0, 0.5}, {0.5, 0.4})), TreeFormatError);
    CHECK_THROWS_AS(parse_tree(R"({"nodes": [{"id": "0", "price": [1], "dkappa": 0.5}]})"), TreeFormatError);
    CHECK_THROWS_AS(parse_tree(R"({"nodes": [{"id": "0", "price": [1], "dkappa": 1, "colour": 2}]})"),
                    TreeFormatError);
    CHECK_THROWS_AS(load_tree(data("missing.json")), TreeFormatError);
}

TEST_CASE("martingale polytope vertices") {
    SUBCASE("binomial has the single measure (1/3, 2/3)") {
        const MartingalePolytope mp = martingale_polytope(load_tree(data("binomial.json")));
        REQUIRE(mp.vertices.size() == 1);
        CHECK(mp.vertices[0][0] == doctest::Approx(1.0 / 3.0));
        CHECK(mp.vertices[0][1] == doctest::Approx(2.0 / 3.0));
        CHECK(mp.has_equivalent_measure);
    }
    SUBCASE("one-period trinomial has two vertices") {
        const MartingalePolytope mp = martingale_polytope(parse_tree(one_period({2.0, 1.0, 0.5}, {0.3, 0.4, 0.3})));
        REQUIRE(mp.vertices.size() == 2);
        std::vector<std::vector<double>> v = mp.vertices;
        std::sort(v.begin(), v.end());
        CHECK(v[0][0] == doctest::Approx(0.0));
        CHECK(v[0][1] == doctest::Approx(1.0));
        CHECK(v[1][0] == doctest::Approx(1.0 / 3.0));
        CHECK(v[1][2] == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("two-period trinomial has six vertices") {
        // Root vertex (0,1,0) leaves two choices at m; (1/3,0,2/3) leaves
        // two at u times two at d.
        const MartingalePolytope mp = martingale_polytope(load_tree(data("trinomial_terminal.json")));
        CHECK(mp.vertices.size() == 6);
        const EventTree t = load_tree(data("trinomial_terminal.json"));
        for (const auto& q : mp.vertices) {
            double s = 0.0, m = 0.0;
            for (std::size_t l = 0; l < q.size(); ++l) {
                s += q[l];
                m += q[l] * t.price(t.leaf_node(l))[0];
                CHECK(q[l] >= -1e-15);
            }
            CHECK(s == doctest::Approx(1.0));
            CHECK(m == doctest::Approx(1.0));
        }
    }
    SUBCASE("one-sided moves leave the polytope empty") {
        const EventTree t = load_tree(data("arbitrage.json"));
        const MartingalePolytope mp = martingale_polytope(t);
        CHECK(mp.empty);
        CHECK_THROWS_AS(solve_primal(t, UtilityField::log(), 1.0), ArbitrageError);
        CHECK_THROWS_AS(verify_duality(t, UtilityField::log(), {1.0}, {1.0}), ArbitrageError);
    }
}

TEST_CASE("measure optimizer, hedging prices and superhedge") {
    const EventTree t = load_tree(data("trinomial_terminal.json"));
    std::vector<double> f(t.size(), 0.0);
    for (std::size_t l = 0; l < t.leaf_count(); ++l) f[t.leaf_node(l)] = t.price(t.leaf_node(l))[0];
    CHECK(optimize_over_measures(t, f, true).value == doctest::Approx(1.0));
    CHECK(optimize_over_measures(t, f, false).value == doctest::Approx(1.0));

    const HedgingPrices hp = hedging_prices(load_tree(data("trinomial_endowment.json")));
    CHECK(hp.lower == doctest::Approx(0.3));
    CHECK(hp.upper == doctest::Approx(0.2 + 0.5 / 3.0));

    const EventTree b = load_tree(data("binomial.json"));
    const OneStepHedge h = one_step_superhedge(b, 0, {3.0, 0.0});
    CHECK(h.capital == doctest::Approx(1.0));
    CHECK(h.position[0] == doctest::Approx(2.0));
}

TEST_CASE("binomial log closed form") {
    const EventTree t = load_tree(data("binomial.json"));
    const UtilityField f = UtilityField::log();
    const double k = 0.5 * std::log(1.5) + 0.5 * std::log(0.75);
    for (double x : {0.5, 1.0, 3.0}) {
        const PrimalSolution s = solve_primal(t, f, x);
        REQUIRE(s.feasible);
        CHECK(s.value == doctest::Approx(std::log(x) + k).epsilon(1e-12));
        CHECK(s.c[1] == doctest::Approx(1.5 * x).epsilon(1e-10));
        CHECK(s.c[2] == doctest::Approx(0.75 * x).epsilon(1e-10));
        CHECK(s.kkt_residual <= 1e-8);
    }
    for (double y : {0.5, 1.0, 2.0}) {
        const DualSolution d = solve_dual(t, f, y);
        CHECK(d.value == doctest::Approx(-std::log(y) - 1.0 + k).epsilon(1e-12));
        CHECK(d.v_prime == doctest::Approx(-1.0 / y).epsilon(1e-10));
    }
}

TEST_CASE("log trees match the dynamic-programming oracle") {
    for (const char* name : {"trinomial_terminal.json", "trinomial_uniform.json", "trinomial_random.json"}) {
        CAPTURE(name);
        const EventTree t = load_tree(data(name));
        const double beta = t.utility->beta;
        const LogDp dp(t, beta);
        for (double x : {0.5, 1.0, 2.0}) {
            const PrimalSolution s = solve_primal(t, UtilityField::log(beta), x);
            CHECK(s.value == doctest::Approx(dp.u(x)).epsilon(1e-9));
            CHECK(s.value_budget_form == doctest::Approx(dp.u(x)).epsilon(1e-9));
        }
    }
}

TEST_CASE("power utility on an iid trinomial is myopic") {
    const double g = 0.5;
    const std::vector<double> r = {2.0, 1.0, 0.5}, p = {0.3, 0.4, 0.3};
    double lo = -1.0 + 1e-12, hi = 2.0 - 1e-12;
    auto slope = [&](double h) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += p[i] * (r[i] - 1.0) * std::pow(1.0 + h * (r[i] - 1.0), g - 1.0);
        return s;
    };
    const auto br = boost::math::tools::bisect([&](double h) { return -slope(h); }, lo, hi,
                                               [](double a, double b) { return std::abs(a - b) < 1e-15; });
    const double h = 0.5 * (br.first + br.second);
    double M = 0.0;
    for (int i = 0; i < 3; ++i) M += p[i] * std::pow(1.0 + h * (r[i] - 1.0), g);

    const EventTree one = parse_tree(one_period(r, p));
    const EventTree two = load_tree(data("trinomial_terminal.json"));
    const UtilityField f = UtilityField::power(g);
    for (double x : {0.5, 2.0}) {
        CHECK(solve_primal(one, f, x).value == doctest::Approx((std::pow(x, g) * M - 1.0) / g).epsilon(1e-9));
        CHECK(solve_primal(two, f, x).value == doctest::Approx((std::pow(x, g) * M * M - 1.0) / g).epsilon(1e-9));
    }
}

TEST_CASE("weak duality holds on every pair of grid points") {
    for (const char* name : {"trinomial_uniform.json", "trinomial_endowment.json"}) {
        const EventTree t = load_tree(data(name));
        for (const UtilityField& f : {UtilityField::log(0.1), UtilityField::power(0.5, 0.1)}) {
            std::vector<double> u, v;
            const std::vector<double> xs = {0.1, 0.5, 1.0, 3.0}, ys = {0.2, 1.0, 4.0};
            for (double x : xs) u.push_back(solve_primal(t, f, x).value);
            for (double y : ys) v.push_back(solve_dual(t, f, y).value);
            for (std::size_t i = 0; i < xs.size(); ++i)
                for (std::size_t j = 0; j < ys.size(); ++j) CHECK(u[i] <= v[j] + xs[i] * ys[j] + 1e-9);
        }
    }
}

TEST_CASE("dual over the solid set agrees with the probability domain") {
    const EventTree t = load_tree(data("trinomial_uniform.json"));
    const UtilityField f = UtilityField::log(0.1);
    for (double y : {0.5, 2.0}) {
        const DualSolution a = solve_dual(t, f, y, DualDomain::probability);
        const DualSolution b = solve_dual(t, f, y, DualDomain::solid);
        CHECK(b.value <= a.value + 1e-9);
        CHECK(b.value == doctest::Approx(a.value).epsilon(1e-7));
    }
}

TEST_CASE("pairing: direct and recursive sums agree") {
    const EventTree t = load_tree(data("trinomial_random.json"));
    const MartingalePolytope mp = martingale_polytope(t);
    const MeasureElement m = make_measure(t, mp.equivalent_measure, 0.8, 1.7);
    const PairingResult one = pairing(t, flat(t, 1.0), m);
    CHECK(one.direct == doctest::Approx(0.8 * 1.7));
    CHECK(one.recursive == doctest::Approx(0.8 * 1.7));
    std::vector<double> c(t.size());
    for (std::size_t n = 0; n < t.size(); ++n) c[n] = std::sin(1.0 + 3.0 * n) + 1.5;
    const PairingResult r = pairing(t, c, m);
    CHECK(std::abs(r.direct - r.recursive) <= 1e-12 * std::abs(r.direct));
}

TEST_CASE("consumption at nodes without clock mass does not affect value") {
    const EventTree t = load_tree(data("trinomial_terminal.json"));
    const UtilityField f = UtilityField::log();
    const PrimalSolution s = solve_primal(t, f, 1.0);
    std::vector<double> c = s.c;
    for (std::size_t n = 0; n < t.size(); ++n)
        if (t.dkappa(n) == 0.0) c[n] = 5.0 + n;
    CHECK(primal_objective(t, f, c) == primal_objective(t, f, s.c));
}

TEST_CASE("infeasibility below the lower hedging price") {
    const EventTree t = load_tree(data("trinomial_endowment.json"));
    const PrimalSolution s = solve_primal(t, UtilityField::log(), -0.31);
    CHECK_FALSE(s.feasible);
    REQUIRE(s.certificate.has_value());
    CHECK(s.certificate->lower_price == doctest::Approx(0.3));
    // Under the certificate measure the endowment is worth less than -x.
    double price = 0.0;
    for (std::size_t n = 0; n < t.size(); ++n) price += t.node_mass(n, s.certificate->measure) * t.endow(n) * t.dkappa(n);
    CHECK(price + s.x < 0.0);
    CHECK(solve_primal(t, UtilityField::log(), -0.29).feasible);
}

TEST_CASE("optimizer does not depend on the starting point") {
    const EventTree t = load_tree(data("trinomial_random.json"));
    const UtilityField f = UtilityField::power(0.5, 0.1);
    const PrimalSolution a = solve_primal(t, f, 1.0);
    PrimalOptions o;
    o.start_perturbation = 0.4;
    const PrimalSolution b = solve_primal(t, f, 1.0, o);
    for (std::size_t n = 0; n < t.size(); ++n) CHECK(a.c[n] == doctest::Approx(b.c[n]).epsilon(1e-7));
}

TEST_CASE("optimal consumption is the inverse marginal of the dual density") {
    const EventTree t = load_tree(data("trinomial_endowment.json"));
    const UtilityField f = UtilityField::power(0.5);
    double y = 0.0;
    strong_duality_gap(t, f, 1.0, &y);
    const PrimalSolution s = solve_primal(t, f, 1.0);
    const DualSolution d = solve_dual(t, f, y);
    for (std::size_t n = 0; n < t.size(); ++n)
        if (t.dkappa(n) > 0.0) CHECK(s.c[n] == doctest::Approx(d.c_hat[n]).epsilon(1e-7));
}

TEST_CASE("verify report on every shipped tree") {
    for (const char* name : {"binomial.json", "trinomial_terminal.json", "trinomial_uniform.json",
                             "trinomial_random.json", "trinomial_endowment.json"}) {
        const EventTree t = load_tree(data(name));
        const double L = hedging_prices(t).lower;
        std::vector<double> xs;
        for (double d : {0.25, 0.5, 1.0, 2.0}) xs.push_back(-L + d);
        const DualityReport r = verify_duality(t, t.utility->make(), xs, {0.25, 1.0, 4.0});
        for (const auto& c : r.checks) {
            CAPTURE(name);
            CAPTURE(c.name);
            CAPTURE(c.residual);
            CHECK(c.pass);
        }
        for (std::size_t i = 0; i + 1 < r.y_grid.size(); ++i) CHECK(r.v_prime[i] < r.v_prime[i + 1]);
    }
}
