#include "stoclock/finite_market.hpp"

#include "convex_barrier.hpp"

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace stoclock {

namespace {

using Rational = boost::multiprecision::cpp_rational;
using RMatrix = std::vector<std::vector<Rational>>;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Reduced row echelon form of [A | b]; returns false if inconsistent.
bool row_reduce(RMatrix& A, std::vector<Rational>& b) {
    const std::size_t rows = A.size();
    const std::size_t cols = rows ? A[0].size() : 0;
    std::size_t r = 0;
    for (std::size_t c = 0; c < cols && r < rows; ++c) {
        std::size_t piv = r;
        while (piv < rows && A[piv][c] == 0) ++piv;
        if (piv == rows) continue;
        std::swap(A[piv], A[r]);
        std::swap(b[piv], b[r]);
        const Rational inv = 1 / A[r][c];
        for (auto& v : A[r]) v *= inv;
        b[r] *= inv;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == r || A[i][c] == 0) continue;
            const Rational f = A[i][c];
            for (std::size_t j = 0; j < cols; ++j) A[i][j] -= f * A[r][j];
            b[i] -= f * b[r];
        }
        ++r;
    }
    for (std::size_t i = r; i < rows; ++i)
        if (b[i] != 0) return false;
    A.resize(r);
    b.resize(r);
    return true;
}

// Solves the square system M x = rhs exactly; false if singular.
bool solve_square(RMatrix M, std::vector<Rational> rhs, std::vector<Rational>& x) {
    const std::size_t n = M.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        while (piv < n && M[piv][c] == 0) ++piv;
        if (piv == n) return false;
        std::swap(M[piv], M[c]);
        std::swap(rhs[piv], rhs[c]);
        for (std::size_t i = c + 1; i < n; ++i) {
            if (M[i][c] == 0) continue;
            const Rational f = M[i][c] / M[c][c];
            for (std::size_t j = c; j < n; ++j) M[i][j] -= f * M[c][j];
            rhs[i] -= f * rhs[c];
        }
    }
    x.assign(n, Rational(0));
    for (std::size_t i = n; i-- > 0;) {
        Rational s = rhs[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= M[i][j] * x[j];
        x[i] = s / M[i][i];
    }
    return true;
}

// Basic feasible solutions of {A q = b, q >= 0}.
std::vector<std::vector<double>> enumerate_vertices(RMatrix A, std::vector<Rational> b) {
    const std::size_t cols = A.empty() ? 0 : A[0].size();
    if (!row_reduce(A, b)) return {};
    const std::size_t r = A.size();
    std::set<std::vector<Rational>> found;
    std::vector<bool> pick(cols, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(r), true);
    do {
        std::vector<std::size_t> basis;
        for (std::size_t j = 0; j < cols; ++j)
            if (pick[j]) basis.push_back(j);
        RMatrix M(r, std::vector<Rational>(r));
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t k = 0; k < r; ++k) M[i][k] = A[i][basis[k]];
        std::vector<Rational> xb;
        if (!solve_square(M, b, xb)) continue;
        if (std::any_of(xb.begin(), xb.end(), [](const Rational& v) { return v < 0; })) continue;
        std::vector<Rational> q(cols, Rational(0));
        for (std::size_t k = 0; k < r; ++k) q[basis[k]] = xb[k];
        found.insert(q);
    } while (std::prev_permutation(pick.begin(), pick.end()));
    std::vector<std::vector<double>> out;
    for (const auto& q : found) {
        std::vector<double> v;
        for (const auto& e : q) v.push_back(e.convert_to<double>());
        out.push_back(std::move(v));
    }
    return out;
}

// Per-node one-step structure shared by the DP routines.
struct Structure {
    std::vector<std::vector<std::vector<double>>> vertices;  // per node
    std::vector<bool> viable;
    bool empty = false;
    bool equivalent = false;
    LeafMeasure equivalent_measure;
    std::string message;
};

Structure analyze(const EventTree& tree) {
    Structure s;
    const std::size_t n = tree.size();
    s.vertices.resize(n);
    s.viable.assign(n, true);
    bool all_interior = true;
    std::vector<std::vector<double>> bary(n);
    std::ostringstream why;
    for (std::size_t k = n; k-- > 0;) {
        if (tree.is_leaf(k)) continue;
        s.vertices[k] = one_step_vertices(tree, k);
        const auto& kids = tree.children(k);
        bool any = false;
        for (const auto& v : s.vertices[k]) {
            bool ok = true;
            for (std::size_t i = 0; i < kids.size(); ++i)
                if (v[i] > 0.0 && !s.viable[kids[i]]) ok = false;
            any = any || ok;
        }
        s.viable[k] = any;
        bary[k].assign(kids.size(), 0.0);
        for (const auto& v : s.vertices[k])
            for (std::size_t i = 0; i < kids.size(); ++i) bary[k][i] += v[i];
        const double nv = static_cast<double>(s.vertices[k].size());
        bool interior = nv > 0;
        for (double& b : bary[k]) {
            b = nv > 0 ? b / nv : 0.0;
            interior = interior && b > 0.0;
        }
        if (!interior && all_interior) {
            why << "no equivalent martingale measure: at node '" << tree.id(k) << "' "
                << (s.vertices[k].empty() ? "the price moves are one-sided (no one-step martingale weights)"
                                          : "some branch gets zero weight under every martingale measure");
        }
        all_interior = all_interior && interior;
    }
    s.empty = !s.viable[0];
    s.equivalent = all_interior;
    if (all_interior) {
        std::vector<double> mass(n, 0.0);
        mass[0] = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto& kids = tree.children(k);
            for (std::size_t i = 0; i < kids.size(); ++i) mass[kids[i]] = mass[k] * bary[k][i];
        }
        s.equivalent_measure.resize(tree.leaf_count());
        for (std::size_t l = 0; l < tree.leaf_count(); ++l) s.equivalent_measure[l] = mass[tree.leaf_node(l)];
    }
    s.message = all_interior ? "equivalent martingale measure exists" : why.str();
    if (s.empty) s.message = "martingale polytope is empty: " + why.str();
    return s;
}

void require_no_arbitrage(const Structure& s) {
    if (!s.equivalent) throw ArbitrageError("NFLVR fails on this tree (" + s.message + ")");
}

LinearOptimum optimize_dp(const EventTree& tree, const Structure& s, const std::vector<double>& f,
                          bool maximize) {
    if (s.empty) throw ArbitrageError(s.message);
    const std::size_t n = tree.size();
    std::vector<double> val(n, 0.0);
    std::vector<const std::vector<double>*> choice(n, nullptr);
    for (std::size_t k = n; k-- > 0;) {
        val[k] = f[k];
        if (tree.is_leaf(k) || !s.viable[k]) continue;
        const auto& kids = tree.children(k);
        double best = maximize ? -kInf : kInf;
        for (const auto& v : s.vertices[k]) {
            double acc = 0.0;
            bool ok = true;
            for (std::size_t i = 0; i < kids.size(); ++i) {
                if (v[i] == 0.0) continue;
                if (!s.viable[kids[i]]) ok = false;
                acc += v[i] * val[kids[i]];
            }
            if (!ok) continue;
            if (maximize ? acc > best : acc < best) {
                best = acc;
                choice[k] = &v;
            }
        }
        val[k] += best;
    }
    LinearOptimum out;
    out.value = val[0];
    std::vector<double> mass(n, 0.0);
    mass[0] = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (tree.is_leaf(k) || mass[k] == 0.0) continue;
        const auto& kids = tree.children(k);
        for (std::size_t i = 0; i < kids.size(); ++i) mass[kids[i]] = mass[k] * (*choice[k])[i];
    }
    out.measure.resize(tree.leaf_count());
    for (std::size_t l = 0; l < tree.leaf_count(); ++l) out.measure[l] = mass[tree.leaf_node(l)];
    return out;
}

std::vector<std::size_t> clock_nodes(const EventTree& tree) {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < tree.size(); ++n)
        if (tree.dkappa(n) > 0.0) out.push_back(n);
    return out;
}

std::vector<double> stream_of(const EventTree& tree, const std::vector<double>& c, bool subtract_endow) {
    std::vector<double> f(tree.size());
    for (std::size_t n = 0; n < tree.size(); ++n)
        f[n] = (c[n] - (subtract_endow ? tree.endow(n) : 0.0)) * tree.dkappa(n);
    return f;
}

double measure_pairing(const EventTree& tree, const LeafMeasure& q, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t n = 0; n < tree.size(); ++n)
        if (f[n] != 0.0) acc += tree.node_mass(n, q) * f[n];
    return acc;
}

struct PrimalObjective {
    const EventTree& tree;
    const UtilityField& field;
    std::vector<std::size_t> nodes;  // clock nodes, variable order

    double value(const Eigen::VectorXd& z) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const double c = z[static_cast<Eigen::Index>(i)];
            if (!(c > 0.0)) return kInf;
            const std::size_t n = nodes[i];
            acc -= tree.path_prob(n) * tree.dkappa(n) * field.u(tree.time(n), c);
        }
        return acc;
    }
    void derivatives(const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& H) const {
        g.setZero(z.size());
        H.setZero(z.size(), z.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            const std::size_t n = nodes[i];
            const double w = tree.path_prob(n) * tree.dkappa(n);
            g[k] = -w * field.u_prime(tree.time(n), z[k]);
            H(k, k) = -w * field.u_second(tree.time(n), z[k]);
        }
    }
};

// Backward induction of the super-hedge for the stream f; returns per node
// the hedge position and the continuation capital needed after paying f(n).
struct SuperHedge {
    std::vector<double> value;        // f(n) + continuation
    std::vector<double> continuation; // capital held into the next period
    std::vector<std::vector<double>> position;
};

SuperHedge superhedge_stream(const EventTree& tree, const std::vector<double>& f) {
    const std::size_t n = tree.size();
    SuperHedge sh;
    sh.value.assign(n, 0.0);
    sh.continuation.assign(n, 0.0);
    sh.position.assign(n, {});
    for (std::size_t k = n; k-- > 0;) {
        if (tree.is_leaf(k)) {
            sh.value[k] = f[k];
            continue;
        }
        std::vector<double> kids;
        for (std::size_t c : tree.children(k)) kids.push_back(sh.value[c]);
        const OneStepHedge h = one_step_superhedge(tree, k, kids);
        sh.continuation[k] = h.capital;
        sh.position[k] = h.position;
        sh.value[k] = f[k] + h.capital;
    }
    return sh;
}

struct WealthLayout {
    std::vector<std::size_t> cnodes;
    std::vector<Eigen::Index> cindex;  // per node, -1 when no variable
    std::vector<Eigen::Index> hindex;  // per node, first H variable, -1 at leaves
    Eigen::Index size = 0;
};

WealthLayout wealth_layout(const EventTree& tree) {
    WealthLayout w;
    w.cnodes = clock_nodes(tree);
    w.cindex.assign(tree.size(), -1);
    w.hindex.assign(tree.size(), -1);
    for (std::size_t i = 0; i < w.cnodes.size(); ++i) w.cindex[w.cnodes[i]] = static_cast<Eigen::Index>(i);
    Eigen::Index next = static_cast<Eigen::Index>(w.cnodes.size());
    for (std::size_t n = 0; n < tree.size(); ++n) {
        if (tree.is_leaf(n)) continue;
        w.hindex[n] = next;
        next += static_cast<Eigen::Index>(tree.assets());
    }
    w.size = next;
    return w;
}

// Fills c, H, X and terminal wealth from the optimizer of the wealth form.
void fill_wealth(const EventTree& tree, const WealthLayout& lay, const Eigen::VectorXd& z, double x,
                 PrimalSolution& sol) {
    const std::size_t n = tree.size();
    const std::size_t d = tree.assets();
    sol.c.assign(n, 0.0);
    sol.H.assign(n, {});
    sol.X.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (lay.cindex[k] >= 0) sol.c[k] = z[lay.cindex[k]];
        if (lay.hindex[k] >= 0) {
            sol.H[k].resize(d);
            for (std::size_t a = 0; a < d; ++a) sol.H[k][a] = z[lay.hindex[k] + static_cast<Eigen::Index>(a)];
        }
    }
    sol.X[0] = x;
    for (std::size_t k = 0; k < n; ++k) {
        const double after = sol.X[k] + (tree.endow(k) - sol.c[k]) * tree.dkappa(k);
        for (std::size_t c : tree.children(k)) {
            double gain = 0.0;
            for (std::size_t a = 0; a < d; ++a) gain += sol.H[k][a] * (tree.price(c)[a] - tree.price(k)[a]);
            sol.X[c] = after + gain;
        }
    }
    sol.terminal_wealth.resize(tree.leaf_count());
    for (std::size_t l = 0; l < tree.leaf_count(); ++l) {
        const std::size_t k = tree.leaf_node(l);
        sol.terminal_wealth[l] = sol.X[k] + (tree.endow(k) - sol.c[k]) * tree.dkappa(k);
    }
}

double tol_for(double v) { return 1e-12 * std::max(1.0, std::abs(v)); }

// Nodes charged by some measure attaining L(E).
std::vector<bool> lower_face_support(const EventTree& tree, const Structure& s) {
    const std::size_t n = tree.size();
    std::vector<double> val(n, 0.0);
    for (std::size_t k = n; k-- > 0;) {
        val[k] = tree.endow(k) * tree.dkappa(k);
        if (tree.is_leaf(k)) continue;
        double best = kInf;
        const auto& kids = tree.children(k);
        for (const auto& v : s.vertices[k]) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kids.size(); ++i) acc += v[i] * val[kids[i]];
            best = std::min(best, acc);
        }
        val[k] += best;
    }
    std::vector<bool> reach(n, false);
    reach[0] = true;
    for (std::size_t k = 0; k < n; ++k) {
        if (!reach[k] || tree.is_leaf(k)) continue;
        const auto& kids = tree.children(k);
        double best = kInf;
        std::vector<double> accs;
        for (const auto& v : s.vertices[k]) {
            double acc = 0.0;
            for (std::size_t i = 0; i < kids.size(); ++i) acc += v[i] * val[kids[i]];
            accs.push_back(acc);
            best = std::min(best, acc);
        }
        for (std::size_t j = 0; j < s.vertices[k].size(); ++j) {
            if (accs[j] > best + tol_for(best)) continue;
            for (std::size_t i = 0; i < kids.size(); ++i)
                if (s.vertices[k][j][i] > 0.0) reach[kids[i]] = true;
        }
    }
    return reach;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> one_step_vertices(const EventTree& tree, std::size_t n) {
    const auto& kids = tree.children(n);
    if (kids.empty()) throw std::invalid_argument("one_step_vertices: node is a leaf");
    const std::size_t d = tree.assets();
    RMatrix A(d + 1, std::vector<Rational>(kids.size()));
    std::vector<Rational> b(d + 1, Rational(0));
    b[0] = 1;
    for (std::size_t i = 0; i < kids.size(); ++i) {
        A[0][i] = 1;
        for (std::size_t a = 0; a < d; ++a)
            A[a + 1][i] = Rational(tree.price(kids[i])[a]) - Rational(tree.price(n)[a]);
    }
    return enumerate_vertices(std::move(A), std::move(b));
}

MartingalePolytope martingale_polytope(const EventTree& tree, std::size_t max_vertex_leaves) {
    MartingalePolytope p;
    const std::size_t L = tree.leaf_count();
    const std::size_t d = tree.assets();
    p.A.push_back(std::vector<double>(L, 1.0));
    p.b.push_back(1.0);
    RMatrix RA{std::vector<Rational>(L, Rational(1))};
    std::vector<Rational> Rb{Rational(1)};
    for (std::size_t n : tree.nonleaf_nodes()) {
        for (std::size_t a = 0; a < d; ++a) {
            std::vector<double> row(L, 0.0);
            std::vector<Rational> rrow(L, Rational(0));
            for (std::size_t c : tree.children(n)) {
                const Rational diff = Rational(tree.price(c)[a]) - Rational(tree.price(n)[a]);
                for (std::size_t l = tree.leaf_begin(c); l < tree.leaf_end(c); ++l) {
                    row[l] = diff.convert_to<double>();
                    rrow[l] = diff;
                }
            }
            p.A.push_back(row);
            p.b.push_back(0.0);
            RA.push_back(rrow);
            Rb.push_back(Rational(0));
        }
    }
    const Structure s = analyze(tree);
    p.empty = s.empty;
    p.has_equivalent_measure = s.equivalent;
    p.equivalent_measure = s.equivalent_measure;
    p.message = s.message;
    if (L <= max_vertex_leaves) {
        p.vertices = enumerate_vertices(std::move(RA), std::move(Rb));
        p.vertices_enumerated = true;
    }
    return p;
}

LinearOptimum optimize_over_measures(const EventTree& tree, const std::vector<double>& f,
                                     bool maximize) {
    if (f.size() != tree.size()) throw std::invalid_argument("optimize_over_measures: f has wrong size");
    return optimize_dp(tree, analyze(tree), f, maximize);
}

HedgingPrices hedging_prices(const EventTree& tree) {
    const Structure s = analyze(tree);
    std::vector<double> f(tree.size());
    for (std::size_t n = 0; n < tree.size(); ++n) f[n] = tree.endow(n) * tree.dkappa(n);
    const LinearOptimum lo = optimize_dp(tree, s, f, false);
    const LinearOptimum hi = optimize_dp(tree, s, f, true);
    return {lo.value, hi.value, lo.measure, hi.measure};
}

OneStepHedge one_step_superhedge(const EventTree& tree, std::size_t n,
                                 const std::vector<double>& child_values) {
    const auto& kids = tree.children(n);
    const std::size_t k = kids.size();
    const std::size_t d = tree.assets();
    if (child_values.size() != k) throw std::invalid_argument("one_step_superhedge: value count mismatch");
    Eigen::MatrixXd D(k, d);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t a = 0; a < d; ++a) D(i, a) = tree.price(kids[i])[a] - tree.price(n)[a];
    // Work in the span of the price moves so redundant assets do not make the
    // basis systems singular.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeFullV);
    const double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > 1e-12 * std::max(1.0, smax)) ++r;
    const Eigen::MatrixXd B = svd.matrixV().leftCols(r);
    const Eigen::MatrixXd Dr = D * B;

    const std::size_t m = static_cast<std::size_t>(r) + 1;
    double scale = 1.0;
    for (double v : child_values) scale = std::max(scale, std::abs(v));
    OneStepHedge best;
    best.capital = kInf;
    std::vector<bool> pick(k, false);
    if (m > k) throw ArbitrageError("one_step_superhedge: fewer branches than independent price moves");
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(m), true);
    do {
        Eigen::MatrixXd M(m, m);
        Eigen::VectorXd rhs(m);
        std::size_t row = 0;
        for (std::size_t i = 0; i < k; ++i) {
            if (!pick[i]) continue;
            M(static_cast<Eigen::Index>(row), 0) = 1.0;
            M.row(static_cast<Eigen::Index>(row)).tail(r) = Dr.row(static_cast<Eigen::Index>(i));
            rhs[static_cast<Eigen::Index>(row)] = child_values[i];
            ++row;
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
        if (lu.rank() < static_cast<Eigen::Index>(m)) continue;
        const Eigen::VectorXd sol = lu.solve(rhs);
        bool ok = true;
        for (std::size_t i = 0; i < k && ok; ++i) {
            const double cover = sol[0] + Dr.row(static_cast<Eigen::Index>(i)).dot(sol.tail(r));
            ok = cover >= child_values[i] - 1e-11 * scale;
        }
        if (ok && sol[0] < best.capital) {
            best.capital = sol[0];
            const Eigen::VectorXd H = B * sol.tail(r);
            best.position.assign(H.data(), H.data() + H.size());
        }
    } while (std::prev_permutation(pick.begin(), pick.end()));
    if (!std::isfinite(best.capital))
        throw ArbitrageError("one_step_superhedge: no bounded super-hedge at node '" + tree.id(n) + "'");
    if (best.position.empty()) best.position.assign(d, 0.0);
    return best;
}

double primal_objective(const EventTree& tree, const UtilityField& field, const std::vector<double>& c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < tree.size(); ++n) {
        if (tree.dkappa(n) <= 0.0) continue;
        const double u = c[n] > 0.0 ? field.u(tree.time(n), c[n]) : field.u_at_zero(tree.time(n));
        acc += tree.path_prob(n) * tree.dkappa(n) * u;
    }
    return acc;
}

PrimalSolution solve_primal(const EventTree& tree, const UtilityField& field, double x,
                            const PrimalOptions& opts) {
    const Structure s = analyze(tree);
    require_no_arbitrage(s);
    std::vector<double> ef(tree.size());
    for (std::size_t n = 0; n < tree.size(); ++n) ef[n] = tree.endow(n) * tree.dkappa(n);
    const LinearOptimum lower = optimize_dp(tree, s, ef, false);
    const double L = lower.value;

    PrimalSolution sol;
    sol.x = x;
    if (x < -L - tol_for(L)) {
        InfeasibilityCertificate cert;
        cert.x = x;
        cert.lower_price = L;
        cert.measure = lower.measure;
        std::ostringstream os;
        os.precision(12);
        os << "infeasible: x = " << x << " < -L(E) = " << -L
           << "; under the certificate measure every c >= 0 costs at least " << -L;
        cert.message = os.str();
        sol.certificate = cert;
        sol.value = -kInf;
        return sol;
    }

    const WealthLayout lay = wealth_layout(tree);
    const std::size_t n_nodes = tree.size();

    if (std::abs(x + L) <= tol_for(L)) {
        const std::vector<bool> support = lower_face_support(tree, s);
        for (std::size_t k : lay.cnodes)
            if (!support[k])
                throw std::domain_error(
                    "solve_primal: at x = -L(E) the feasible set is not a single point on this tree");
        std::vector<double> zero(n_nodes, 0.0);
        std::vector<double> f(n_nodes);
        for (std::size_t k = 0; k < n_nodes; ++k) f[k] = -ef[k];
        const SuperHedge sh = superhedge_stream(tree, f);
        Eigen::VectorXd z = Eigen::VectorXd::Zero(lay.size);
        for (std::size_t k = 0; k < n_nodes; ++k)
            for (std::size_t a = 0; a < sh.position[k].size(); ++a)
                z[lay.hindex[k] + static_cast<Eigen::Index>(a)] = sh.position[k][a];
        sol.feasible = true;
        sol.boundary_point = true;
        fill_wealth(tree, lay, z, x, sol);
        sol.value = primal_objective(tree, field, sol.c);
        sol.value_budget_form = sol.value;
        return sol;
    }

    const double eps = 0.5 * (x + L);
    std::vector<double> c0(n_nodes, 0.0);
    for (std::size_t i = 0; i < lay.cnodes.size(); ++i) {
        double frac = std::fmod(0.6180339887498949 * static_cast<double>(i + 1), 1.0);
        c0[lay.cnodes[i]] = eps * (1.0 - opts.start_perturbation * frac);
    }

    const PrimalObjective obj{tree, field, lay.cnodes};
    const auto value = [&obj](const Eigen::VectorXd& z) { return obj.value(z.head(static_cast<Eigen::Index>(obj.nodes.size()))); };
    const auto derivs = [&obj](const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
        const auto nc = static_cast<Eigen::Index>(obj.nodes.size());
        Eigen::VectorXd gc;
        Eigen::MatrixXd Hc;
        obj.derivatives(z.head(nc), gc, Hc);
        g.setZero(z.size());
        H.setZero(z.size(), z.size());
        g.head(nc) = gc;
        H.topLeftCorner(nc, nc) = Hc;
    };

    // Wealth-recursion form: one constraint -W_leaf <= 0 per leaf.
    {
        detail::BarrierProblem p;
        p.value = value;
        p.derivatives = derivs;
        const auto L_count = static_cast<Eigen::Index>(tree.leaf_count());
        p.G = Eigen::MatrixXd::Zero(L_count, lay.size);
        p.h = Eigen::VectorXd::Constant(L_count, x);
        for (std::size_t l = 0; l < tree.leaf_count(); ++l) {
            const auto row = static_cast<Eigen::Index>(l);
            const std::vector<std::size_t> path = tree.path_to(tree.leaf_node(l));
            for (std::size_t i = 0; i < path.size(); ++i) {
                const std::size_t m = path[i];
                if (lay.cindex[m] >= 0) p.G(row, lay.cindex[m]) += tree.dkappa(m);
                p.h[row] += ef[m];
                if (i + 1 < path.size()) {
                    for (std::size_t a = 0; a < tree.assets(); ++a)
                        p.G(row, lay.hindex[m] + static_cast<Eigen::Index>(a)) -=
                            tree.price(path[i + 1])[a] - tree.price(m)[a];
                }
            }
        }
        const SuperHedge sh = superhedge_stream(tree, stream_of(tree, c0, true));
        Eigen::VectorXd z0 = Eigen::VectorXd::Zero(lay.size);
        for (std::size_t i = 0; i < lay.cnodes.size(); ++i) z0[static_cast<Eigen::Index>(i)] = c0[lay.cnodes[i]];
        for (std::size_t k = 0; k < n_nodes; ++k)
            for (std::size_t a = 0; a < sh.position[k].size(); ++a)
                z0[lay.hindex[k] + static_cast<Eigen::Index>(a)] = sh.position[k][a];
        const detail::BarrierResult r = detail::solve_barrier(p, z0);
        sol.feasible = true;
        sol.kkt_residual = r.kkt_residual;
        fill_wealth(tree, lay, r.z, x, sol);
        sol.value = -r.value;
    }

    if (!opts.budget_check) return sol;

    // Budget form over measures, with constraint generation by the DP oracle.
    const auto nc = static_cast<Eigen::Index>(lay.cnodes.size());
    std::vector<LeafMeasure> active;
    if (tree.leaf_count() <= 12) {
        active = martingale_polytope(tree).vertices;
    } else {
        std::vector<double> cfull(n_nodes, 0.0);
        for (std::size_t k : lay.cnodes) cfull[k] = eps;
        active.push_back(optimize_dp(tree, s, stream_of(tree, cfull, true), true).measure);
    }
    Eigen::VectorXd cstart(nc);
    for (Eigen::Index i = 0; i < nc; ++i) cstart[i] = eps;
    for (int round = 0; round < 100; ++round) {
        detail::BarrierProblem p;
        p.value = [&obj](const Eigen::VectorXd& z) { return obj.value(z); };
        p.derivatives = [&obj](const Eigen::VectorXd& z, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
            obj.derivatives(z, g, H);
        };
        const auto m = static_cast<Eigen::Index>(active.size());
        p.G = Eigen::MatrixXd::Zero(m, nc);
        p.h = Eigen::VectorXd::Constant(m, x);
        for (Eigen::Index j = 0; j < m; ++j) {
            const LeafMeasure& q = active[static_cast<std::size_t>(j)];
            for (Eigen::Index i = 0; i < nc; ++i) {
                const std::size_t k = lay.cnodes[static_cast<std::size_t>(i)];
                p.G(j, i) = tree.node_mass(k, q) * tree.dkappa(k);
            }
            p.h[j] += measure_pairing(tree, q, ef);
        }
        const detail::BarrierResult r = detail::solve_barrier(p, cstart);
        std::vector<double> cb(n_nodes, 0.0);
        for (Eigen::Index i = 0; i < nc; ++i) cb[lay.cnodes[static_cast<std::size_t>(i)]] = r.z[i];
        const LinearOptimum worst = optimize_dp(tree, s, stream_of(tree, cb, true), true);
        sol.value_budget_form = -r.value;
        sol.kkt_residual_budget_form = r.kkt_residual;
        sol.budget_constraints = active.size();
        if (worst.value <= x + 1e-10 * std::max(1.0, std::abs(x))) break;
        active.push_back(worst.measure);
    }
    return sol;
}

const char* to_string(DualDomain d) { return d == DualDomain::probability ? "probability" : "solid"; }

MeasureElement make_measure(const EventTree& tree, const LeafMeasure& q, double xi, double y) {
    if (q.size() != tree.leaf_count()) throw std::invalid_argument("make_measure: q has wrong size");
    MeasureElement m;
    m.xi = xi;
    m.y = y;
    m.q = q;
    m.Y.resize(tree.size());
    for (std::size_t n = 0; n < tree.size(); ++n)
        m.Y[n] = xi * y * tree.node_mass(n, q) / tree.path_prob(n);
    return m;
}

DualSolution solve_dual(const EventTree& tree, const UtilityField& field, double y, DualDomain domain) {
    DualSolution sol;
    sol.y = y;
    sol.domain = domain;
    if (!(y > 0.0)) {
        sol.value = kInf;
        return sol;
    }
    const Structure s = analyze(tree);
    require_no_arbitrage(s);
    const MartingalePolytope poly = martingale_polytope(tree, 0);
    const auto L = static_cast<Eigen::Index>(tree.leaf_count());
    const std::vector<std::size_t> cn = clock_nodes(tree);

    auto node_W = [&tree](std::size_t n, const Eigen::VectorXd& w) {
        double m = 0.0;
        for (std::size_t l = tree.leaf_begin(n); l < tree.leaf_end(n); ++l) m += w[static_cast<Eigen::Index>(l)];
        return m;
    };

    detail::BarrierProblem p;
    p.value = [&](const Eigen::VectorXd& w) {
        double acc = 0.0;
        for (std::size_t n : cn) {
            const double W = node_W(n, w);
            const double Y = y * W / tree.path_prob(n);
            if (!(Y > 0.0)) return kInf;
            acc += tree.path_prob(n) * tree.dkappa(n) * field.conjugate(tree.time(n), Y) +
                   y * tree.endow(n) * tree.dkappa(n) * W;
        }
        return acc;
    };
    p.derivatives = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
        g.setZero(L);
        H.setZero(L, L);
        for (std::size_t n : cn) {
            const double P = tree.path_prob(n);
            const double Y = y * node_W(n, w) / P;
            const double dk = tree.dkappa(n);
            const double gn = dk * y * (field.conjugate_prime(tree.time(n), Y) + tree.endow(n));
            const double hn = dk * y * y * field.conjugate_second(tree.time(n), Y) / P;
            const auto b = static_cast<Eigen::Index>(tree.leaf_begin(n));
            const auto e = static_cast<Eigen::Index>(tree.leaf_end(n));
            g.segment(b, e - b).array() += gn;
            H.block(b, b, e - b, e - b).array() += hn;
        }
    };
    const bool prob = domain == DualDomain::probability;
    const Eigen::Index mart_rows = static_cast<Eigen::Index>(poly.A.size()) - 1;
    p.A = Eigen::MatrixXd::Zero(mart_rows + (prob ? 1 : 0), L);
    p.b = Eigen::VectorXd::Zero(p.A.rows());
    for (Eigen::Index i = 0; i < mart_rows; ++i)
        for (Eigen::Index l = 0; l < L; ++l) p.A(i, l) = poly.A[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(l)];
    if (prob) {
        p.A.row(mart_rows).setOnes();
        p.b[mart_rows] = 1.0;
    }
    p.G = Eigen::MatrixXd::Zero(L + (prob ? 0 : 1), L);
    p.h = Eigen::VectorXd::Zero(p.G.rows());
    p.G.topRows(L) = -Eigen::MatrixXd::Identity(L, L);
    if (!prob) {
        p.G.row(L).setOnes();
        p.h[L] = 1.0;
    }
    Eigen::VectorXd w0(L);
    for (Eigen::Index l = 0; l < L; ++l)
        w0[l] = (prob ? 1.0 : 0.5) * s.equivalent_measure[static_cast<std::size_t>(l)];
    // The martingale rows hold only up to roundoff for the product measure;
    // project the start point back onto A w = b.
    if (p.A.rows() > 0) {
        const Eigen::VectorXd resid = p.A * w0 - p.b;
        w0 -= p.A.transpose() * (p.A * p.A.transpose()).completeOrthogonalDecomposition().solve(resid);
    }
    const detail::BarrierResult r = detail::solve_barrier(p, w0);

    std::vector<double> wv(r.z.data(), r.z.data() + r.z.size());
    const double xi = std::accumulate(wv.begin(), wv.end(), 0.0);
    LeafMeasure q(wv.size());
    for (std::size_t l = 0; l < wv.size(); ++l) q[l] = xi > 0.0 ? wv[l] / xi : 0.0;
    sol.measure = make_measure(tree, q, xi, y);
    sol.value = r.value;
    sol.kkt_residual = r.kkt_residual;
    sol.converged = r.converged;
    sol.c_hat.assign(tree.size(), 0.0);
    double vp = 0.0;
    for (std::size_t n : cn) {
        const double Y = sol.measure.Y[n];
        sol.c_hat[n] = field.inverse_marginal(tree.time(n), Y);
        vp -= tree.dkappa(n) * node_W(n, r.z) * (sol.c_hat[n] - tree.endow(n));
    }
    sol.v_prime = vp;
    return sol;
}

PairingResult pairing(const EventTree& tree, const std::vector<double>& c, const MeasureElement& m) {
    if (c.size() != tree.size()) throw std::invalid_argument("pairing: c has wrong size");
    PairingResult out;
    for (std::size_t n = 0; n < tree.size(); ++n)
        out.direct += m.xi * m.y * tree.node_mass(n, m.q) * c[n] * tree.dkappa(n);
    std::vector<double> Y(tree.size(), 0.0);
    for (std::size_t n = tree.size(); n-- > 0;) {
        if (tree.is_leaf(n)) {
            Y[n] = m.xi * m.y * m.q[tree.leaf_begin(n)] / tree.path_prob(n);
        } else {
            for (std::size_t ch : tree.children(n)) Y[n] += tree.prob(ch) * Y[ch];
        }
    }
    for (std::size_t n = 0; n < tree.size(); ++n) out.recursive += tree.path_prob(n) * Y[n] * c[n] * tree.dkappa(n);
    out.mismatch = std::abs(out.direct - out.recursive);
    if (out.mismatch > 1e-12 * std::max(1.0, std::abs(out.direct)))
        throw std::logic_error("pairing: direct and recursive evaluations disagree by " +
                               std::to_string(out.mismatch));
    return out;
}

double strong_duality_gap(const EventTree& tree, const UtilityField& field, double x, double* y_star) {
    const double u = solve_primal(tree, field, x, {0.0, false}).value;
    // -v'(y) decreases from +inf to -L(E); bracket the root in log y.
    auto excess = [&](double ly) { return -solve_dual(tree, field, std::exp(ly)).v_prime - x; };
    double lo = 0.0, hi = 0.0;
    double flo = excess(0.0), fhi = flo;
    if (flo == 0.0) {
        if (y_star) *y_star = 1.0;
        return std::abs(u - (solve_dual(tree, field, 1.0).value + x));
    }
    for (int i = 0; i < 80 && flo > 0.0 && fhi > 0.0; ++i) {
        lo = hi;
        flo = fhi;
        hi += 1.0;
        fhi = excess(hi);
    }
    for (int i = 0; i < 80 && flo < 0.0 && fhi < 0.0; ++i) {
        hi = lo;
        fhi = flo;
        lo -= 1.0;
        flo = excess(lo);
    }
    if (!(flo >= 0.0 && fhi <= 0.0)) throw std::runtime_error("strong_duality_gap: could not bracket v'(y) = -x");
    boost::uintmax_t iters = 200;
    const auto root = boost::math::tools::toms748_solve(
        excess, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(50), iters);
    const double ys = std::exp(0.5 * (root.first + root.second));
    if (y_star) *y_star = ys;
    const double v = solve_dual(tree, field, ys).value;
    return std::abs(u - (v + x * ys));
}

double conjugacy_gap(const EventTree& tree, const UtilityField& field, double y, double* x_star) {
    const DualSolution d = solve_dual(tree, field, y);
    const double L = hedging_prices(tree).lower;
    const double x0 = -d.v_prime;
    const double width = 0.05 * (1.0 + std::abs(x0));
    const double lo = std::max(-L + 1e-9 * (1.0 + std::abs(L)), x0 - width);
    const double hi = x0 + width;
    auto neg = [&](double x) { return -(solve_primal(tree, field, x, {0.0, false}).value - x * y); };
    const auto best = boost::math::tools::brent_find_minima(neg, lo, hi, 40);
    const double at_x0 = -neg(x0);
    double sup = std::max(-best.second, at_x0);
    if (x_star) *x_star = -best.second >= at_x0 ? best.first : x0;
    return std::abs(sup - d.value);
}

bool DualityReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const DualityCheck& c) { return c.pass; });
}

DualityReport verify_duality(const EventTree& tree, const UtilityField& field,
                             const std::vector<double>& x_grid, const std::vector<double>& y_grid,
                             const VerifyOptions& opts) {
    const Structure s = analyze(tree);
    require_no_arbitrage(s);
    DualityReport rep;
    const HedgingPrices hp = hedging_prices(tree);
    rep.lower_price = hp.lower;
    rep.upper_price = hp.upper;
    const double L = hp.lower;
    auto add = [&rep](std::string name, std::string clause, bool pass, double residual, std::string detail = {}) {
        rep.checks.push_back({std::move(name), std::move(clause), pass, residual, std::move(detail)});
    };

    // Primal values on the x grid.
    double worst_kkt = 0.0, worst_forms = 0.0;
    std::vector<PrimalSolution> primal;
    for (double x : x_grid) {
        if (!(x > -L)) throw std::invalid_argument("verify_duality: x grid must lie above -L(E)");
        primal.push_back(solve_primal(tree, field, x));
        rep.x_grid.push_back(x);
        rep.u_values.push_back(primal.back().value);
        worst_kkt = std::max({worst_kkt, primal.back().kkt_residual, primal.back().kkt_residual_budget_form});
        worst_forms = std::max(worst_forms, std::abs(primal.back().value - primal.back().value_budget_form));
    }

    // (i) concave and increasing.
    double min_slope = kInf, worst_conc = 0.0;
    for (std::size_t i = 1; i < x_grid.size(); ++i) {
        const double slope = (rep.u_values[i] - rep.u_values[i - 1]) / (x_grid[i] - x_grid[i - 1]);
        min_slope = std::min(min_slope, slope);
        if (i + 1 < x_grid.size()) {
            const double next = (rep.u_values[i + 1] - rep.u_values[i]) / (x_grid[i + 1] - x_grid[i]);
            worst_conc = std::max(worst_conc, next - slope);
        }
    }
    add("u increasing and concave", "i", min_slope > 0.0 && worst_conc <= 1e-9, worst_conc);

    // (ii) infeasible below -L(E).
    {
        const PrimalSolution below = solve_primal(tree, field, -L - opts.infeasible_offset);
        add("u = -inf below -L(E)", "ii", !below.feasible && below.certificate.has_value(), 0.0,
            below.certificate ? below.certificate->message : "no certificate");
    }

    // Dual values, envelope and finite-difference derivatives.
    double worst_fd = 0.0, worst_dual_kkt = 0.0;
    bool dual_ok = true;
    for (double y : y_grid) {
        const DualSolution d = solve_dual(tree, field, y);
        const double h = 1e-4 * y;
        const double fd = (solve_dual(tree, field, y + h).value - solve_dual(tree, field, y - h).value) / (2.0 * h);
        rep.y_grid.push_back(y);
        rep.v_values.push_back(d.value);
        rep.v_prime.push_back(d.v_prime);
        rep.v_prime_fd.push_back(fd);
        worst_fd = std::max(worst_fd, std::abs(fd - d.v_prime) / std::max(1.0, std::abs(d.v_prime)));
        worst_dual_kkt = std::max(worst_dual_kkt, d.kkt_residual);
        dual_ok = dual_ok && std::isfinite(d.value) && d.converged;
    }
    add("v finite and differentiable", "iii", worst_fd <= 1e-5 && dual_ok, worst_fd);

    // (iv) -v'(y) decreases toward -L(E).
    {
        std::vector<double> xs;
        for (double y : opts.trend_y) xs.push_back(-solve_dual(tree, field, y).v_prime);
        bool mono = true;
        for (std::size_t i = 1; i < xs.size(); ++i)
            mono = mono && xs[i] < xs[i - 1] && std::abs(xs[i] + L) < std::abs(xs[i - 1] + L);
        std::ostringstream os;
        os.precision(10);
        os << "-v'(y) at y =";
        for (std::size_t i = 0; i < xs.size(); ++i) os << " " << opts.trend_y[i] << ":" << xs[i];
        os << "; -L(E) = " << -L;
        add("v' trend toward the lower hedging price", "iv", mono, std::abs(xs.back() + L), os.str());
    }

    add("dual attained", "v", dual_ok && worst_dual_kkt <= opts.kkt_tol, worst_dual_kkt);

    // (vi) uniqueness by a perturbed restart.
    double worst_unique = 0.0;
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        const PrimalSolution alt = solve_primal(tree, field, x_grid[i], {0.3, false});
        for (std::size_t n = 0; n < tree.size(); ++n)
            if (tree.dkappa(n) > 0.0)
                worst_unique = std::max(worst_unique, std::abs(alt.c[n] - primal[i].c[n]) /
                                                          std::max(1.0, std::abs(primal[i].c[n])));
    }
    add("primal optimizer unique", "vi", worst_unique <= opts.uniqueness_tol, worst_unique);

    // (vii) c_hat = I(t, Y*) and (viii) budget saturation.
    double worst_chat = 0.0, worst_sat = 0.0;
    for (double y : y_grid) {
        const DualSolution d = solve_dual(tree, field, y);
        const double x = -d.v_prime;
        std::vector<double> f(tree.size());
        for (std::size_t n = 0; n < tree.size(); ++n) f[n] = (d.c_hat[n] - tree.endow(n)) * tree.dkappa(n);
        const double worst = optimize_dp(tree, s, f, true).value;
        worst_sat = std::max(worst_sat, std::abs(worst - x));
        if (x > -L) {
            const PrimalSolution ps = solve_primal(tree, field, x, {0.0, false});
            for (std::size_t n = 0; n < tree.size(); ++n)
                if (tree.dkappa(n) > 0.0)
                    worst_chat = std::max(worst_chat, std::abs(ps.c[n] - d.c_hat[n]) /
                                                          std::max(1.0, std::abs(d.c_hat[n])));
        }
    }
    add("optimal consumption equals I(t, Y*)", "vii", worst_chat <= opts.c_hat_tol, worst_chat);
    add("budget saturation", "viii", worst_sat <= opts.saturation_tol, worst_sat);

    double worst_gap = 0.0;
    for (double x : x_grid) worst_gap = std::max(worst_gap, strong_duality_gap(tree, field, x));
    add("strong duality gap", "u(x) = inf_y v(y) + xy", worst_gap <= opts.gap_tol, worst_gap);

    double worst_conj = 0.0;
    for (double y : y_grid) worst_conj = std::max(worst_conj, conjugacy_gap(tree, field, y));
    add("conjugacy", "v(y) = sup_x u(x) - xy", worst_conj <= opts.conjugacy_tol, worst_conj);

    add("wealth and budget forms agree", "budget characterization", worst_forms <= opts.primal_forms_tol,
        worst_forms);
    add("primal KKT residual", "solver", worst_kkt <= opts.kkt_tol, worst_kkt);

    double worst_convex = 0.0;
    for (std::size_t i = 1; i + 1 < rep.y_grid.size(); ++i) {
        const double s1 = (rep.v_values[i] - rep.v_values[i - 1]) / (rep.y_grid[i] - rep.y_grid[i - 1]);
        const double s2 = (rep.v_values[i + 1] - rep.v_values[i]) / (rep.y_grid[i + 1] - rep.y_grid[i]);
        worst_convex = std::max(worst_convex, s1 - s2);
    }
    add("v convex", "conjugate", worst_convex <= 1e-9, worst_convex);
    return rep;
}

}  // namespace stoclock
