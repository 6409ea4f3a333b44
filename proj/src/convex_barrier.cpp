#include "convex_barrier.hpp"

#include <cmath>
#include <limits>
#include <vector>
#include <stdexcept>

namespace stoclock::detail {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd nullspace_basis(const Eigen::MatrixXd& A, Eigen::Index n) {
    if (A.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    lu.setThreshold(1e-12);
    if (lu.rank() == n) return Eigen::MatrixXd(n, 0);
    const Eigen::MatrixXd k = lu.kernel();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(k);
    return qr.householderQ() * Eigen::MatrixXd::Identity(n, k.cols());
}

}  // namespace

BarrierResult solve_barrier(const BarrierProblem& p, const Eigen::VectorXd& z0,
                            const BarrierOptions& opts) {
    const Eigen::Index n = z0.size();
    const Eigen::Index m = p.G.rows();
    if (p.G.cols() != n && m > 0) throw std::invalid_argument("solve_barrier: G has wrong width");
    if (p.A.rows() > 0 && p.A.cols() != n) throw std::invalid_argument("solve_barrier: A has wrong width");

    const Eigen::MatrixXd N = nullspace_basis(p.A, n);
    BarrierResult res;
    Eigen::VectorXd z = z0;

    auto slack = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return m > 0 ? Eigen::VectorXd(p.h - p.G * v) : Eigen::VectorXd();
    };
    {
        const Eigen::VectorXd s = slack(z);
        if (m > 0 && s.minCoeff() <= 0.0)
            throw std::invalid_argument("solve_barrier: starting point is not strictly feasible");
        if (!std::isfinite(p.value(z)))
            throw std::invalid_argument("solve_barrier: starting point outside the objective domain");
    }

    double t = m > 0 ? opts.t0 : 1.0;
    auto merit = [&](const Eigen::VectorXd& v) {
        const Eigen::VectorXd s = slack(v);
        double b = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (!(s[j] > 0.0)) return kInf;
            b -= std::log(s[j]);
        }
        const double f = p.value(v);
        if (!std::isfinite(f)) return kInf;
        return t * f + b;
    };

    Eigen::VectorXd g(n);
    Eigen::MatrixXd H(n, n);
    Eigen::VectorXd reduced_grad;
    auto directional = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dir) {
        Eigen::VectorXd gv;
        Eigen::MatrixXd Hv;
        p.derivatives(v, gv, Hv);
        double d = t * gv.dot(dir);
        if (m > 0) d += (p.G * dir).dot(slack(v).cwiseInverse());
        return d;
    };
    for (int outer = 0; outer < 64; ++outer) {
        for (int it = 0; it < 100 && res.newton_steps < opts.max_newton; ++it) {
            p.derivatives(z, g, H);
            Eigen::VectorXd grad = t * g;
            Eigen::MatrixXd hess = t * H;
            if (m > 0) {
                const Eigen::VectorXd d = slack(z).cwiseInverse();
                grad += p.G.transpose() * d;
                hess += p.G.transpose() * d.cwiseAbs2().asDiagonal() * p.G;
            }
            reduced_grad = N.transpose() * grad;
            if (N.cols() == 0) break;
            Eigen::MatrixXd hr = N.transpose() * hess * N;
            const double scale = std::max(1.0, hr.diagonal().cwiseAbs().maxCoeff());
            hr.diagonal().array() += opts.ridge * scale;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(hr);
            Eigen::VectorXd dw = -ldlt.solve(reduced_grad);
            if (ldlt.info() != Eigen::Success || !dw.allFinite()) {
                res.message = "Newton system could not be solved";
                break;
            }
            const double decrement = -reduced_grad.dot(dw);
            if (!(decrement > 1e-20)) break;
            if (0.5 * decrement <= 1e-20) break;
            const Eigen::VectorXd dz = N * dw;
            const double f0 = merit(z);
            double step = 1.0;
            bool moved = false;
            while (step > 1e-16) {
                const Eigen::VectorXd cand = z + step * dz;
                const double f1 = merit(cand);
                if (f1 <= f0 - 0.25 * step * decrement) {
                    z = cand;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) {
                // Merit differences are below roundoff; bisect on the sign of
                // the directional derivative instead, which stays accurate.
                double lo = 0.0, hi = 1.0;
                while (hi > 1e-16 && !std::isfinite(merit(z + hi * dz))) hi *= 0.5;
                if (directional(z + hi * dz, dz) <= 0.0) {
                    lo = hi;
                } else {
                    for (int b = 0; b < 60; ++b) {
                        const double mid = 0.5 * (lo + hi);
                        (directional(z + mid * dz, dz) <= 0.0 ? lo : hi) = mid;
                    }
                }
                if (lo > 0.0) {
                    z += lo * dz;
                    moved = true;
                }
            }
            ++res.newton_steps;
            if (!moved) break;  // roundoff floor of the merit function
        }
        if (m == 0 || static_cast<double>(m) / t <= opts.gap_tol) break;
        t *= opts.t_factor;
    }

    auto finish = [&](const Eigen::VectorXd& zz, const Eigen::VectorXd& lambda) {
        BarrierResult out;
        out.newton_steps = res.newton_steps;
        out.message = res.message;
        p.derivatives(zz, g, H);
        const Eigen::VectorXd s = slack(zz);
        out.z = zz;
        out.value = p.value(zz);
        Eigen::VectorXd r = g;
        if (m > 0) {
            out.lambda = lambda;
            r += p.G.transpose() * lambda;
            out.complementarity = (lambda.array() * s.array()).abs().maxCoeff();
            out.infeasibility = std::max(0.0, -s.minCoeff());
        }
        if (p.A.rows() > 0) {
            out.nu = p.A.transpose().colPivHouseholderQr().solve(-r);
            r += p.A.transpose() * out.nu;
            out.infeasibility = std::max(out.infeasibility, (p.A * zz - p.b).cwiseAbs().maxCoeff());
        }
        out.stationarity = r.size() > 0 ? r.cwiseAbs().maxCoeff() : 0.0;
        out.kkt_residual = std::max({out.stationarity, out.complementarity, out.infeasibility});
        return out;
    };

    res = finish(z, m > 0 ? Eigen::VectorXd((t * slack(z).array()).inverse().matrix()) : Eigen::VectorXd());

    // Newton on the KKT equations of the constraints the barrier left active.
    // Removes the O(1/t) bias that the central path leaves behind.
    if (m > 0 && std::isfinite(res.value)) {
        const Eigen::VectorXd s = slack(z);
        std::vector<Eigen::Index> act;
        for (Eigen::Index j = 0; j < m; ++j)
            if (res.lambda[j] > s[j]) act.push_back(j);
        const auto k = static_cast<Eigen::Index>(act.size());
        const Eigen::Index q = p.A.rows();
        Eigen::MatrixXd GA(k, n);
        Eigen::VectorXd hA(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            GA.row(i) = p.G.row(act[static_cast<std::size_t>(i)]);
            hA[i] = p.h[act[static_cast<std::size_t>(i)]];
        }
        Eigen::VectorXd zz = z;
        Eigen::VectorXd mu(k);
        for (Eigen::Index i = 0; i < k; ++i) mu[i] = res.lambda[act[static_cast<std::size_t>(i)]];
        Eigen::VectorXd nu = q > 0 ? res.nu : Eigen::VectorXd();
        for (int it = 0; it < 30; ++it) {
            p.derivatives(zz, g, H);
            Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k + q, n + k + q);
            Eigen::VectorXd rhs(n + k + q);
            K.topLeftCorner(n, n) = H;
            K.block(0, n, n, k) = GA.transpose();
            K.block(n, 0, k, n) = GA;
            rhs.head(n) = -(g + GA.transpose() * mu);
            rhs.segment(n, k) = hA - GA * zz;
            if (q > 0) {
                K.block(0, n + k, n, q) = p.A.transpose();
                K.block(n + k, 0, q, n) = p.A;
                rhs.head(n) -= p.A.transpose() * nu;
                rhs.tail(q) = p.b - p.A * zz;
            }
            if (rhs.cwiseAbs().maxCoeff() <= 1e-15) break;
            const Eigen::VectorXd d = K.colPivHouseholderQr().solve(rhs);
            if (!d.allFinite()) break;
            zz += d.head(n);
            mu += d.segment(n, k);
            if (q > 0) nu += d.tail(q);
        }
        Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
        for (Eigen::Index i = 0; i < k; ++i) lambda[act[static_cast<std::size_t>(i)]] = mu[i];
        const Eigen::VectorXd sz = slack(zz);
        bool ok = zz.allFinite() && (k == 0 || mu.minCoeff() >= 0.0) && std::isfinite(p.value(zz));
        for (Eigen::Index j = 0; ok && j < m; ++j)
            if (lambda[j] == 0.0 && !(sz[j] > 0.0)) ok = false;
        if (ok) {
            BarrierResult polished = finish(zz, lambda);
            if (polished.kkt_residual < res.kkt_residual) res = polished;
        }
    }

    res.converged = std::isfinite(res.value) && res.kkt_residual <= 1e-8;
    if (res.message.empty()) res.message = res.converged ? "converged" : "KKT residual above 1e-8";
    return res;
}

}  // namespace stoclock::detail
