#pragma once

// Log-barrier Newton method for small dense problems
//   minimize phi(z)  subject to  G z <= h,  A z = b
// with phi convex and twice differentiable on its open domain.

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace stoclock::detail {

struct BarrierProblem {
    /// +infinity outside the domain of phi.
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::MatrixXd&)> derivatives;
    Eigen::MatrixXd G;
    Eigen::VectorXd h;
    Eigen::MatrixXd A;  // may have zero rows
    Eigen::VectorXd b;
};

struct BarrierOptions {
    double t0 = 1.0;
    double t_factor = 10.0;
    double gap_tol = 1e-9;  // stop once m / t <= gap_tol
    int max_newton = 1000;
    double ridge = 1e-13;
};

struct BarrierResult {
    Eigen::VectorXd z;
    Eigen::VectorXd lambda;  // inequality multipliers 1/(t s_j)
    Eigen::VectorXd nu;      // equality multipliers (least squares)
    double value = 0.0;
    double stationarity = 0.0;
    double complementarity = 0.0;
    double infeasibility = 0.0;
    double kkt_residual = 0.0;
    int newton_steps = 0;
    bool converged = false;
    std::string message;
};

/// z0 must satisfy A z0 = b, G z0 < h and lie in the domain of phi.
BarrierResult solve_barrier(const BarrierProblem& p, const Eigen::VectorXd& z0,
                            const BarrierOptions& opts = {});

}  // namespace stoclock::detail
