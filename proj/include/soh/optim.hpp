#pragma once

#include <Eigen/Core>
#include <functional>

#include "soh/common.hpp"

namespace soh::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Options {
    int max_iters = 200;
    double grad_tol = 1e-6;    // inf-norm of the projected gradient
    double f_tol = 1e-12;      // relative objective change
    int history = 8;           // L-BFGS memory
    double fd_step = 1e-5;     // central-difference step on the optimization variables
    int max_line_steps = 40;
};

struct Result {
    Eigen::VectorXd x;
    double f = 0;
    int iterations = 0;
    int n_evals = 0;
    bool converged = false;
};

// One-sided clamping central differences: evaluation points are kept inside
// the box and the divisor uses the realized span.
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double h,
                            int* eval_count = nullptr);

// Projected L-BFGS with Armijo backtracking. Gradients come from central
// finite differences of the objective.
Result minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi, const Options& opts = {});

// Golden-section scalar minimization on [lo, hi].
double minimize_scalar(const std::function<double(double)>& f, double lo, double hi,
                       double tol = 1e-8, int max_iters = 200);

}  // namespace soh::optim
