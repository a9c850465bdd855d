#include "soh/optim.hpp"

#include <cmath>
#include <deque>

namespace soh::optim {

namespace {

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                        const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

double projected_grad_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    double m = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double gi = g[i];
        if (x[i] <= lo[i]) gi = std::min(gi, 0.0);
        if (x[i] >= hi[i]) gi = std::max(gi, 0.0);
        m = std::max(m, std::abs(gi));
    }
    return m;
}

}  // namespace

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double h,
                            int* eval_count) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double up = std::min(x[i] + h, hi[i]);
        const double dn = std::max(x[i] - h, lo[i]);
        if (!(up > dn)) throw DomainError("fd_gradient: box too tight for finite differencing");
        xp[i] = up;
        xm[i] = dn;
        g[i] = (f(xp) - f(xm)) / (up - dn);
        if (eval_count) *eval_count += 2;
        xp[i] = x[i];
        xm[i] = x[i];
    }
    return g;
}

Result minimize_box(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi, const Options& opts) {
    const Eigen::Index n = x0.size();
    if (lo.size() != n || hi.size() != n) throw DomainError("minimize_box: bound size mismatch");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(lo[i] < hi[i])) throw DomainError("minimize_box: empty box");

    Result res;
    Eigen::VectorXd x = project(x0, lo, hi);
    double fx = f(x);
    res.n_evals = 1;
    Eigen::VectorXd g = fd_gradient(f, x, lo, hi, opts.fd_step, &res.n_evals);

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        res.iterations = iter;
        if (projected_grad_norm(x, g, lo, hi) < opts.grad_tol) {
            res.converged = true;
            break;
        }

        // Two-loop recursion.
        Eigen::VectorXd q = -g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * s_hist[k].dot(q);
            q -= alpha[k] * y_hist[k];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * y_hist[k].dot(q);
            q += (alpha[k] - beta) * s_hist[k];
        }
        Eigen::VectorXd d = q;
        if (d.dot(g) >= 0) d = -g;  // fall back to steepest descent

        double step = (iter == 0 && s_hist.empty())
                          ? std::min(1.0, 1.0 / std::max(1e-12, g.lpNorm<1>()))
                          : 1.0;
        const double c1 = 1e-4;
        Eigen::VectorXd x_new;
        double f_new = fx;
        bool accepted = false;
        for (int ls = 0; ls < opts.max_line_steps; ++ls) {
            x_new = project(x + step * d, lo, hi);
            if ((x_new - x).lpNorm<Eigen::Infinity>() == 0.0) break;
            f_new = f(x_new);
            ++res.n_evals;
            if (f_new <= fx + c1 * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.converged = projected_grad_norm(x, g, lo, hi) < 1e2 * opts.grad_tol;
            break;
        }

        Eigen::VectorXd g_new = fd_gradient(f, x_new, lo, hi, opts.fd_step, &res.n_evals);
        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if ((int)s_hist.size() > opts.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double df = std::abs(fx - f_new);
        x = std::move(x_new);
        fx = f_new;
        g = std::move(g_new);
        if (df <= opts.f_tol * (std::abs(fx) + 1e-12)) {
            res.converged = true;
            break;
        }
    }

    res.x = std::move(x);
    res.f = fx;
    return res;
}

double minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol,
                       int max_iters) {
    if (!(lo < hi)) throw DomainError("minimize_scalar: empty interval");
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < max_iters && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace soh::optim
