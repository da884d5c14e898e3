#ifndef SURCMM_OPTIM_HPP
#define SURCMM_OPTIM_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "surcmm/errors.hpp"

namespace surcmm {

struct BrentResult {
    double x = 0.0;
    double fx = 0.0;
    int iterations = 0;
};

// Brent's derivative-free maximizer on [a, b] (golden section + successive
// parabolic interpolation).
template <typename F>
BrentResult brent_maximize(F&& f, double a, double b, double tol = 1e-10, int max_iter = 200) {
    constexpr double golden = 0.3819660112501051;
    constexpr double tiny = 1e-12;
    auto neg = [&](double t) { return -f(t); };

    double x = a + golden * (b - a);
    double w = x, v = x;
    double fx = neg(x), fw = fx, fv = fx;
    double d = 0.0, e = 0.0;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        const double m = 0.5 * (a + b);
        const double tol1 = tol * std::fabs(x) + tiny;
        const double tol2 = 2.0 * tol1;
        if (std::fabs(x - m) <= tol2 - 0.5 * (b - a)) break;
        bool parabolic = false;
        if (std::fabs(e) > tol1) {
            const double r = (x - w) * (fx - fv);
            double q = (x - v) * (fx - fw);
            double p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if (q > 0.0) p = -p;
            q = std::fabs(q);
            const double e_old = e;
            e = d;
            if (std::fabs(p) < std::fabs(0.5 * q * e_old) && p > q * (a - x) && p < q * (b - x)) {
                d = p / q;
                const double u = x + d;
                if (u - a < tol2 || b - u < tol2) d = x < m ? tol1 : -tol1;
                parabolic = true;
            }
        }
        if (!parabolic) {
            e = (x < m ? b : a) - x;
            d = golden * e;
        }
        const double u = std::fabs(d) >= tol1 ? x + d : x + (d > 0.0 ? tol1 : -tol1);
        const double fu = neg(u);
        if (fu <= fx) {
            if (u < x)
                b = x;
            else
                a = x;
            v = w; fv = fw;
            w = x; fw = fx;
            x = u; fx = fu;
        } else {
            if (u < x)
                a = u;
            else
                b = u;
            if (fu <= fw || w == x) {
                v = w; fv = fw;
                w = u; fw = fu;
            } else if (fu <= fv || v == x || v == w) {
                v = u; fv = fu;
            }
        }
    }
    return {x, -fx, iter};
}

struct BfgsOptions {
    double grad_tol = 1e-8;   // infinity norm
    int max_iter = 600;
    int max_backtracks = 60;
};

struct BfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    Eigen::VectorXd grad;
    int iterations = 0;
    bool converged = false;
};

// Dense BFGS with backtracking Armijo line search. fg(x, grad) returns f and
// fills grad; non-finite values are treated as out-of-domain and backtracked.
template <typename FG>
BfgsResult bfgs_minimize(FG&& fg, Eigen::VectorXd x0, const BfgsOptions& opts = {}) {
    const int n = static_cast<int>(x0.size());
    BfgsResult res;
    res.x = std::move(x0);
    res.grad.resize(n);
    res.f = fg(res.x, res.grad);
    if (!std::isfinite(res.f))
        throw NumericalError("bfgs_minimize: objective non-finite at the starting point");

    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g_new(n);
    bool scaled = false;

    for (int it = 0; it < opts.max_iter; ++it) {
        if (res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
            res.converged = true;
            res.iterations = it;
            return res;
        }
        Eigen::VectorXd dir = -(H * res.grad);
        double slope = res.grad.dot(dir);
        if (slope >= 0.0) {  // reset on loss of descent
            H.setIdentity();
            dir = -res.grad;
            slope = res.grad.dot(dir);
        }
        double step = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int bt = 0; bt < opts.max_backtracks; ++bt) {
            x_new = res.x + step * dir;
            f_new = fg(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            res.iterations = it;
            res.converged = res.grad.lpNorm<Eigen::Infinity>() <= 10.0 * opts.grad_tol;
            return res;
        }
        const Eigen::VectorXd s = x_new - res.x;
        const Eigen::VectorXd yv = g_new - res.grad;
        const double ys = yv.dot(s);
        if (ys > 1e-12 * yv.norm() * s.norm()) {
            if (!scaled) {
                H = (ys / yv.squaredNorm()) * Eigen::MatrixXd::Identity(n, n);
                scaled = true;
            }
            const Eigen::VectorXd Hy = H * yv;
            const double yHy = yv.dot(Hy);
            const double rho = 1.0 / ys;
            // BFGS inverse update
            H += (1.0 + rho * yHy) * rho * (s * s.transpose()) -
                 rho * (Hy * s.transpose() + s * Hy.transpose());
        }
        res.x = x_new;
        res.f = f_new;
        res.grad = g_new;
        res.iterations = it + 1;
    }
    res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
    return res;
}

inline double soft_threshold(double t, double a) {
    if (t > a) return t - a;
    if (t < -a) return t + a;
    return 0.0;
}

// Coordinate descent on the local quadratic model
//   q(z) = g.(z-x) + 1/2 (z-x)' H (z-x) + lambda * sum_{j penalized} |z_j|
// used as the proximal-Newton subproblem; returns the minimizing z.
inline Eigen::VectorXd l1_quadratic_cd(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                       const Eigen::MatrixXd& H, const std::vector<bool>& penalized,
                                       double lambda, int max_sweeps = 500, double tol = 1e-12) {
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd z = x;
    Eigen::VectorXd hdz = Eigen::VectorXd::Zero(n);  // H (z - x), kept incrementally
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_move = 0.0;
        for (int j = 0; j < n; ++j) {
            const double hjj = H(j, j);
            const double rj = g[j] + hdz[j];
            const double target = z[j] - rj / hjj;
            double znew = penalized[static_cast<size_t>(j)] ? soft_threshold(target, lambda / hjj) : target;
            const double delta = znew - z[j];
            if (delta != 0.0) {
                z[j] = znew;
                hdz += delta * H.col(j);
                max_move = std::max(max_move, std::fabs(delta));
            }
        }
        if (max_move <= tol * std::max(1.0, z.lpNorm<Eigen::Infinity>())) break;
    }
    return z;
}

} // namespace surcmm

#endif // SURCMM_OPTIM_HPP
