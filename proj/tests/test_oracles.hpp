#ifndef SURCMM_TEST_ORACLES_HPP
#define SURCMM_TEST_ORACLES_HPP

// Independent oracles used by the unit and acceptance suites. Everything here
// deliberately avoids the library's quadrature/optimizer code paths: densities
// are written out directly, integrals use composite Simpson on a fixed grid,
// and maximizers are plain grid searches.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "surcmm/marginals.hpp"

namespace oracle {

inline double lognormal_logpdf(double y, double location, double sd) {
    const double d = std::log(y) - location;
    return -std::log(y) - std::log(sd) - 0.5 * std::log(2.0 * M_PI) - 0.5 * d * d / (sd * sd);
}

inline double gamma_logpdf(double y, double shape, double scale) {
    return shape * (std::log(y) - std::log(scale)) - y / scale - std::lgamma(shape) - std::log(y);
}

inline double cell_logpdf(surcmm::Family family, double y, double eta, double sigma) {
    if (family == surcmm::Family::lognormal) return lognormal_logpdf(y, eta, sigma);
    const double mu = std::exp(eta);
    return gamma_logpdf(y, sigma, mu / sigma);
}

// log integral of exp(f_log) over [lo, hi] by composite Simpson with n panels
// (n even), stabilized by the running maximum.
inline double simpson_log_integral(const std::function<double(double)>& f_log, double lo, double hi, int n) {
    if (n % 2 != 0) ++n;
    const double h = (hi - lo) / n;
    std::vector<double> values(static_cast<size_t>(n) + 1);
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= n; ++k) {
        values[static_cast<size_t>(k)] = f_log(lo + k * h);
        m = std::max(m, values[static_cast<size_t>(k)]);
    }
    double sum = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        sum += w * std::exp(values[static_cast<size_t>(k)] - m);
    }
    return m + std::log(sum * h / 3.0);
}

// Brute-force mixed-model company log-likelihood: numerical integration of
// the joint over b across a wide window around the integrand's peak.
inline double company_loglik(const surcmm::MarginalSpec& spec, const surcmm::MarginalParams& params,
                             const surcmm::CompanyCells& cells, double lo, double hi, int panels = 20000) {
    auto joint = [&](double b) {
        double s = -0.5 * std::log(2.0 * M_PI) - std::log(params.tau) - 0.5 * b * b / (params.tau * params.tau);
        for (size_t k = 0; k < cells.y.size(); ++k) {
            const double eta = surcmm::linear_predictor(params, cells.rows[k], b);
            s += cell_logpdf(spec.family, cells.y[k], eta, params.sigma);
        }
        return s;
    };
    return simpson_log_integral(joint, lo, hi, panels);
}

// Posterior-mode oracle: scan then refine to the stated resolution.
inline double grid_search_mode(const std::function<double(double)>& f, double lo, double hi,
                               double resolution = 1e-4) {
    double best_x = lo, best_f = f(lo);
    for (int pass = 0; pass < 8; ++pass) {
        const int n = 200;
        const double h = (hi - lo) / n;
        for (int k = 0; k <= n; ++k) {
            const double x = lo + k * h;
            const double v = f(x);
            if (v > best_f) {
                best_f = v;
                best_x = x;
            }
        }
        lo = best_x - h;
        hi = best_x + h;
        if (h < resolution) break;
    }
    return best_x;
}

} // namespace oracle

#endif // SURCMM_TEST_ORACLES_HPP
