#ifndef SURCMM_MARGINALS_HPP
#define SURCMM_MARGINALS_HPP

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "surcmm/errors.hpp"
#include "surcmm/math.hpp"
#include "surcmm/quadrature.hpp"
#include "surcmm/triangles.hpp"

namespace surcmm {

enum class Family { lognormal, gamma };

inline std::string family_name(Family f) { return f == Family::lognormal ? "lognormal" : "gamma"; }

// Marginal mixed model for one LOB: log link, company random intercept
// b_c ~ N(0, tau^2) integrated out by adaptive Gauss-Hermite quadrature.
struct MarginalSpec {
    Family family = Family::gamma;
    int quadrature_nodes = 20;  // >= 5
};

// beta layout under reference-cell coding (accident year 1 and development
// year 1 absorbed into the intercept):
//   beta[0]                intercept xi
//   beta[i-1],   i=2..I    accident-year effect alpha_i
//   beta[I+j-2], j=2..I    development-year effect lambda_j
struct MarginalParams {
    Eigen::VectorXd beta;
    double sigma = 1.0;  // shape (gamma) / log-scale sd (lognormal), > 0
    double tau = 0.0;    // random-effect sd, >= 0
};

inline int beta_length(int I) { return 2 * I - 1; }
inline int accident_slot(int i) { return i - 1; }             // i >= 2
inline int development_slot(int I, int j) { return I + j - 2; }  // j >= 2

struct DesignRow {
    int accident_year = 1;
    int development_year = 1;
};

inline double linear_predictor(const MarginalParams& params, DesignRow row, double b_c) {
    const int I = (static_cast<int>(params.beta.size()) + 1) / 2;
    double eta = params.beta[0] + b_c;
    if (row.accident_year >= 2) eta += params.beta[accident_slot(row.accident_year)];
    if (row.development_year >= 2) eta += params.beta[development_slot(I, row.development_year)];
    return eta;
}

inline double cell_loglik(const MarginalSpec& spec, const MarginalParams& params, double y, double eta) {
    if (!(y > 0.0)) throw ValidationError("cell_loglik: y must be positive");
    const double sigma = params.sigma;
    if (spec.family == Family::lognormal) {
        const double d = std::log(y) - eta;
        return -std::log(y) - std::log(sigma) - 0.5 * log_2pi - 0.5 * d * d / (sigma * sigma);
    }
    // gamma, mean parameterization: mu = exp(eta), shape sigma, scale gamma = mu/sigma
    return (sigma - 1.0) * std::log(y) - sigma * (eta - std::log(sigma)) - sigma * y * std::exp(-eta) -
           std::lgamma(sigma);
}

// One company's observed cells for one LOB, standardized, in canonical order.
struct CompanyCells {
    std::string company_id;
    int I = 0;
    std::vector<DesignRow> rows;
    std::vector<double> y;
    std::vector<double> log_y;
    double sum_log_y = 0.0;
};

inline CompanyCells make_company_cells(std::string company_id, const StandardizedTriangle& t) {
    CompanyCells c;
    c.company_id = std::move(company_id);
    c.I = t.size;
    const auto cells = upper_triangle_cells(t.size);
    c.rows.reserve(cells.size());
    c.y.reserve(cells.size());
    c.log_y.reserve(cells.size());
    for (const auto& idx : cells) {
        c.rows.push_back({idx.accident_year, idx.development_year});
        const double v = t.cell(idx.accident_year, idx.development_year);
        if (!(v > 0.0))
            throw ValidationError("company " + c.company_id + ": nonpositive standardized loss at cell (" +
                                  std::to_string(idx.accident_year) + "," + std::to_string(idx.development_year) + ")");
        c.y.push_back(v);
        c.log_y.push_back(std::log(v));
        c.sum_log_y += c.log_y.back();
    }
    return c;
}

struct CompanyEffects {
    std::map<std::string, double> b_hat;
};

struct ResidualTriangle {
    int I = 0;
    std::vector<double> residuals;  // canonical order
    std::vector<double> ranks;      // in (0,1)
};

namespace detail {

// Company log-likelihood given b collapses to sufficient statistics, so each
// quadrature node costs O(1) after an O(n) pass over the cells.
struct CompanyStats {
    int n = 0;
    double A = 0.0;   // sum log y
    double B = 0.0;   // sum eta0
    double S2 = 0.0;  // sum y * exp(-eta0)      (gamma)
    double P1 = 0.0;  // sum (log y - eta0)      (lognormal)
    double P2 = 0.0;  // sum (log y - eta0)^2    (lognormal)
};

inline double eta0_of(const MarginalParams& params, int I, DesignRow row) {
    double eta = params.beta[0];
    if (row.accident_year >= 2) eta += params.beta[accident_slot(row.accident_year)];
    if (row.development_year >= 2) eta += params.beta[development_slot(I, row.development_year)];
    return eta;
}

inline CompanyStats company_stats(const MarginalSpec& spec, const MarginalParams& params, const CompanyCells& c) {
    CompanyStats s;
    s.n = static_cast<int>(c.y.size());
    s.A = c.sum_log_y;
    for (size_t k = 0; k < c.y.size(); ++k) {
        const double eta0 = eta0_of(params, c.I, c.rows[k]);
        s.B += eta0;
        if (spec.family == Family::gamma) {
            s.S2 += c.y[k] * std::exp(-eta0);
        } else {
            const double d = c.log_y[k] - eta0;
            s.P1 += d;
            s.P2 += d * d;
        }
    }
    return s;
}

inline double loglik_given_b(const MarginalSpec& spec, double sigma, const CompanyStats& s, double b) {
    if (spec.family == Family::gamma)
        return (sigma - 1.0) * s.A - sigma * s.B - sigma * s.n * b + s.n * sigma * std::log(sigma) -
               sigma * std::exp(-b) * s.S2 - s.n * std::lgamma(sigma);
    const double q = s.P2 - 2.0 * b * s.P1 + s.n * b * b;
    return -s.A - s.n * (std::log(sigma) + 0.5 * log_2pi) - 0.5 * q / (sigma * sigma);
}

inline double dloglik_db(const MarginalSpec& spec, double sigma, const CompanyStats& s, double b) {
    if (spec.family == Family::gamma) return sigma * (std::exp(-b) * s.S2 - s.n);
    return (s.P1 - s.n * b) / (sigma * sigma);
}

inline double d2loglik_db2(const MarginalSpec& spec, double sigma, const CompanyStats& s, double b) {
    if (spec.family == Family::gamma) return -sigma * std::exp(-b) * s.S2;
    return -s.n / (sigma * sigma);
}

// Posterior mode of b under N(0, tau^2); psi(b) = loglik(b) - b^2/(2 tau^2) is
// strictly concave for both families.
inline double posterior_mode(const MarginalSpec& spec, const MarginalParams& params, const CompanyStats& s) {
    const double sigma = params.sigma, tau = params.tau;
    if (tau == 0.0) return 0.0;
    if (spec.family == Family::lognormal)
        return s.P1 * tau * tau / (s.n * tau * tau + sigma * sigma);

    const double inv_tau2 = 1.0 / (tau * tau);
    auto dpsi = [&](double b) { return dloglik_db(spec, sigma, s, b) - b * inv_tau2; };
    double lo = -1.0, hi = 1.0;
    for (int k = 0; k < 200 && dpsi(lo) <= 0.0; ++k) lo *= 2.0;
    for (int k = 0; k < 200 && dpsi(hi) >= 0.0; ++k) hi *= 2.0;
    double b = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double g = dpsi(b);
        const double h = d2loglik_db2(spec, sigma, s, b) - inv_tau2;
        double step = -g / h;
        double bn = b + step;
        if (!(bn > lo && bn < hi)) bn = 0.5 * (lo + hi);  // bisection fallback
        if (dpsi(bn) > 0.0)
            lo = bn;
        else
            hi = bn;
        if (std::fabs(bn - b) <= 1e-13 * std::max(1.0, std::fabs(b))) return bn;
        b = bn;
    }
    return b;
}

struct CompanyIntegral {
    double loglik = 0.0;
    double mode = 0.0;
    double scale = 0.0;
    double e_b = 0.0;       // posterior mean of b
    double e_b2 = 0.0;      // posterior mean of b^2
    double e_exp_mb = 1.0;  // posterior mean of exp(-b)
};

// Adaptive Gauss-Hermite around the posterior mode. tau = 0 collapses to the
// fixed-effects likelihood exactly.
inline CompanyIntegral company_integral(const MarginalSpec& spec, const MarginalParams& params,
                                        const CompanyStats& s, bool want_moments) {
    CompanyIntegral out;
    const double tau = params.tau;
    if (tau == 0.0) {
        out.loglik = loglik_given_b(spec, params.sigma, s, 0.0);
        return out;
    }
    const double mode = posterior_mode(spec, params, s);
    const double curv = -(d2loglik_db2(spec, params.sigma, s, mode) - 1.0 / (tau * tau));
    const double scale = 1.0 / std::sqrt(curv);
    const auto& rule = gauss_hermite_rule(spec.quadrature_nodes);
    const int m = static_cast<int>(rule.nodes.size());
    const double log_tau_prior = -std::log(tau) - 0.5 * log_2pi;

    constexpr int stack_cap = 64;
    double logv_stack[stack_cap], bs_stack[stack_cap];
    std::vector<double> logv_heap, bs_heap;
    double* logv = logv_stack;
    double* bs = bs_stack;
    if (m > stack_cap) {
        logv_heap.resize(static_cast<size_t>(m));
        bs_heap.resize(static_cast<size_t>(m));
        logv = logv_heap.data();
        bs = bs_heap.data();
    }
    double lmax = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < m; ++k) {
        const double x = rule.nodes[static_cast<size_t>(k)];
        const double b = mode + std::sqrt(2.0) * scale * x;
        bs[k] = b;
        const double psi = loglik_given_b(spec, params.sigma, s, b) + log_tau_prior -
                           0.5 * b * b / (tau * tau);
        logv[k] = rule.log_weights[static_cast<size_t>(k)] + x * x + psi;
        lmax = std::max(lmax, logv[k]);
    }
    double z = 0.0;
    for (int k = 0; k < m; ++k) z += std::exp(logv[k] - lmax);
    out.loglik = 0.5 * std::log(2.0) + std::log(scale) + lmax + std::log(z);
    out.mode = mode;
    out.scale = scale;
    if (want_moments) {
        double eb = 0.0, eb2 = 0.0, eemb = 0.0;
        for (int k = 0; k < m; ++k) {
            const double p = std::exp(logv[k] - lmax) / z;
            eb += p * bs[k];
            eb2 += p * bs[k] * bs[k];
            eemb += p * std::exp(-bs[k]);
        }
        out.e_b = eb;
        out.e_b2 = eb2;
        out.e_exp_mb = eemb;
    }
    return out;
}

} // namespace detail

inline double company_marginal_loglik(const MarginalSpec& spec, const MarginalParams& params,
                                      const CompanyCells& company) {
    if (spec.quadrature_nodes < 5) throw ValidationError("quadrature_nodes must be >= 5");
    if (!(params.sigma > 0.0)) throw ValidationError("sigma must be positive");
    if (params.tau < 0.0) throw ValidationError("tau must be nonnegative");
    const auto stats = detail::company_stats(spec, params, company);
    const auto integral = detail::company_integral(spec, params, stats, false);
    if (!std::isfinite(integral.loglik))
        throw NumericalError("company_marginal_loglik non-finite for company " + company.company_id);
    return integral.loglik;
}

inline double portfolio_marginal_loglik(const MarginalSpec& spec, const MarginalParams& params,
                                        std::span<const CompanyCells> companies) {
    double total = 0.0;
    for (const auto& c : companies) total += company_marginal_loglik(spec, params, c);
    return total;
}

// Log-likelihood and its gradient with respect to (beta, log sigma, log tau),
// stacked as [beta(0..p-1), log sigma, log tau]. The gradient uses the Fisher
// identity: d/dpsi log L_c = E_posterior[d/dpsi log f(y,b; psi)], evaluated on
// the same quadrature nodes as the likelihood. When include_tau is false the
// stacked vector is [beta, log sigma] and tau is held fixed.
inline double portfolio_loglik_grad(const MarginalSpec& spec, const MarginalParams& params,
                                    std::span<const CompanyCells> companies, bool include_tau,
                                    Eigen::VectorXd& grad) {
    const int p = static_cast<int>(params.beta.size());
    const int dim = p + 1 + (include_tau ? 1 : 0);
    grad.setZero(dim);
    double total = 0.0;
    const double sigma = params.sigma, tau = params.tau;

    for (const auto& c : companies) {
        const auto stats = detail::company_stats(spec, params, c);
        const auto integral = detail::company_integral(spec, params, stats, true);
        total += integral.loglik;
        if (!std::isfinite(integral.loglik)) return integral.loglik;

        if (spec.family == Family::gamma) {
            const double e1 = tau == 0.0 ? 1.0 : integral.e_exp_mb;
            for (size_t k = 0; k < c.y.size(); ++k) {
                const double eta0 = detail::eta0_of(params, c.I, c.rows[k]);
                const double score = sigma * (e1 * c.y[k] * std::exp(-eta0) - 1.0);
                const auto& row = c.rows[k];
                grad[0] += score;
                if (row.accident_year >= 2) grad[accident_slot(row.accident_year)] += score;
                if (row.development_year >= 2) grad[development_slot(c.I, row.development_year)] += score;
            }
            const double dsigma = stats.A - stats.B - stats.n * integral.e_b +
                                  stats.n * (std::log(sigma) + 1.0) - e1 * stats.S2 -
                                  stats.n * boost::math::digamma(sigma);
            grad[p] += sigma * dsigma;
        } else {
            const double eb = integral.e_b;
            for (size_t k = 0; k < c.y.size(); ++k) {
                const double eta0 = detail::eta0_of(params, c.I, c.rows[k]);
                const double score = (c.log_y[k] - eta0 - eb) / (sigma * sigma);
                const auto& row = c.rows[k];
                grad[0] += score;
                if (row.accident_year >= 2) grad[accident_slot(row.accident_year)] += score;
                if (row.development_year >= 2) grad[development_slot(c.I, row.development_year)] += score;
            }
            const double q = stats.P2 - 2.0 * eb * stats.P1 + stats.n * integral.e_b2;
            grad[p] += sigma * (-stats.n / sigma + q / (sigma * sigma * sigma));
        }
        if (include_tau) grad[p + 1] += -1.0 + integral.e_b2 / (tau * tau);
    }
    return total;
}

// Posterior-mode random intercepts (empirical Bayes); tau = 0 gives zeros.
inline CompanyEffects predict_company_effects(const MarginalSpec& spec, const MarginalParams& params,
                                              std::span<const CompanyCells> companies) {
    CompanyEffects effects;
    for (const auto& c : companies) {
        if (params.tau == 0.0) {
            effects.b_hat[c.company_id] = 0.0;
            continue;
        }
        const auto stats = detail::company_stats(spec, params, c);
        effects.b_hat[c.company_id] = detail::posterior_mode(spec, params, stats);
    }
    return effects;
}

// Pearson-style pseudo-residuals:
//   lognormal: (log y - eta_hat) / sigma_hat
//   gamma:     (y - mu_hat) / sqrt(mu_hat * gamma_hat),  gamma_hat = mu_hat / sigma_hat
inline ResidualTriangle pseudo_residuals(const MarginalSpec& spec, const MarginalParams& params, double b_hat,
                                         const CompanyCells& company) {
    ResidualTriangle r;
    r.I = company.I;
    r.residuals.reserve(company.y.size());
    for (size_t k = 0; k < company.y.size(); ++k) {
        const double eta = detail::eta0_of(params, company.I, company.rows[k]) + b_hat;
        if (spec.family == Family::lognormal) {
            r.residuals.push_back((company.log_y[k] - eta) / params.sigma);
        } else {
            const double mu = std::exp(eta);
            r.residuals.push_back((company.y[k] - mu) / (mu / std::sqrt(params.sigma)));
        }
    }
    return r;
}

// Within-company empirical-CDF ranks with denominator n+1; ties share the
// count of all values <= the tied value (max rank of the tie group).
inline std::vector<double> residual_ranks(std::span<const double> residuals) {
    const size_t n = residuals.size();
    if (n == 0) throw ValidationError("residual_ranks: empty residual set");
    std::vector<double> sorted(residuals.begin(), residuals.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> ranks(n);
    for (size_t k = 0; k < n; ++k) {
        const auto it = std::upper_bound(sorted.begin(), sorted.end(), residuals[k]);
        ranks[k] = static_cast<double>(it - sorted.begin()) / static_cast<double>(n + 1);
    }
    return ranks;
}

} // namespace surcmm

#endif // SURCMM_MARGINALS_HPP
