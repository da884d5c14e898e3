#ifndef SURCMM_ESTIMATION_HPP
#define SURCMM_ESTIMATION_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surcmm/copulas.hpp"
#include "surcmm/errors.hpp"
#include "surcmm/marginals.hpp"
#include "surcmm/optim.hpp"
#include "surcmm/triangles.hpp"

namespace surcmm {

enum class ModelKind { sur_copula, surcmm, ssurcmm };

inline std::string model_name(ModelKind k) {
    switch (k) {
        case ModelKind::sur_copula: return "sur-copula";
        case ModelKind::surcmm: return "surcmm";
        case ModelKind::ssurcmm: return "ssurcmm";
    }
    return "?";
}

enum class PenaltyScope { none, accident_only, development_only, both };

struct PenaltyConfig {
    PenaltyScope scope = PenaltyScope::none;
    double lambda1 = 0.0;  // active/selected penalty for LOB1
    double lambda2 = 0.0;  // and LOB2; the intercept is never penalized
    std::vector<std::pair<double, double>> grid;

    void validate() const {
        if (scope == PenaltyScope::none && (lambda1 != 0.0 || lambda2 != 0.0 || !grid.empty()))
            throw ValidationError("PenaltyConfig: scope none requires zero lambdas and an empty grid");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("PenaltyConfig: negative lambda");
    }
};

struct GridPointResult {
    double lambda1 = 0.0, lambda2 = 0.0;
    double total_loglik = 0.0;
    int df = 0;
    double aic = 0.0;
};

struct FitDiagnostics {
    int outer_iterations = 0;
    double final_change_norm = 0.0;
    bool converged = false;
    double marginal_loglik_1 = 0.0;
    double marginal_loglik_2 = 0.0;
    double copula_loglik = 0.0;
    double total_loglik = 0.0;
    int df = 0;
    double aic = 0.0;
    bool theta_at_boundary = false;
    std::vector<double> objective_per_iteration;  // penalized objective at each outer iterate
    std::vector<GridPointResult> aic_table;
};

struct JointModelFit {
    ModelKind kind = ModelKind::surcmm;
    int I = 0;
    std::vector<std::string> company_ids;
    MarginalSpec spec_1, spec_2;
    CopulaSpec copula;
    MarginalParams params_1, params_2;
    CompanyEffects effects_1, effects_2;
    DependenceParams dependence;
    PenaltyConfig penalty;
    Eigen::VectorXd thresholded_beta_1, thresholded_beta_2;  // components are 0 or equal to the fit
    double threshold = 0.0;
    FitDiagnostics diagnostics;

    const Eigen::VectorXd& reserve_beta(int lob) const {
        // sparse model predicts from the thresholded coefficients
        if (kind == ModelKind::ssurcmm) return lob == 1 ? thresholded_beta_1 : thresholded_beta_2;
        return lob == 1 ? params_1.beta : params_2.beta;
    }
};

struct FitOptions {
    double tolerance = 1e-4;   // outer stopping on the stacked parameter change
    int max_outer = 50;
    double inner_grad_tol = 1e-8;  // on the per-cell-normalized gradient
    bool use_bic = false;          // lambda selection criterion switch; AIC by default
};

// ---------------------------------------------------------------------------
// Prepared data: standardized cells per company per LOB, canonical company
// order (sorted ids) so that estimates are exactly order-invariant.
// ---------------------------------------------------------------------------

struct PreparedLob {
    std::vector<CompanyCells> companies;
    Eigen::MatrixXd xtx;  // sum over cells of x x', for the proximal metric
    int total_cells = 0;
};

struct PreparedPortfolio {
    int I = 0;
    std::vector<std::string> ids;
    PreparedLob lob1, lob2;

    const PreparedLob& lob(int k) const { return k == 1 ? lob1 : lob2; }
    PreparedLob& lob(int k) { return k == 1 ? lob1 : lob2; }
};

namespace detail {

inline void add_design(Eigen::MatrixXd& xtx, int I, DesignRow row) {
    int slots[3];
    int m = 0;
    slots[m++] = 0;
    if (row.accident_year >= 2) slots[m++] = accident_slot(row.accident_year);
    if (row.development_year >= 2) slots[m++] = development_slot(I, row.development_year);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) xtx(slots[a], slots[b]) += 1.0;
}

} // namespace detail

inline PreparedPortfolio prepare_portfolio(const Portfolio& portfolio) {
    validate_portfolio(portfolio);
    PreparedPortfolio prep;
    prep.I = portfolio.size;
    const int p = beta_length(prep.I);

    std::vector<const LossTrianglePair*> order;
    order.reserve(portfolio.companies.size());
    for (const auto& c : portfolio.companies) order.push_back(&c);
    std::sort(order.begin(), order.end(),
              [](const auto* a, const auto* b) { return a->company_id < b->company_id; });

    for (int lob = 1; lob <= 2; ++lob) {
        auto& pl = prep.lob(lob);
        pl.xtx = Eigen::MatrixXd::Zero(p, p);
        for (const auto* c : order) {
            const LossTriangle& t = lob == 1 ? c->triangle_1 : c->triangle_2;
            pl.companies.push_back(make_company_cells(c->company_id, standardize(t)));
            for (const auto& row : pl.companies.back().rows) detail::add_design(pl.xtx, prep.I, row);
            pl.total_cells += static_cast<int>(pl.companies.back().y.size());
        }
    }
    for (const auto* c : order) prep.ids.push_back(c->company_id);
    return prep;
}

// ---------------------------------------------------------------------------
// Penalized-coefficient masks and df accounting
// ---------------------------------------------------------------------------

inline std::vector<bool> penalized_mask(int I, PenaltyScope scope) {
    std::vector<bool> mask(static_cast<size_t>(beta_length(I)), false);
    if (scope == PenaltyScope::accident_only || scope == PenaltyScope::both)
        for (int i = 2; i <= I; ++i) mask[static_cast<size_t>(accident_slot(i))] = true;
    if (scope == PenaltyScope::development_only || scope == PenaltyScope::both)
        for (int j = 2; j <= I; ++j) mask[static_cast<size_t>(development_slot(I, j))] = true;
    return mask;
}

inline int count_nonzero(const Eigen::VectorXd& beta) {
    int n = 0;
    for (int j = 0; j < beta.size(); ++j)
        if (beta[j] != 0.0) ++n;
    return n;
}

// df per the sparse-model AIC: nonzero fixed-effect coefficients across both
// LOBs, the two dispersion parameters, the two variance parameters, and the
// dependence parameter(s). Shared theta gives the +5 constant; per-company
// scope counts one theta per company.
inline int model_df(const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2, const CopulaSpec& copula,
                    int n_companies) {
    const int n_theta = copula.family == CopulaFamily::independence
                            ? 0
                            : (copula.scope == ThetaScope::shared ? 1 : n_companies);
    return count_nonzero(beta1) + count_nonzero(beta2) + 4 + n_theta;
}

inline double aic_from(double total_loglik, int df) { return -2.0 * total_loglik + 2.0 * df; }

inline double aic(const JointModelFit& fit) {
    const int df = model_df(fit.params_1.beta, fit.params_2.beta, fit.copula,
                            static_cast<int>(fit.company_ids.size()));
    return aic_from(fit.diagnostics.total_loglik, df);
}

// ---------------------------------------------------------------------------
// Initialization: fixed-effects ML for beta (tau = 0), method-of-moments
// sigma, and tau0 from the spread of per-company mean residuals.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd ols_log_beta(const PreparedLob& pl, int I) {
    const int p = beta_length(I);
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
    for (const auto& c : pl.companies)
        for (size_t k = 0; k < c.y.size(); ++k) {
            int slots[3];
            int m = 0;
            slots[m++] = 0;
            if (c.rows[k].accident_year >= 2) slots[m++] = accident_slot(c.rows[k].accident_year);
            if (c.rows[k].development_year >= 2) slots[m++] = development_slot(I, c.rows[k].development_year);
            for (int a = 0; a < m; ++a) {
                xty(slots[a]) += c.log_y[k];
                for (int b = 0; b < m; ++b) xtx(slots[a], slots[b]) += 1.0;
            }
        }
    return xtx.ldlt().solve(xty);
}

// Gamma fixed-effects ML for beta; the shape cancels from the score, so this
// is shape-free Newton scoring started from the log-scale OLS fit.
inline Eigen::VectorXd gamma_ml_beta(const PreparedLob& pl, int I) {
    const int p = beta_length(I);
    Eigen::VectorXd beta = ols_log_beta(pl, I);
    MarginalParams tmp;
    tmp.sigma = 1.0;
    tmp.tau = 0.0;
    for (int it = 0; it < 100; ++it) {
        tmp.beta = beta;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
        for (const auto& c : pl.companies)
            for (size_t k = 0; k < c.y.size(); ++k) {
                const double eta0 = eta0_of(tmp, I, c.rows[k]);
                const double w = c.y[k] * std::exp(-eta0);
                int slots[3];
                int m = 0;
                slots[m++] = 0;
                if (c.rows[k].accident_year >= 2) slots[m++] = accident_slot(c.rows[k].accident_year);
                if (c.rows[k].development_year >= 2) slots[m++] = development_slot(I, c.rows[k].development_year);
                for (int a = 0; a < m; ++a) {
                    g(slots[a]) += w - 1.0;
                    for (int b = 0; b < m; ++b) H(slots[a], slots[b]) += w;
                }
            }
        const Eigen::VectorXd step = H.ldlt().solve(g);
        beta += step;
        if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
    }
    return beta;
}

} // namespace detail

inline MarginalParams initial_marginal_params(const MarginalSpec& spec, const PreparedLob& pl, int I,
                                              bool random_effects) {
    MarginalParams params;
    params.beta = spec.family == Family::gamma ? detail::gamma_ml_beta(pl, I) : detail::ols_log_beta(pl, I);

    double ssq = 0.0;
    int n = 0;
    std::vector<double> company_means;
    MarginalParams tmp = params;
    tmp.sigma = 1.0;
    tmp.tau = 0.0;
    for (const auto& c : pl.companies) {
        double m = 0.0;
        for (size_t k = 0; k < c.y.size(); ++k) {
            const double eta0 = detail::eta0_of(tmp, I, c.rows[k]);
            const double r = spec.family == Family::gamma ? c.y[k] * std::exp(-eta0) - 1.0
                                                          : c.log_y[k] - eta0;
            ssq += r * r;
            m += r;
            ++n;
        }
        company_means.push_back(m / static_cast<double>(c.y.size()));
    }
    if (spec.family == Family::gamma) {
        params.sigma = std::clamp(static_cast<double>(n) / ssq, 1e-3, 1e6);  // 1 / mean squared CV residual
    } else {
        params.sigma = std::clamp(std::sqrt(ssq / static_cast<double>(n)), 1e-6, 1e3);
    }
    params.tau = 0.0;
    if (random_effects) {
        double tau0 = company_means.size() >= 2 ? sample_sd(company_means) : 0.1;
        // map the residual-scale spread back to the linear-predictor scale
        if (spec.family == Family::lognormal) tau0 *= 1.0;  // residual mean is already b-scale for log data
        params.tau = std::clamp(tau0, 1e-3, 2.0);
    }
    return params;
}

// ---------------------------------------------------------------------------
// Inner optimizers
// ---------------------------------------------------------------------------

namespace detail {

struct PackLayout {
    int p = 0;
    bool with_tau = false;
    int dim() const { return p + 1 + (with_tau ? 1 : 0); }
};

inline Eigen::VectorXd pack(const MarginalParams& params, const PackLayout& lay) {
    Eigen::VectorXd x(lay.dim());
    x.head(lay.p) = params.beta;
    x[lay.p] = std::log(params.sigma);
    if (lay.with_tau) x[lay.p + 1] = std::log(params.tau);
    return x;
}

inline MarginalParams unpack(const Eigen::VectorXd& x, const PackLayout& lay, double fixed_tau) {
    MarginalParams params;
    params.beta = x.head(lay.p);
    params.sigma = std::exp(x[lay.p]);
    params.tau = lay.with_tau ? std::exp(x[lay.p + 1]) : fixed_tau;
    return params;
}

// Maximizes the (per-cell normalized) marginal log-likelihood over
// (beta, log sigma[, log tau]) for one LOB.
inline MarginalParams fit_marginal_smooth(const MarginalSpec& spec, const PreparedLob& pl,
                                          MarginalParams start, bool random_effects, double grad_tol) {
    const PackLayout lay{static_cast<int>(start.beta.size()), random_effects};
    const double scale = 1.0 / static_cast<double>(pl.total_cells);
    auto fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) -> double {
        const MarginalParams params = unpack(x, lay, start.tau);
        Eigen::VectorXd g;
        const double ll = portfolio_loglik_grad(spec, params, pl.companies, lay.with_tau, g);
        if (!std::isfinite(ll)) {
            grad.setZero(lay.dim());
            return std::numeric_limits<double>::infinity();
        }
        grad = -scale * g;
        // below tau ~ 1e-4 the likelihood is flat in log tau to within the
        // tolerance; zeroing the component stops an unbounded downhill crawl
        if (lay.with_tau && params.tau < 1e-4) grad[lay.p + 1] = std::min(grad[lay.p + 1], 0.0);
        return -scale * ll;
    };
    BfgsOptions opts;
    opts.grad_tol = grad_tol;
    const auto res = bfgs_minimize(fg, pack(start, lay), opts);
    return unpack(res.x, lay, start.tau);
}

// L1-penalized beta update at fixed (sigma, tau): proximal Newton with the
// expected-information metric and coordinate-descent subproblems. lambda is on
// the natural (unnormalized) log-likelihood scale.
inline void fit_beta_penalized(const MarginalSpec& spec, const PreparedLob& pl, MarginalParams& params,
                               const std::vector<bool>& mask, double lambda, double grad_tol) {
    const int p = static_cast<int>(params.beta.size());
    const double scale = 1.0 / static_cast<double>(pl.total_cells);
    const double lam = lambda * scale;

    const double info = spec.family == Family::gamma ? params.sigma : 1.0 / (params.sigma * params.sigma);
    Eigen::MatrixXd H = info * scale * pl.xtx;
    H.diagonal().array() += 1e-10;

    auto eval = [&](const Eigen::VectorXd& beta, Eigen::VectorXd* grad) -> double {
        MarginalParams trial = params;
        trial.beta = beta;
        if (grad) {
            Eigen::VectorXd g;
            const double ll = portfolio_loglik_grad(spec, trial, pl.companies, false, g);
            *grad = -scale * g.head(p);
            return -scale * ll;
        }
        double ll = 0.0;
        for (const auto& c : pl.companies) {
            const auto stats = company_stats(spec, trial, c);
            ll += company_integral(spec, trial, stats, false).loglik;
        }
        return -scale * ll;
    };
    auto penalty = [&](const Eigen::VectorXd& beta) {
        double s = 0.0;
        for (int j = 0; j < p; ++j)
            if (mask[static_cast<size_t>(j)]) s += std::fabs(beta[j]);
        return lam * s;
    };

    Eigen::VectorXd beta = params.beta;
    Eigen::VectorXd grad(p);
    double f = eval(beta, &grad);
    double composite = f + penalty(beta);
    for (int it = 0; it < 200; ++it) {
        const Eigen::VectorXd z = l1_quadratic_cd(beta, grad, H, mask, lam);
        const Eigen::VectorXd step = z - beta;
        if (step.lpNorm<Eigen::Infinity>() <= grad_tol * std::max(1.0, beta.lpNorm<Eigen::Infinity>()))
            break;
        double t = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            const Eigen::VectorXd cand = beta + t * step;
            const double fc = eval(cand, nullptr);
            const double cc = fc + penalty(cand);
            if (std::isfinite(cc) && cc <= composite + 1e-14 * std::fabs(composite)) {
                beta = cand;
                composite = cc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;
        f = eval(beta, &grad);
    }
    params.beta = beta;
}

// (sigma, tau) update at fixed beta.
inline void fit_sigma_tau(const MarginalSpec& spec, const PreparedLob& pl, MarginalParams& params,
                          bool random_effects, double grad_tol) {
    const int p = static_cast<int>(params.beta.size());
    const double scale = 1.0 / static_cast<double>(pl.total_cells);
    const int dim = random_effects ? 2 : 1;
    auto fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) -> double {
        MarginalParams trial = params;
        trial.sigma = std::exp(x[0]);
        if (random_effects) trial.tau = std::exp(x[1]);
        Eigen::VectorXd g;
        const double ll = portfolio_loglik_grad(spec, trial, pl.companies, random_effects, g);
        if (!std::isfinite(ll)) {
            grad.setZero(dim);
            return std::numeric_limits<double>::infinity();
        }
        grad.resize(dim);
        grad[0] = -scale * g[p];
        if (random_effects) {
            grad[1] = -scale * g[p + 1];
            if (trial.tau < 1e-4) grad[1] = std::min(grad[1], 0.0);  // flat region, stop the crawl
        }
        return -scale * ll;
    };
    Eigen::VectorXd x0(dim);
    x0[0] = std::log(params.sigma);
    if (random_effects) x0[1] = std::log(params.tau);
    BfgsOptions opts;
    opts.grad_tol = grad_tol;
    const auto res = bfgs_minimize(fg, x0, opts);
    params.sigma = std::exp(res.x[0]);
    if (random_effects) params.tau = std::exp(res.x[1]);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Residual ranks / copula input and the joint objective
// ---------------------------------------------------------------------------

inline std::vector<CompanyRankPairs> rank_pairs(const PreparedPortfolio& prep, const MarginalSpec& spec1,
                                                const MarginalSpec& spec2, const MarginalParams& p1,
                                                const MarginalParams& p2, const CompanyEffects& e1,
                                                const CompanyEffects& e2) {
    std::vector<CompanyRankPairs> out;
    out.reserve(prep.ids.size());
    for (size_t c = 0; c < prep.ids.size(); ++c) {
        const auto& c1 = prep.lob1.companies[c];
        const auto& c2 = prep.lob2.companies[c];
        const auto r1 = pseudo_residuals(spec1, p1, e1.b_hat.at(c1.company_id), c1);
        const auto r2 = pseudo_residuals(spec2, p2, e2.b_hat.at(c2.company_id), c2);
        const auto k1 = residual_ranks(r1.residuals);
        const auto k2 = residual_ranks(r2.residuals);
        CompanyRankPairs pr;
        pr.company_id = c1.company_id;
        pr.pairs.reserve(k1.size());
        for (size_t k = 0; k < k1.size(); ++k) pr.pairs.emplace_back(k1[k], k2[k]);
        out.push_back(std::move(pr));
    }
    return out;
}

struct LoglikParts {
    double marginal_1 = 0.0;
    double marginal_2 = 0.0;
    double copula = 0.0;
    double total() const { return marginal_1 + marginal_2 + copula; }
};

inline LoglikParts evaluate_loglik(const PreparedPortfolio& prep, const MarginalSpec& spec1,
                                   const MarginalSpec& spec2, const MarginalParams& p1,
                                   const MarginalParams& p2, const DependenceParams& dependence) {
    LoglikParts parts;
    parts.marginal_1 = portfolio_marginal_loglik(spec1, p1, prep.lob1.companies);
    parts.marginal_2 = portfolio_marginal_loglik(spec2, p2, prep.lob2.companies);
    const auto e1 = predict_company_effects(spec1, p1, prep.lob1.companies);
    const auto e2 = predict_company_effects(spec2, p2, prep.lob2.companies);
    const auto pairs = rank_pairs(prep, spec1, spec2, p1, p2, e1, e2);
    parts.copula = copula_pseudo_loglik(dependence.spec, dependence, pairs);
    return parts;
}

// Eq-13-style penalized loss: negative joint log-likelihood (marginals plus
// rank-based copula term) plus the L1 penalties on the scoped coefficients.
inline double penalized_marginal_objective(const PreparedPortfolio& prep, const MarginalSpec& spec1,
                                           const MarginalSpec& spec2, const MarginalParams& p1,
                                           const MarginalParams& p2, const DependenceParams& dependence,
                                           const PenaltyConfig& penalty) {
    const auto parts = evaluate_loglik(prep, spec1, spec2, p1, p2, dependence);
    const auto mask = penalized_mask(prep.I, penalty.scope);
    double l1 = 0.0, l2 = 0.0;
    for (int j = 0; j < p1.beta.size(); ++j)
        if (mask[static_cast<size_t>(j)]) {
            l1 += std::fabs(p1.beta[j]);
            l2 += std::fabs(p2.beta[j]);
        }
    return -parts.total() + penalty.lambda1 * l1 + penalty.lambda2 * l2;
}

// ---------------------------------------------------------------------------
// Default lambda grid: log-spaced multipliers of the maximum absolute score
// of the null model (penalized coefficients pinned at zero).
// ---------------------------------------------------------------------------

inline std::vector<double> default_lambda_values(const MarginalSpec& spec, const PreparedLob& pl, int I,
                                                 const MarginalParams& start, const std::vector<bool>& mask,
                                                 int points = 7) {
    MarginalParams null_params = start;
    // a huge penalty pins the penalized block at zero while refitting the rest
    detail::fit_beta_penalized(spec, pl, null_params, mask, 1e12, 1e-9);
    Eigen::VectorXd g;
    portfolio_loglik_grad(spec, null_params, pl.companies, false, g);
    double s = 0.0;
    for (int j = 0; j < null_params.beta.size(); ++j)
        if (mask[static_cast<size_t>(j)]) s = std::max(s, std::fabs(g[j]));
    if (s <= 0.0) s = 1.0;
    // log-spaced multipliers down to 1e-5 of the null score: with the 1e-3
    // floor the AIC selection pins the smallest grid point on Appendix-E-sized
    // data, i.e. the grid fails to bracket the criterion's optimum.
    std::vector<double> values;
    for (int k = 0; k < points; ++k) {
        const double expo = -5.0 + 6.0 * static_cast<double>(k) / static_cast<double>(points - 1);
        values.push_back(s * std::pow(10.0, expo));
    }
    return values;
}

inline std::vector<std::pair<double, double>> default_lambda_grid(const MarginalSpec& spec1,
                                                                  const MarginalSpec& spec2,
                                                                  const PreparedPortfolio& prep,
                                                                  const MarginalParams& start1,
                                                                  const MarginalParams& start2,
                                                                  PenaltyScope scope, int points = 7) {
    const auto mask = penalized_mask(prep.I, scope);
    const auto v1 = default_lambda_values(spec1, prep.lob1, prep.I, start1, mask, points);
    const auto v2 = default_lambda_values(spec2, prep.lob2, prep.I, start2, mask, points);
    std::vector<std::pair<double, double>> grid;
    grid.reserve(v1.size() * v2.size());
    for (double a : v1)
        for (double b : v2) grid.emplace_back(a, b);
    return grid;
}

// ---------------------------------------------------------------------------
// Two-stage iterative fits
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd stack_parameters(const MarginalParams& p1, const MarginalParams& p2,
                                        const DependenceParams& dep, const std::vector<std::string>& ids) {
    const int p = static_cast<int>(p1.beta.size());
    const int n_theta = dep.spec.family == CopulaFamily::independence
                            ? 0
                            : (dep.spec.scope == ThetaScope::shared ? 1 : static_cast<int>(ids.size()));
    Eigen::VectorXd w(2 * p + 4 + n_theta);
    w.head(p) = p1.beta;
    w.segment(p, p) = p2.beta;
    w[2 * p] = p1.sigma;
    w[2 * p + 1] = p1.tau;
    w[2 * p + 2] = p2.sigma;
    w[2 * p + 3] = p2.tau;
    if (n_theta == 1) w[2 * p + 4] = dep.shared_theta;
    if (n_theta > 1)
        for (size_t c = 0; c < ids.size(); ++c) w[2 * p + 4 + static_cast<int>(c)] = dep.theta_by_company.at(ids[c]);
    return w;
}

struct FitState {
    MarginalParams p1, p2;
    CompanyEffects e1, e2;
    DependenceParams dependence;
};

inline void refresh_effects(FitState& st, const MarginalSpec& s1, const MarginalSpec& s2,
                            const PreparedPortfolio& prep) {
    st.e1 = predict_company_effects(s1, st.p1, prep.lob1.companies);
    st.e2 = predict_company_effects(s2, st.p2, prep.lob2.companies);
}

} // namespace detail

// Unpenalized SUR copula mixed model (Appendix-A schedule). random_effects
// false gives the SUR copula variant: tau pinned at zero, no company effects.
inline JointModelFit fit_surcmm_prepared(const PreparedPortfolio& prep, const MarginalSpec& spec1,
                                         const MarginalSpec& spec2, const CopulaSpec& copula,
                                         const FitOptions& options = {}, bool random_effects = true,
                                         const JointModelFit* warm_start = nullptr) {
    detail::FitState st;
    if (warm_start) {
        st.p1 = warm_start->params_1;
        st.p2 = warm_start->params_2;
    } else {
        st.p1 = initial_marginal_params(spec1, prep.lob1, prep.I, random_effects);
        st.p2 = initial_marginal_params(spec2, prep.lob2, prep.I, random_effects);
    }
    st.dependence.spec = copula;

    JointModelFit fit;
    fit.kind = random_effects ? ModelKind::surcmm : ModelKind::sur_copula;
    fit.I = prep.I;
    fit.company_ids = prep.ids;
    fit.spec_1 = spec1;
    fit.spec_2 = spec2;
    fit.copula = copula;
    fit.penalty.scope = PenaltyScope::none;

    Eigen::VectorXd w_prev = detail::stack_parameters(st.p1, st.p2, st.dependence, prep.ids);
    double change = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iter = 0;
    for (; iter < options.max_outer; ++iter) {
        detail::refresh_effects(st, spec1, spec2, prep);
        const auto pairs = rank_pairs(prep, spec1, spec2, st.p1, st.p2, st.e1, st.e2);
        st.dependence = fit_copula(copula, pairs);

        st.p1 = detail::fit_marginal_smooth(spec1, prep.lob1, st.p1, random_effects, options.inner_grad_tol);
        st.p2 = detail::fit_marginal_smooth(spec2, prep.lob2, st.p2, random_effects, options.inner_grad_tol);

        const auto parts = evaluate_loglik(prep, spec1, spec2, st.p1, st.p2, st.dependence);
        fit.diagnostics.objective_per_iteration.push_back(-parts.total());

        const Eigen::VectorXd w = detail::stack_parameters(st.p1, st.p2, st.dependence, prep.ids);
        change = (w - w_prev).norm();
        w_prev = w;
        if (change <= options.tolerance) {
            converged = true;
            ++iter;
            break;
        }
    }
    if (!converged)
        throw NumericalError("fit_surcmm did not converge in " + std::to_string(options.max_outer) +
                             " outer iterations (last change " + format_double(change) + ")");

    detail::refresh_effects(st, spec1, spec2, prep);
    const auto pairs = rank_pairs(prep, spec1, spec2, st.p1, st.p2, st.e1, st.e2);
    st.dependence = fit_copula(copula, pairs);

    fit.params_1 = st.p1;
    fit.params_2 = st.p2;
    fit.effects_1 = st.e1;
    fit.effects_2 = st.e2;
    fit.dependence = st.dependence;
    fit.thresholded_beta_1 = st.p1.beta;
    fit.thresholded_beta_2 = st.p2.beta;
    fit.threshold = 0.0;

    const auto parts = evaluate_loglik(prep, spec1, spec2, st.p1, st.p2, st.dependence);
    fit.diagnostics.outer_iterations = iter;
    fit.diagnostics.final_change_norm = change;
    fit.diagnostics.converged = true;
    fit.diagnostics.marginal_loglik_1 = parts.marginal_1;
    fit.diagnostics.marginal_loglik_2 = parts.marginal_2;
    fit.diagnostics.copula_loglik = parts.copula;
    fit.diagnostics.total_loglik = parts.total();
    fit.diagnostics.df = model_df(st.p1.beta, st.p2.beta, copula, static_cast<int>(prep.ids.size()));
    fit.diagnostics.aic = aic_from(parts.total(), fit.diagnostics.df);
    fit.diagnostics.theta_at_boundary = st.dependence.at_boundary;
    return fit;
}

inline JointModelFit fit_surcmm(const Portfolio& portfolio, const MarginalSpec& spec1, const MarginalSpec& spec2,
                                const CopulaSpec& copula, const FitOptions& options = {},
                                bool random_effects = true, const JointModelFit* warm_start = nullptr) {
    return fit_surcmm_prepared(prepare_portfolio(portfolio), spec1, spec2, copula, options, random_effects,
                               warm_start);
}

// Sparse variant (Appendix-B schedule): the (lambda1, lambda2) pair is chosen
// once by AIC (or BIC) over the grid, then the alternation runs at the fixed
// selection until the (theta, lambda1, lambda2) vector stabilizes.
inline JointModelFit fit_sparse_surcmm_prepared(const PreparedPortfolio& prep, const MarginalSpec& spec1,
                                                const MarginalSpec& spec2, const CopulaSpec& copula,
                                                PenaltyConfig penalty, const FitOptions& options = {},
                                                const JointModelFit* warm_start = nullptr) {
    if (penalty.scope == PenaltyScope::none)
        throw ValidationError("fit_sparse_surcmm: penalty scope none; use fit_surcmm instead");
    const auto mask = penalized_mask(prep.I, penalty.scope);
    const int n_obs = prep.lob1.total_cells + prep.lob2.total_cells;

    detail::FitState st;
    if (warm_start) {
        st.p1 = warm_start->params_1;
        st.p2 = warm_start->params_2;
    } else {
        st.p1 = initial_marginal_params(spec1, prep.lob1, prep.I, true);
        st.p2 = initial_marginal_params(spec2, prep.lob2, prep.I, true);
    }
    st.dependence.spec = copula;

    JointModelFit fit;
    fit.kind = ModelKind::ssurcmm;
    fit.I = prep.I;
    fit.company_ids = prep.ids;
    fit.spec_1 = spec1;
    fit.spec_2 = spec2;
    fit.copula = copula;

    // Grid present (or nothing specified): select (lambda1, lambda2) once by the
    // criterion. Grid empty with lambdas given: run at that fixed pair, which is
    // how bootstrap refits keep the observed-data selection.
    bool select_lambda = !penalty.grid.empty();
    if (penalty.grid.empty() && penalty.lambda1 == 0.0 && penalty.lambda2 == 0.0 && !warm_start) {
        penalty.grid = default_lambda_grid(spec1, spec2, prep, st.p1, st.p2, penalty.scope);
        select_lambda = true;
    }

    auto criterion = [&](double total_loglik, int df) {
        return options.use_bic ? -2.0 * total_loglik + std::log(static_cast<double>(n_obs)) * df
                               : aic_from(total_loglik, df);
    };

    Eigen::VectorXd w_prev;  // (theta..., lambda1, lambda2)
    double change = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iter = 0;
    for (; iter < options.max_outer; ++iter) {
        detail::refresh_effects(st, spec1, spec2, prep);
        const auto pairs = rank_pairs(prep, spec1, spec2, st.p1, st.p2, st.e1, st.e2);
        st.dependence = fit_copula(copula, pairs);

        if (iter == 0 && select_lambda) {
            // distinct per-LOB values, warm-started path from the largest lambda down
            auto values_of = [&](bool first) {
                std::vector<double> v;
                for (const auto& [a, b] : penalty.grid) v.push_back(first ? a : b);
                std::sort(v.begin(), v.end(), std::greater<>());
                v.erase(std::unique(v.begin(), v.end()), v.end());
                return v;
            };
            struct Candidate {
                MarginalParams params;
                double loglik = 0.0;
            };
            auto fit_path = [&](const MarginalSpec& spec, const PreparedLob& pl, const MarginalParams& start,
                                const std::vector<double>& lambdas) {
                std::map<double, Candidate> out;
                MarginalParams cur = start;
                for (double lam : lambdas) {
                    detail::fit_beta_penalized(spec, pl, cur, mask, lam, options.inner_grad_tol);
                    Candidate cand;
                    cand.params = cur;
                    cand.loglik = portfolio_marginal_loglik(spec, cur, pl.companies);
                    out[lam] = std::move(cand);
                }
                return out;
            };
            const auto path1 = fit_path(spec1, prep.lob1, st.p1, values_of(true));
            const auto path2 = fit_path(spec2, prep.lob2, st.p2, values_of(false));

            // The copula term is evaluated at the current pseudo-observations,
            // fixed across candidates: re-ranking each candidate's residuals
            // would add rank-flip noise of the same order as the marginal
            // log-likelihood differences the criterion is meant to compare.
            const double cop = copula_pseudo_loglik(copula, st.dependence, pairs);
            double best = std::numeric_limits<double>::infinity();
            std::pair<double, double> best_pair = penalty.grid.front();
            for (const auto& [l1, l2] : penalty.grid) {
                const auto& c1 = path1.at(l1);
                const auto& c2 = path2.at(l2);
                const double total = c1.loglik + c2.loglik + cop;
                const int df = model_df(c1.params.beta, c2.params.beta, copula, static_cast<int>(prep.ids.size()));
                const double value = criterion(total, df);
                fit.diagnostics.aic_table.push_back({l1, l2, total, df, value});
                if (value <= best) {  // ties resolve toward the later (sparser) grid entry
                    best = value;
                    best_pair = {l1, l2};
                }
            }
            penalty.lambda1 = best_pair.first;
            penalty.lambda2 = best_pair.second;
            st.p1 = path1.at(penalty.lambda1).params;
            st.p2 = path2.at(penalty.lambda2).params;
        }

        // beta and (sigma, tau) updates, alternated to joint convergence: the
        // effective penalty scales with sigma, so a single pass would leave
        // the marginal block drifting across outer iterations. The stall
        // threshold sits above the optimizers' own re-solve noise.
        for (int inner = 0; inner < 12; ++inner) {
            const Eigen::VectorXd before = detail::stack_parameters(st.p1, st.p2, st.dependence, prep.ids);
            detail::fit_beta_penalized(spec1, prep.lob1, st.p1, mask, penalty.lambda1, options.inner_grad_tol);
            detail::fit_beta_penalized(spec2, prep.lob2, st.p2, mask, penalty.lambda2, options.inner_grad_tol);
            detail::fit_sigma_tau(spec1, prep.lob1, st.p1, true, options.inner_grad_tol);
            detail::fit_sigma_tau(spec2, prep.lob2, st.p2, true, options.inner_grad_tol);
            const Eigen::VectorXd after = detail::stack_parameters(st.p1, st.p2, st.dependence, prep.ids);
            if ((after - before).lpNorm<Eigen::Infinity>() <= 100.0 * options.inner_grad_tol) break;
        }

        fit.diagnostics.objective_per_iteration.push_back(
            penalized_marginal_objective(prep, spec1, spec2, st.p1, st.p2, st.dependence,
                                         PenaltyConfig{penalty.scope, penalty.lambda1, penalty.lambda2, {}}));

        const int n_theta = copula.scope == ThetaScope::shared ? 1 : static_cast<int>(prep.ids.size());
        Eigen::VectorXd w(n_theta + 2);
        if (copula.scope == ThetaScope::shared)
            w[0] = st.dependence.shared_theta;
        else
            for (size_t c = 0; c < prep.ids.size(); ++c) w[static_cast<int>(c)] = st.dependence.theta_by_company.at(prep.ids[c]);
        w[n_theta] = penalty.lambda1;
        w[n_theta + 1] = penalty.lambda2;
        if (iter > 0) {
            change = (w - w_prev).norm();
            if (change <= options.tolerance) {
                w_prev = w;
                converged = true;
                ++iter;
                break;
            }
        }
        w_prev = w;
    }
    if (!converged)
        throw NumericalError("fit_sparse_surcmm did not converge in " + std::to_string(options.max_outer) +
                             " outer iterations (last change " + format_double(change) + ")");

    detail::refresh_effects(st, spec1, spec2, prep);
    const auto pairs = rank_pairs(prep, spec1, spec2, st.p1, st.p2, st.e1, st.e2);
    st.dependence = fit_copula(copula, pairs);

    fit.params_1 = st.p1;
    fit.params_2 = st.p2;
    fit.effects_1 = st.e1;
    fit.effects_2 = st.e2;
    fit.dependence = st.dependence;
    fit.penalty = penalty;
    fit.thresholded_beta_1 = st.p1.beta;
    fit.thresholded_beta_2 = st.p2.beta;
    fit.threshold = 0.0;

    const auto parts = evaluate_loglik(prep, spec1, spec2, st.p1, st.p2, st.dependence);
    fit.diagnostics.outer_iterations = iter;
    fit.diagnostics.final_change_norm = change;
    fit.diagnostics.converged = true;
    fit.diagnostics.marginal_loglik_1 = parts.marginal_1;
    fit.diagnostics.marginal_loglik_2 = parts.marginal_2;
    fit.diagnostics.copula_loglik = parts.copula;
    fit.diagnostics.total_loglik = parts.total();
    fit.diagnostics.df = model_df(st.p1.beta, st.p2.beta, copula, static_cast<int>(prep.ids.size()));
    fit.diagnostics.aic = aic_from(parts.total(), fit.diagnostics.df);
    fit.diagnostics.theta_at_boundary = st.dependence.at_boundary;
    return fit;
}

inline JointModelFit fit_sparse_surcmm(const Portfolio& portfolio, const MarginalSpec& spec1,
                                       const MarginalSpec& spec2, const CopulaSpec& copula,
                                       PenaltyConfig penalty, const FitOptions& options = {},
                                       const JointModelFit* warm_start = nullptr) {
    return fit_sparse_surcmm_prepared(prepare_portfolio(portfolio), spec1, spec2, copula, std::move(penalty),
                                      options, warm_start);
}

// ---------------------------------------------------------------------------
// Coefficient thresholding for the modified bootstrap: grid over
// [0, 2 * min nonzero |penalized beta|], scored by AIC at unchanged
// (sigma, tau, theta); ties break toward the larger (sparser) threshold.
// ---------------------------------------------------------------------------

struct ThresholdResult {
    Eigen::VectorXd beta_1, beta_2;
    double threshold = 0.0;
};

inline ThresholdResult threshold_coefficients(const JointModelFit& fit, const Portfolio& portfolio,
                                              int grid_points = 11) {
    const PreparedPortfolio prep = prepare_portfolio(portfolio);
    const auto mask = penalized_mask(fit.I, fit.penalty.scope);

    ThresholdResult res;
    res.beta_1 = fit.params_1.beta;
    res.beta_2 = fit.params_2.beta;
    res.threshold = 0.0;

    double min_nz = std::numeric_limits<double>::infinity();
    for (int j = 0; j < fit.params_1.beta.size(); ++j)
        if (mask[static_cast<size_t>(j)]) {
            if (fit.params_1.beta[j] != 0.0) min_nz = std::min(min_nz, std::fabs(fit.params_1.beta[j]));
            if (fit.params_2.beta[j] != 0.0) min_nz = std::min(min_nz, std::fabs(fit.params_2.beta[j]));
        }
    if (!std::isfinite(min_nz)) return res;  // nothing penalized is nonzero

    double best_value = std::numeric_limits<double>::infinity();
    for (int k = 0; k < grid_points; ++k) {
        const double t = 2.0 * min_nz * static_cast<double>(k) / static_cast<double>(grid_points - 1);
        MarginalParams q1 = fit.params_1, q2 = fit.params_2;
        for (int j = 0; j < q1.beta.size(); ++j)
            if (mask[static_cast<size_t>(j)]) {
                if (std::fabs(q1.beta[j]) < t) q1.beta[j] = 0.0;
                if (std::fabs(q2.beta[j]) < t) q2.beta[j] = 0.0;
            }
        const auto parts = evaluate_loglik(prep, fit.spec_1, fit.spec_2, q1, q2, fit.dependence);
        const int df = model_df(q1.beta, q2.beta, fit.copula, static_cast<int>(prep.ids.size()));
        const double value = aic_from(parts.total(), df);
        if (value <= best_value) {  // <= prefers the larger threshold on ties
            best_value = value;
            res.beta_1 = q1.beta;
            res.beta_2 = q2.beta;
            res.threshold = t;
        }
    }
    return res;
}

inline void apply_threshold(JointModelFit& fit, const Portfolio& portfolio, int grid_points = 11) {
    const auto res = threshold_coefficients(fit, portfolio, grid_points);
    fit.thresholded_beta_1 = res.beta_1;
    fit.thresholded_beta_2 = res.beta_2;
    fit.threshold = res.threshold;
}

// ---------------------------------------------------------------------------
// Marginal family selection by per-LOB AIC from unpenalized fits under the
// independence copula.
// ---------------------------------------------------------------------------

struct FamilySelection {
    MarginalSpec spec_1, spec_2;
    // per LOB, per candidate: (family, aic)
    std::vector<std::vector<std::pair<Family, double>>> table;
    bool tie_1 = false, tie_2 = false;
};

inline FamilySelection select_marginal_family(const Portfolio& portfolio,
                                              const std::vector<Family>& candidates = {Family::gamma,
                                                                                       Family::lognormal},
                                              int quadrature_nodes = 20, bool random_effects = true,
                                              double grad_tol = 1e-8) {
    if (candidates.size() < 2) throw ValidationError("select_marginal_family: need at least 2 candidates");
    const PreparedPortfolio prep = prepare_portfolio(portfolio);
    FamilySelection sel;
    sel.table.resize(2);
    for (int lob = 1; lob <= 2; ++lob) {
        double best = std::numeric_limits<double>::infinity();
        Family best_family = candidates.front();
        bool tie = false;
        for (const Family fam : candidates) {
            MarginalSpec spec{fam, quadrature_nodes};
            MarginalParams start = initial_marginal_params(spec, prep.lob(lob), prep.I, random_effects);
            const MarginalParams fitp =
                detail::fit_marginal_smooth(spec, prep.lob(lob), start, random_effects, grad_tol);
            const double ll = portfolio_marginal_loglik(spec, fitp, prep.lob(lob).companies);
            const double aic_v = -2.0 * ll + 2.0 * (static_cast<double>(fitp.beta.size()) + 2.0);
            sel.table[static_cast<size_t>(lob - 1)].emplace_back(fam, aic_v);
            if (aic_v == best) tie = true;  // documented tie-break: first candidate in declared order wins
            if (aic_v < best) {
                best = aic_v;
                best_family = fam;
            }
        }
        auto& spec = lob == 1 ? sel.spec_1 : sel.spec_2;
        spec = MarginalSpec{best_family, quadrature_nodes};
        (lob == 1 ? sel.tie_1 : sel.tie_2) = tie;
    }
    return sel;
}

} // namespace surcmm

#endif // SURCMM_ESTIMATION_HPP
