#ifndef SURCMM_COPULAS_HPP
#define SURCMM_COPULAS_HPP

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "surcmm/errors.hpp"
#include "surcmm/math.hpp"
#include "surcmm/optim.hpp"
#include "surcmm/rng.hpp"

namespace surcmm {

enum class CopulaFamily { gaussian, independence };
enum class ThetaScope { shared, per_company };

struct CopulaSpec {
    CopulaFamily family = CopulaFamily::gaussian;
    ThetaScope scope = ThetaScope::shared;
};

// |theta| is kept inside [-1+1e-6, 1-1e-6] during optimization; a fit landing
// on the clamp is flagged in diagnostics.
inline constexpr double theta_bound = 1.0 - 1e-6;

struct DependenceParams {
    CopulaSpec spec;
    double shared_theta = 0.0;
    std::map<std::string, double> theta_by_company;
    bool at_boundary = false;

    double theta_for(const std::string& company_id) const {
        if (spec.family == CopulaFamily::independence) return 0.0;
        if (spec.scope == ThetaScope::shared) return shared_theta;
        const auto it = theta_by_company.find(company_id);
        if (it == theta_by_company.end())
            throw ValidationError("no dependence parameter for company " + company_id);
        return it->second;
    }
};

inline double copula_log_density(const CopulaSpec& spec, double theta, double u, double v) {
    if (!(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0))
        throw ValidationError("copula_log_density: u and v must lie strictly in (0,1)");
    if (spec.family == CopulaFamily::independence) return 0.0;
    if (!(std::fabs(theta) < 1.0))
        throw ValidationError("copula_log_density: |theta| must be < 1");
    const double x = normal_quantile(u);
    const double y = normal_quantile(v);
    const double t2 = theta * theta;
    // grouped so the expression is exactly exchangeable in (u, v)
    return -0.5 * std::log1p(-t2) -
           (t2 * (x * x + y * y) - 2.0 * theta * (x * y)) / (2.0 * (1.0 - t2));
}

// Rank pairs of one company's residuals, upper-triangle cell order.
struct CompanyRankPairs {
    std::string company_id;
    std::vector<std::pair<double, double>> pairs;
};

inline double copula_pseudo_loglik(const CopulaSpec& spec, const DependenceParams& params,
                                   std::span<const CompanyRankPairs> companies) {
    if (spec.family == CopulaFamily::independence) return 0.0;
    double total = 0.0;
    for (const auto& c : companies) {
        const double theta = params.theta_for(c.company_id);
        for (const auto& [u, v] : c.pairs) total += copula_log_density(spec, theta, u, v);
    }
    return total;
}

namespace detail {

struct ScoreStats {
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    double n = 0.0;
    double pearson = 0.0;
};

inline ScoreStats normal_score_stats(std::span<const std::pair<double, double>> pairs) {
    ScoreStats s;
    double sx = 0.0, sy = 0.0;
    std::vector<double> xs, ys;
    xs.reserve(pairs.size());
    ys.reserve(pairs.size());
    for (const auto& [u, v] : pairs) {
        const double x = normal_quantile(u);
        const double y = normal_quantile(v);
        xs.push_back(x);
        ys.push_back(y);
        s.sxx += x * x;
        s.syy += y * y;
        s.sxy += x * y;
        sx += x;
        sy += y;
    }
    s.n = static_cast<double>(pairs.size());
    const double vx = s.sxx - sx * sx / s.n;
    const double vy = s.syy - sy * sy / s.n;
    const double cxy = s.sxy - sx * sy / s.n;
    s.pearson = (vx > 0.0 && vy > 0.0) ? cxy / std::sqrt(vx * vy) : 0.0;
    return s;
}

// Pooled Gaussian pseudo log-likelihood reduces to the score cross-products.
inline double gaussian_pseudo_loglik(const ScoreStats& s, double theta) {
    const double t2 = theta * theta;
    return -0.5 * s.n * std::log1p(-t2) -
           (t2 * (s.sxx + s.syy) - 2.0 * theta * s.sxy) / (2.0 * (1.0 - t2));
}

inline std::pair<double, bool> fit_theta_one(const ScoreStats& s) {
    auto objective = [&](double t) { return gaussian_pseudo_loglik(s, t); };
    const auto brent = brent_maximize(objective, -theta_bound, theta_bound, 1e-12);
    double init = std::clamp(s.pearson, -theta_bound, theta_bound);
    double theta = brent.x;
    // the returned value must attain at least the initializer's objective
    if (objective(init) > brent.fx) theta = init;
    const bool boundary = std::fabs(theta) >= theta_bound - 1e-9;
    return {theta, boundary};
}

} // namespace detail

// Maximum rank-based pseudo-likelihood estimate of theta; independent 1-D
// problems per company under per_company scope.
inline DependenceParams fit_copula(const CopulaSpec& spec, std::span<const CompanyRankPairs> companies) {
    DependenceParams out;
    out.spec = spec;
    if (spec.family == CopulaFamily::independence) return out;

    if (spec.scope == ThetaScope::shared) {
        std::vector<std::pair<double, double>> all;
        for (const auto& c : companies) all.insert(all.end(), c.pairs.begin(), c.pairs.end());
        if (all.size() < 3) throw ValidationError("fit_copula: need at least 3 rank pairs");
        const auto stats = detail::normal_score_stats(all);
        const auto [theta, boundary] = detail::fit_theta_one(stats);
        out.shared_theta = theta;
        out.at_boundary = boundary;
        return out;
    }
    for (const auto& c : companies) {
        if (c.pairs.size() < 3)
            throw ValidationError("fit_copula: company " + c.company_id + " has fewer than 3 rank pairs");
        const auto stats = detail::normal_score_stats(c.pairs);
        const auto [theta, boundary] = detail::fit_theta_one(stats);
        out.theta_by_company[c.company_id] = theta;
        out.at_boundary = out.at_boundary || boundary;
    }
    return out;
}

// n pairs with uniform marginals and Gaussian dependence theta; consumes
// exactly two uniforms per pair from the caller-owned stream.
inline std::vector<std::pair<double, double>> sample_copula(const CopulaSpec& spec, double theta, int n,
                                                            RngStream& rng) {
    if (spec.family == CopulaFamily::gaussian && !(std::fabs(theta) < 1.0))
        throw ValidationError("sample_copula: |theta| must be < 1");
    std::vector<std::pair<double, double>> out;
    out.reserve(static_cast<size_t>(n));
    const double root = spec.family == CopulaFamily::gaussian ? std::sqrt(1.0 - theta * theta) : 1.0;
    for (int k = 0; k < n; ++k) {
        const double u = rng.next_uniform();
        const double w = rng.next_uniform();
        if (spec.family == CopulaFamily::independence) {
            out.emplace_back(u, w);
            continue;
        }
        const double z1 = normal_quantile(u);
        const double z2 = theta * z1 + root * normal_quantile(w);
        double v = normal_cdf(z2);
        v = std::clamp(v, 1e-300, 1.0 - 1e-16);
        out.emplace_back(u, v);
    }
    return out;
}

} // namespace surcmm

#endif // SURCMM_COPULAS_HPP
