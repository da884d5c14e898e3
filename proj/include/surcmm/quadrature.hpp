#ifndef SURCMM_QUADRATURE_HPP
#define SURCMM_QUADRATURE_HPP

#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "surcmm/errors.hpp"

namespace surcmm {

// Gauss-Hermite rule for the physicists' weight e^{-x^2}:
//   integral f(x) e^{-x^2} dx  ~=  sum_k w_k f(x_k)
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::vector<double> log_weights;
};

namespace detail {

inline GaussHermiteRule compute_gauss_hermite(int n) {
    constexpr double eps = 3.0e-14;
    constexpr double pim4 = 0.7511255444649425;  // pi^{-1/4}
    constexpr int max_newton = 50;

    GaussHermiteRule rule;
    rule.nodes.assign(static_cast<size_t>(n), 0.0);
    rule.weights.assign(static_cast<size_t>(n), 0.0);

    const int m = (n + 1) / 2;
    double z = 0.0, pp = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * rule.nodes[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * rule.nodes[1];
        else
            z = 2.0 * z - rule.nodes[static_cast<size_t>(i - 2)];

        bool converged = false;
        for (int it = 0; it < max_newton; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::fabs(z - z1) <= eps) {
                converged = true;
                break;
            }
        }
        if (!converged) throw NumericalError("Gauss-Hermite node iteration failed for n=" + std::to_string(n));
        rule.nodes[static_cast<size_t>(i)] = z;
        rule.nodes[static_cast<size_t>(n - 1 - i)] = -z;
        const double w = 2.0 / (pp * pp);
        rule.weights[static_cast<size_t>(i)] = w;
        rule.weights[static_cast<size_t>(n - 1 - i)] = w;
    }
    rule.log_weights.reserve(static_cast<size_t>(n));
    for (double w : rule.weights) rule.log_weights.push_back(std::log(w));
    return rule;
}

} // namespace detail

// Thread-local cache; rules are tiny and the likelihood hot path would
// otherwise serialize on a shared lock.
inline const GaussHermiteRule& gauss_hermite_rule(int n) {
    if (n < 1) throw ValidationError("gauss_hermite_rule: n must be positive");
    thread_local std::map<int, GaussHermiteRule> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_hermite(n)).first;
    return it->second;
}

} // namespace surcmm

#endif // SURCMM_QUADRATURE_HPP
