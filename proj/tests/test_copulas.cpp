#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "surcmm/copulas.hpp"
#include "surcmm/marginals.hpp"

using namespace surcmm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const CopulaSpec gaussian_shared{CopulaFamily::gaussian, ThetaScope::shared};
const CopulaSpec independence{CopulaFamily::independence, ThetaScope::shared};

std::vector<CompanyRankPairs> one_company(std::vector<std::pair<double, double>> pairs) {
    return {CompanyRankPairs{"C1", std::move(pairs)}};
}

} // namespace

TEST_CASE("copula_log_density closed-form anchors") {
    // independence nested at theta = 0
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> unif(0.01, 0.99);
    for (int k = 0; k < 50; ++k) {
        const double u = unif(rng), v = unif(rng);
        CHECK(copula_log_density(gaussian_shared, 0.0, u, v) == 0.0);
        CHECK(copula_log_density(independence, 0.0, u, v) == 0.0);
    }
    // at the median both quantiles vanish: log c = -0.5 log(1 - theta^2)
    for (double theta : {-0.9, -0.3, 0.2, 0.5}) {
        CHECK_THAT(copula_log_density(gaussian_shared, theta, 0.5, 0.5),
                   WithinAbs(-0.5 * std::log1p(-theta * theta), 1e-14));
    }
    CHECK_THAT(copula_log_density(gaussian_shared, 0.5, 0.5, 0.5), WithinAbs(0.14384103622589046, 1e-14));
    // exchangeability
    for (int k = 0; k < 50; ++k) {
        const double u = unif(rng), v = unif(rng);
        CHECK(copula_log_density(gaussian_shared, 0.4, u, v) == copula_log_density(gaussian_shared, 0.4, v, u));
    }
    CHECK_THROWS_AS(copula_log_density(gaussian_shared, 0.2, 0.0, 0.5), ValidationError);
    CHECK_THROWS_AS(copula_log_density(gaussian_shared, 0.2, 0.5, 1.0), ValidationError);
}

TEST_CASE("mirror image: c(u,v;theta) = c(u,1-v;-theta)") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> unif(0.01, 0.99);
    for (int k = 0; k < 200; ++k) {
        const double u = unif(rng), v = unif(rng), theta = -0.95 + 1.9 * unif(rng);
        CHECK_THAT(copula_log_density(gaussian_shared, theta, u, v),
                   WithinAbs(copula_log_density(gaussian_shared, -theta, u, 1.0 - v), 1e-10));
    }
}

TEST_CASE("density integrates to one under independent uniforms") {
    RngStream rng(424242);
    const int n = 100000;
    for (double theta : {-0.5, 0.3}) {
        double sum = 0.0, sumsq = 0.0;
        for (int k = 0; k < n; ++k) {
            const double c = std::exp(copula_log_density(gaussian_shared, theta, rng.next_uniform(),
                                                         rng.next_uniform()));
            sum += c;
            sumsq += c * c;
        }
        const double meanv = sum / n;
        const double se = std::sqrt((sumsq / n - meanv * meanv) / n);
        CHECK(std::fabs(meanv - 1.0) < 3.0 * se);
    }
}

TEST_CASE("copula_pseudo_loglik sums the cellwise log densities") {
    DependenceParams dep;
    dep.spec = independence;
    const auto pairs = one_company({{0.2, 0.7}, {0.5, 0.5}});
    CHECK(copula_pseudo_loglik(independence, dep, pairs) == 0.0);

    DependenceParams g;
    g.spec = gaussian_shared;
    g.shared_theta = 0.4;
    const auto single = one_company({{0.3, 0.8}});
    CHECK(copula_pseudo_loglik(gaussian_shared, g, single) ==
          copula_log_density(gaussian_shared, 0.4, 0.3, 0.8));

    // 30 x 55 pairs against the naive double loop
    std::mt19937 mt(11);
    std::uniform_real_distribution<double> unif(0.001, 0.999);
    std::vector<CompanyRankPairs> many;
    double naive = 0.0;
    for (int c = 0; c < 30; ++c) {
        CompanyRankPairs pr;
        pr.company_id = "C" + std::to_string(c);
        for (int k = 0; k < 55; ++k) {
            const double u = unif(mt), v = unif(mt);
            pr.pairs.emplace_back(u, v);
            naive += copula_log_density(gaussian_shared, 0.4, u, v);
        }
        many.push_back(std::move(pr));
    }
    CHECK_THAT(copula_pseudo_loglik(gaussian_shared, g, many), WithinAbs(naive, 1e-12));
}

TEST_CASE("fit_copula recovers the generating dependence") {
    // null case: theta = 0
    {
        RngStream rng(7);
        auto pairs = sample_copula(gaussian_shared, 0.0, 10000, rng);
        const auto fit = fit_copula(gaussian_shared, one_company(std::move(pairs)));
        CHECK(std::fabs(fit.shared_theta) < 0.05);
        CHECK_FALSE(fit.at_boundary);
    }
    // rho = 0.5 at n = 1e5
    {
        RngStream rng(8);
        auto pairs = sample_copula(gaussian_shared, 0.5, 100000, rng);
        const auto fit = fit_copula(gaussian_shared, one_company(std::move(pairs)));
        CHECK(fit.shared_theta > 0.48);
        CHECK(fit.shared_theta < 0.52);
    }
    // grid-search oracle agreement on a modest sample
    {
        RngStream rng(9);
        auto pairs = sample_copula(gaussian_shared, -0.35, 5000, rng);
        const auto company = one_company(pairs);
        const auto fit = fit_copula(gaussian_shared, company);
        double best = -1e300, best_theta = 0.0;
        DependenceParams probe;
        probe.spec = gaussian_shared;
        for (int k = -998; k <= 998; ++k) {
            probe.shared_theta = k / 1000.0;
            const double value = copula_pseudo_loglik(gaussian_shared, probe, company);
            if (value > best) {
                best = value;
                best_theta = probe.shared_theta;
            }
        }
        CHECK_THAT(fit.shared_theta, WithinAbs(best_theta, 2e-3));
        probe.shared_theta = fit.shared_theta;
        CHECK(copula_pseudo_loglik(gaussian_shared, probe, company) >= best - 1e-9);
    }
}

TEST_CASE("fit_copula is invariant to monotone per-margin transforms") {
    RngStream rng(10);
    const auto pairs = sample_copula(gaussian_shared, 0.3, 2000, rng);
    // ranks of the raw pairs
    std::vector<double> u, v;
    for (const auto& [a, b] : pairs) {
        u.push_back(a);
        v.push_back(b);
    }
    auto ranked = [](const std::vector<double>& x) { return residual_ranks(x); };
    const auto ru = ranked(u);
    const auto rv = ranked(v);
    std::vector<double> tu(u.size()), tv(v.size());
    for (size_t k = 0; k < u.size(); ++k) {
        tu[k] = std::exp(3.0 * u[k]);          // strictly increasing
        tv[k] = std::atan(5.0 * v[k] - 1.0);   // strictly increasing
    }
    const auto rtu = ranked(tu);
    const auto rtv = ranked(tv);
    CHECK(ru == rtu);
    CHECK(rv == rtv);

    std::vector<std::pair<double, double>> p1, p2;
    for (size_t k = 0; k < u.size(); ++k) {
        p1.emplace_back(ru[k], rv[k]);
        p2.emplace_back(rtu[k], rtv[k]);
    }
    const auto f1 = fit_copula(gaussian_shared, one_company(std::move(p1)));
    const auto f2 = fit_copula(gaussian_shared, one_company(std::move(p2)));
    CHECK(f1.shared_theta == f2.shared_theta);
}

TEST_CASE("per-company scope fits independent parameters") {
    RngStream rng(12);
    std::vector<CompanyRankPairs> companies;
    companies.push_back({"A", sample_copula(gaussian_shared, 0.6, 4000, rng)});
    companies.push_back({"B", sample_copula(gaussian_shared, -0.6, 4000, rng)});
    const CopulaSpec per{CopulaFamily::gaussian, ThetaScope::per_company};
    const auto fit = fit_copula(per, companies);
    CHECK(fit.theta_by_company.at("A") > 0.5);
    CHECK(fit.theta_by_company.at("B") < -0.5);
    CHECK_THROWS_AS(fit.theta_for("missing"), ValidationError);
}

TEST_CASE("sample_copula has uniform marginals and the requested dependence") {
    RngStream rng(14);
    const int n = 100000;

    // independence: normal-scores correlation within 3/sqrt(n)
    {
        RngStream s(15);
        const auto pairs = sample_copula(gaussian_shared, 0.0, n, s);
        std::vector<double> x, y;
        for (const auto& [u, v] : pairs) {
            x.push_back(normal_quantile(u));
            y.push_back(normal_quantile(v));
        }
        CHECK(std::fabs(pearson_correlation(x, y)) < 3.0 / std::sqrt(static_cast<double>(n)));
    }
    // theta = -0.3 recovered from normal scores within 0.02
    {
        RngStream s(16);
        const auto pairs = sample_copula(gaussian_shared, -0.3, n, s);
        std::vector<double> x, y;
        for (const auto& [u, v] : pairs) {
            x.push_back(normal_quantile(u));
            y.push_back(normal_quantile(v));
        }
        CHECK_THAT(pearson_correlation(x, y), WithinAbs(-0.3, 0.02));
    }
    // Kolmogorov-Smirnov uniformity of u at the 1% level (critical 1.628/sqrt(n))
    {
        RngStream s(17);
        const auto pairs = sample_copula(gaussian_shared, 0.4, n, s);
        std::vector<double> u;
        u.reserve(pairs.size());
        for (const auto& [a, b] : pairs) u.push_back(a);
        std::sort(u.begin(), u.end());
        double ks = 0.0;
        for (size_t k = 0; k < u.size(); ++k) {
            const double ecdf_hi = static_cast<double>(k + 1) / n;
            const double ecdf_lo = static_cast<double>(k) / n;
            ks = std::max({ks, std::fabs(ecdf_hi - u[k]), std::fabs(u[k] - ecdf_lo)});
        }
        CHECK(ks < 1.628 / std::sqrt(static_cast<double>(n)));
    }
    // determinism given the stream seed
    {
        RngStream a(18), b(18);
        CHECK(sample_copula(gaussian_shared, 0.25, 100, a) == sample_copula(gaussian_shared, 0.25, 100, b));
    }
    (void)rng;
}
