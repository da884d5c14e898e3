#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "surcmm/marginals.hpp"
#include "surcmm/simulator.hpp"
#include "test_oracles.hpp"

using namespace surcmm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

MarginalParams random_params(std::mt19937& rng, int I, Family family, bool with_tau) {
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    MarginalParams p;
    p.beta = Eigen::VectorXd::Zero(beta_length(I));
    p.beta[0] = -1.0 + unif(rng);
    for (int k = 1; k < p.beta.size(); ++k) p.beta[k] = unif(rng);
    p.sigma = family == Family::gamma ? 1.0 + 2.0 * std::abs(unif(rng)) : 0.3 + std::abs(unif(rng));
    p.tau = with_tau ? 0.1 + 0.4 * std::abs(unif(rng)) : 0.0;
    return p;
}

// Draws a company triangle directly from the marginal model.
CompanyCells random_company(std::mt19937& rng, int I, Family family, const MarginalParams& params, double b) {
    StandardizedTriangle t;
    t.size = I;
    t.ratios.resize(static_cast<size_t>(upper_cell_count(I)));
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (const auto& idx : upper_triangle_cells(I)) {
        const double eta = linear_predictor(params, {idx.accident_year, idx.development_year}, b);
        double y;
        if (family == Family::lognormal) {
            y = std::exp(eta + params.sigma * norm(rng));
        } else {
            std::gamma_distribution<double> gamma(params.sigma, std::exp(eta) / params.sigma);
            y = std::max(gamma(rng), 1e-12);
        }
        t.ratios[static_cast<size_t>(upper_cell_offset(I, idx.accident_year, idx.development_year))] = y;
    }
    return make_company_cells("T1", t);
}

} // namespace

TEST_CASE("linear_predictor assembles reference-cell dummies") {
    MarginalParams zero;
    zero.beta = Eigen::VectorXd::Zero(beta_length(4));
    CHECK(linear_predictor(zero, {1, 1}, 0.0) == 0.0);

    MarginalParams p = zero;
    p.beta[0] = -1.0;
    CHECK(linear_predictor(p, {1, 1}, 0.3) == -0.7);

    const auto config = default_appendix_e_config();
    const auto truth = config.true_params(1);
    CHECK_THAT(linear_predictor(truth, {2, 3}, 0.0), WithinAbs(-1.0 - 0.03 - 1.05, 1e-12));
}

TEST_CASE("cell_loglik matches frozen density values") {
    MarginalSpec ln{Family::lognormal, 20};
    MarginalParams p;
    p.beta = Eigen::VectorXd::Zero(3);
    p.sigma = 1.0;
    // standard normal at zero on the log scale
    CHECK_THAT(cell_loglik(ln, p, 1.0, 0.0), WithinAbs(-0.9189385332046727, 1e-14));

    MarginalSpec ga{Family::gamma, 20};
    p.sigma = 1.0;  // shape 1, mean 1 -> scale 1: exponential density at 1
    CHECK_THAT(cell_loglik(ga, p, 1.0, 0.0), WithinAbs(-1.0, 1e-14));

    // 50-digit oracle value for shape 2.01 (application-study personal-auto
    // estimate), mu = 0.5, y = 0.4
    p.sigma = 2.01;
    CHECK_THAT(cell_loglik(ga, p, 0.4, std::log(0.5)), WithinAbs(0.2587629621881736, 1e-13));

    CHECK_THROWS_AS(cell_loglik(ga, p, 0.0, 0.0), ValidationError);
    CHECK_THROWS_AS(cell_loglik(ln, p, -1.0, 0.0), ValidationError);
}

TEST_CASE("company_marginal_loglik collapses exactly at tau = 0") {
    std::mt19937 rng(42);
    for (Family family : {Family::lognormal, Family::gamma}) {
        MarginalSpec spec{family, 20};
        auto params = random_params(rng, 5, family, false);
        const auto cells = random_company(rng, 5, family, params, 0.0);
        double direct = 0.0;
        for (size_t k = 0; k < cells.y.size(); ++k)
            direct += cell_loglik(spec, params, cells.y[k], linear_predictor(params, cells.rows[k], 0.0));
        CHECK_THAT(company_marginal_loglik(spec, params, cells), WithinAbs(direct, 1e-11));
    }
}

TEST_CASE("single-cell lognormal mixed likelihood matches the normal convolution") {
    MarginalSpec spec{Family::lognormal, 20};
    MarginalParams p;
    p.beta = Eigen::VectorXd::Zero(beta_length(2));
    p.beta[0] = -0.8;
    p.sigma = 0.4;
    p.tau = 0.25;

    StandardizedTriangle t;
    t.size = 2;
    t.ratios = {0.37, 0.21, 0.33};
    // restrict to one cell by making a 1x1 "triangle" is not representable;
    // use the closed form for the full product instead: with all cells sharing
    // the same company intercept, log y ~ N(eta, sigma^2) given b and the
    // convolution is Gaussian, so the exact value is available analytically.
    const auto cells = make_company_cells("C", t);
    // exact: integral of prod N(log y_k; eta_k + b, sigma^2) phi(b; tau) db
    // = prod N(log y_k; eta_k, Sigma) with joint covariance sigma^2 I + tau^2 J;
    // evaluate via the 1-D Simpson oracle instead of expanding the determinant.
    const double brute = oracle::company_loglik(spec, p, cells, -8 * 0.25 - 1.0, 8 * 0.25 + 1.0, 40000);
    CHECK_THAT(company_marginal_loglik(spec, p, cells), WithinRel(brute, 1e-10));

    // true single-cell check via a 1-cell triangle of size... the smallest
    // triangle has 3 cells, so verify the 1-cell closed form on a synthetic
    // CompanyCells built directly.
    CompanyCells one;
    one.company_id = "one";
    one.I = 2;
    one.rows = {{1, 1}};
    one.y = {0.37};
    one.log_y = {std::log(0.37)};
    one.sum_log_y = one.log_y[0];
    const double closed = oracle::lognormal_logpdf(0.37, p.beta[0], std::sqrt(p.sigma * p.sigma + p.tau * p.tau));
    CHECK_THAT(company_marginal_loglik(spec, p, one), WithinRel(closed, 1e-10));
}

TEST_CASE("55-cell gamma company matches brute-force integration to 1e-8") {
    std::mt19937 rng(7);
    MarginalSpec spec{Family::gamma, 20};
    auto params = random_params(rng, 10, Family::gamma, false);
    params.tau = 0.3;
    const auto cells = random_company(rng, 10, Family::gamma, params, 0.2);
    REQUIRE(cells.y.size() == 55);
    const double brute = oracle::company_loglik(spec, params, cells, -8 * params.tau, 8 * params.tau, 40000);
    CHECK_THAT(company_marginal_loglik(spec, params, cells), WithinRel(brute, 1e-8));
}

TEST_CASE("tau -> 0 limit agrees with the fixed-effects likelihood") {
    std::mt19937 rng(11);
    for (Family family : {Family::lognormal, Family::gamma}) {
        MarginalSpec spec{family, 20};
        auto params = random_params(rng, 6, family, false);
        const auto cells = random_company(rng, 6, family, params, 0.0);
        auto tiny = params;
        tiny.tau = 1e-8;
        CHECK_THAT(company_marginal_loglik(spec, tiny, cells),
                   WithinAbs(company_marginal_loglik(spec, params, cells), 1e-6));
    }
}

TEST_CASE("quadrature is converged at 20 nodes") {
    std::mt19937 rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        const Family family = rep % 2 == 0 ? Family::gamma : Family::lognormal;
        auto params = random_params(rng, 8, family, true);
        const auto cells = random_company(rng, 8, family, params, 0.1);
        MarginalSpec spec20{family, 20}, spec40{family, 40};
        const double a = company_marginal_loglik(spec20, params, cells);
        const double b = company_marginal_loglik(spec40, params, cells);
        CHECK_THAT(a, WithinRel(b, 1e-8));
    }
}

TEST_CASE("portfolio likelihood is additive over companies") {
    std::mt19937 rng(17);
    MarginalSpec spec{Family::gamma, 20};
    auto params = random_params(rng, 5, Family::gamma, true);
    const auto one = random_company(rng, 5, Family::gamma, params, 0.1);
    std::vector<CompanyCells> single{one};
    CHECK(portfolio_marginal_loglik(spec, params, single) == company_marginal_loglik(spec, params, one));

    auto twin = one;
    twin.company_id = "T2";
    std::vector<CompanyCells> pairv{one, twin};
    CHECK_THAT(portfolio_marginal_loglik(spec, params, pairv),
               WithinAbs(2.0 * company_marginal_loglik(spec, params, one), 1e-12));

    std::vector<CompanyCells> many;
    double looped = 0.0;
    for (int c = 0; c < 30; ++c) {
        many.push_back(random_company(rng, 5, Family::gamma, params, 0.05 * c));
        many.back().company_id = "M" + std::to_string(c);
        looped += company_marginal_loglik(spec, params, many.back());
    }
    CHECK_THAT(portfolio_marginal_loglik(spec, params, many), WithinAbs(looped, 1e-9));
}

TEST_CASE("predict_company_effects finds the posterior mode") {
    std::mt19937 rng(19);
    MarginalSpec spec{Family::gamma, 20};
    auto params = random_params(rng, 6, Family::gamma, true);

    auto fixed = params;
    fixed.tau = 0.0;
    const auto cells = random_company(rng, 6, Family::gamma, params, 0.3);
    std::vector<CompanyCells> v{cells};
    CHECK(predict_company_effects(spec, fixed, v).b_hat.at("T1") == 0.0);

    const auto effects = predict_company_effects(spec, params, v);
    auto posterior = [&](double b) {
        double s = -0.5 * b * b / (params.tau * params.tau);
        for (size_t k = 0; k < cells.y.size(); ++k)
            s += cell_loglik(spec, params, cells.y[k], linear_predictor(params, cells.rows[k], b));
        return s;
    };
    const double grid = oracle::grid_search_mode(posterior, -3.0, 3.0, 1e-6);
    CHECK_THAT(effects.b_hat.at("T1"), WithinAbs(grid, 1e-4));

    // label swap symmetry
    auto swapped = cells;
    swapped.company_id = "T2";
    std::vector<CompanyCells> two{cells, swapped};
    const auto both = predict_company_effects(spec, params, two);
    CHECK(both.b_hat.at("T1") == both.b_hat.at("T2"));
}

TEST_CASE("injected random effect is recovered within 0.1") {
    // large I so the company carries plenty of information about its own b
    std::mt19937 rng(23);
    MarginalSpec spec{Family::gamma, 20};
    MarginalParams params;
    params.beta = Eigen::VectorXd::Zero(beta_length(12));
    params.beta[0] = -1.0;
    params.sigma = 30.0;
    params.tau = 0.5;
    const auto cells = random_company(rng, 12, Family::gamma, params, 0.4);
    std::vector<CompanyCells> v{cells};
    const auto effects = predict_company_effects(spec, params, v);
    CHECK_THAT(effects.b_hat.at("T1"), WithinAbs(0.4, 0.1));
}

TEST_CASE("pseudo residuals vanish at the fitted mean") {
    MarginalSpec ln{Family::lognormal, 20};
    MarginalSpec ga{Family::gamma, 20};
    MarginalParams p;
    p.beta = Eigen::VectorXd::Zero(beta_length(2));
    p.beta[0] = -0.4;
    p.sigma = 0.7;

    StandardizedTriangle t;
    t.size = 2;
    const double mu11 = std::exp(linear_predictor(p, {1, 1}, 0.0));
    const double mu12 = std::exp(linear_predictor(p, {1, 2}, 0.0));
    const double mu21 = std::exp(linear_predictor(p, {2, 1}, 0.0));
    t.ratios = {mu11, mu12, mu21};
    const auto cells = make_company_cells("C", t);

    const auto rln = pseudo_residuals(ln, p, 0.0, cells);
    const auto rga = pseudo_residuals(ga, p, 0.0, cells);
    for (double e : rln.residuals) CHECK_THAT(e, WithinAbs(0.0, 1e-14));
    for (double e : rga.residuals) CHECK_THAT(e, WithinAbs(0.0, 1e-14));
}

TEST_CASE("gamma pseudo residual follows the Pearson form") {
    // mu = 1, sigma = 4 so gamma_hat = 0.25 and sd = sqrt(mu*gamma) = 0.5
    MarginalSpec ga{Family::gamma, 20};
    MarginalParams p;
    p.beta = Eigen::VectorXd::Zero(beta_length(2));
    p.sigma = 4.0;
    StandardizedTriangle t;
    t.size = 2;
    t.ratios = {1.5, 1.0, 1.0};
    const auto cells = make_company_cells("C", t);
    const auto r = pseudo_residuals(ga, p, 0.0, cells);
    CHECK_THAT(r.residuals[0], WithinAbs(1.0, 1e-14));
    CHECK_THAT(r.residuals[1], WithinAbs(0.0, 1e-14));
}

TEST_CASE("residual_ranks uses the n+1 denominator within a company") {
    CHECK(residual_ranks(std::vector<double>{3.0}) == std::vector<double>{0.5});
    CHECK(residual_ranks(std::vector<double>{-1.0, 0.0, 2.0}) == std::vector<double>{0.25, 0.5, 0.75});

    std::mt19937 rng(29);
    std::vector<double> values(55);
    std::normal_distribution<double> norm;
    for (auto& v : values) v = norm(rng);
    const auto ranks = residual_ranks(values);
    auto sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (size_t k = 0; k < sorted.size(); ++k)
        CHECK_THAT(sorted[k], WithinAbs(static_cast<double>(k + 1) / 56.0, 1e-15));

    // ties share the max rank of the tie group
    const auto tied = residual_ranks(std::vector<double>{1.0, 1.0, 2.0});
    CHECK(tied[0] == 0.5);
    CHECK(tied[1] == 0.5);
    CHECK(tied[2] == 0.75);
}

TEST_CASE("ranks are invariant under strictly increasing transforms") {
    std::mt19937 rng(31);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif(0.1, 2.0);
    std::vector<double> values(40);
    for (auto& v : values) v = norm(rng);
    const auto base = residual_ranks(values);
    for (int rep = 0; rep < 100; ++rep) {
        const double a = unif(rng), b = unif(rng), c = unif(rng) - 1.0;
        std::vector<double> transformed(values.size());
        for (size_t k = 0; k < values.size(); ++k)  // a v + b e^v + c is strictly increasing for a, b > 0
            transformed[k] = a * values[k] + b * std::exp(values[k]) + c;
        CHECK(residual_ranks(transformed) == base);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    std::mt19937 rng(37);
    int checked = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const Family family = rep % 2 == 0 ? Family::gamma : Family::lognormal;
        MarginalSpec spec{family, 20};
        const int I = 4 + rep % 3;
        auto params = random_params(rng, I, family, true);
        std::vector<CompanyCells> companies;
        for (int c = 0; c < 3; ++c) {
            companies.push_back(random_company(rng, I, family, params, 0.1 * c - 0.1));
            companies.back().company_id = "G" + std::to_string(c);
        }
        Eigen::VectorXd grad;
        portfolio_loglik_grad(spec, params, companies, true, grad);

        const int p = static_cast<int>(params.beta.size());
        const double h = 1e-5;
        Eigen::VectorXd fd(p + 2);
        auto eval = [&](const MarginalParams& q) { return portfolio_marginal_loglik(spec, q, companies); };
        for (int j = 0; j < p; ++j) {
            auto up = params, dn = params;
            up.beta[j] += h;
            dn.beta[j] -= h;
            fd[j] = (eval(up) - eval(dn)) / (2 * h);
        }
        {
            auto up = params, dn = params;
            up.sigma = std::exp(std::log(params.sigma) + h);
            dn.sigma = std::exp(std::log(params.sigma) - h);
            fd[p] = (eval(up) - eval(dn)) / (2 * h);
            up = params;
            dn = params;
            up.tau = std::exp(std::log(params.tau) + h);
            dn.tau = std::exp(std::log(params.tau) - h);
            fd[p + 1] = (eval(up) - eval(dn)) / (2 * h);
        }
        const double scale = std::max(1.0, fd.lpNorm<Eigen::Infinity>());
        CHECK((grad - fd).lpNorm<Eigen::Infinity>() / scale < 1e-4);
        ++checked;
    }
    CHECK(checked == 50);
}
