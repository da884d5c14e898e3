#ifndef SURCMM_RISK_HPP
#define SURCMM_RISK_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surcmm/bootstrap.hpp"
#include "surcmm/estimation.hpp"
#include "surcmm/simulator.hpp"

namespace surcmm {

inline const std::vector<double> default_tvar_levels = {0.60, 0.80, 0.85, 0.90, 0.95, 0.99};

// Eq-17 point reserve: sum over the lower triangle of omega * exp(eta_hat),
// with the thresholded coefficients for the sparse model and the predicted
// company intercepts.
inline ReserveEstimate point_reserve(const JointModelFit& fit, const Portfolio& portfolio,
                                     const std::optional<std::string>& company = std::nullopt) {
    const auto lower = lower_triangle_cells(fit.I);
    ReserveEstimate total;
    bool matched = false;
    for (const auto& c : portfolio.companies) {
        if (company && c.company_id != *company) continue;
        matched = true;
        for (int lob = 1; lob <= 2; ++lob) {
            MarginalParams params = lob == 1 ? fit.params_1 : fit.params_2;
            params.beta = fit.reserve_beta(lob);
            const double b = (lob == 1 ? fit.effects_1 : fit.effects_2).b_hat.at(c.company_id);
            const auto& premiums = (lob == 1 ? c.triangle_1 : c.triangle_2).premiums;
            double sum = 0.0;
            for (const auto& idx : lower)
                sum += premiums[static_cast<size_t>(idx.accident_year - 1)] *
                       std::exp(linear_predictor(params, {idx.accident_year, idx.development_year}, b));
            (lob == 1 ? total.lob_1 : total.lob_2) += sum;
        }
    }
    if (!matched) throw ValidationError("point_reserve: company filter matched nothing");
    return total;
}

// Eq-18: (estimated - actual) / actual, in percent.
inline double percentage_error(double estimated, double actual) {
    if (actual == 0.0) throw ValidationError("percentage_error: actual reserve is zero");
    return 100.0 * (estimated - actual) / actual;
}

// Empirical TVaR at level kappa: mean of all sample values >= the
// ceil(kappa*n)-th order statistic (tail inclusive of the quantile point).
inline double tvar(std::span<const double> sample, double kappa) {
    if (sample.empty()) throw ValidationError("tvar: empty sample");
    if (!(kappa > 0.0 && kappa < 1.0)) throw ValidationError("tvar: level must lie in (0,1)");
    std::vector<double> sorted(sample.begin(), sample.end());
    std::sort(sorted.begin(), sorted.end());
    auto k = static_cast<size_t>(std::ceil(kappa * static_cast<double>(sorted.size())));
    k = std::min(std::max<size_t>(k, 1), sorted.size());
    const double q = sorted[k - 1];
    const auto first = std::lower_bound(sorted.begin(), sorted.end(), q);
    double sum = 0.0;
    for (auto it = first; it != sorted.end(); ++it) sum += *it;
    return sum / static_cast<double>(sorted.end() - first);
}

// True when fewer than one sample point lies strictly beyond the quantile,
// i.e. n * (1 - level) < 1; the estimate is still computed inclusively.
inline bool tvar_tail_degenerate(size_t n, double level) {
    return static_cast<double>(n) * (1.0 - level) < 1.0;
}

inline std::map<double, double> tvar_ladder(std::span<const double> sample, std::span<const double> levels) {
    std::map<double, double> ladder;
    for (double level : levels) ladder[level] = tvar(sample, level);
    return ladder;
}

namespace detail {

inline std::optional<double> ladder_at(const std::map<double, double>& ladder, double level) {
    for (const auto& [k, v] : ladder)
        if (std::fabs(k - level) < 1e-9) return v;
    return std::nullopt;
}

} // namespace detail

// RC(kappa) = TVaR(kappa) - TVaR(0.60) for each kappa >= 0.80 in the ladder.
inline std::map<double, double> risk_capital(const std::map<double, double>& ladder) {
    const auto base = detail::ladder_at(ladder, 0.60);
    if (!base) throw ValidationError("risk_capital: ladder misses the 0.60 level");
    std::map<double, double> rc;
    for (const auto& [level, value] : ladder)
        if (level >= 0.80 - 1e-9) rc[level] = value - *base;
    return rc;
}

// Mean-baseline variant ("risk measure minus expected unpaid losses").
inline std::map<double, double> risk_capital_mean_baseline(const std::map<double, double>& ladder,
                                                           double mean_reserve) {
    std::map<double, double> rc;
    for (const auto& [level, value] : ladder)
        if (level >= 0.80 - 1e-9) rc[level] = value - mean_reserve;
    return rc;
}

// gain(kappa) = (RC_silo - RC_model) / RC_silo, in percent.
inline std::map<double, double> risk_capital_gain(const std::map<double, double>& model_rc,
                                                  const std::map<double, double>& silo_rc) {
    std::map<double, double> gain;
    for (const auto& [level, rc] : model_rc) {
        const auto silo = detail::ladder_at(silo_rc, level);
        if (!silo) continue;
        if (!(*silo > 0.0)) throw ValidationError("risk_capital_gain: silo risk capital must be positive");
        gain[level] = 100.0 * (*silo - rc) / *silo;
    }
    return gain;
}

struct RiskReport {
    std::map<double, double> tvar_ladder;
    std::map<double, double> risk_capital;
    std::map<double, double> gain_vs_silo;  // empty when no silo reference
};

inline RiskReport make_risk_report(std::span<const double> totals, std::span<const double> levels) {
    RiskReport report;
    report.tvar_ladder = tvar_ladder(totals, levels);
    report.risk_capital = risk_capital(report.tvar_ladder);
    return report;
}

// ---------------------------------------------------------------------------
// Silo baseline: per-company per-LOB fixed-effects GLMs (no random effects,
// no copula), each LOB bootstrapped independently with the same residual
// resampling machinery (observed cells regenerated, GLM refit, future cells
// resampled around the refit means); the TVaR at each level is the sum of
// the two per-LOB TVaRs.
// ---------------------------------------------------------------------------

struct SiloResult {
    std::vector<double> lob1_totals, lob2_totals;  // per successful replicate
    std::vector<std::pair<int, std::string>> failures;
    RiskReport report;
};

namespace detail {

struct SiloUnit {  // one company, one LOB
    const CompanyCells* cells = nullptr;
    MarginalSpec spec;
    MarginalParams params;
    std::vector<double> eta, mu;
    std::vector<double> sorted_resid;
    const std::vector<double>* premiums = nullptr;
};

inline PreparedLob single_company_lob(const CompanyCells& cells, int I) {
    PreparedLob pl;
    pl.companies.push_back(cells);
    const int p = beta_length(I);
    pl.xtx = Eigen::MatrixXd::Zero(p, p);
    for (const auto& row : cells.rows) add_design(pl.xtx, I, row);
    pl.total_cells = static_cast<int>(cells.y.size());
    return pl;
}

inline MarginalParams silo_glm_fit(const MarginalSpec& spec, const PreparedLob& pl, int I,
                                   const MarginalParams* warm, double grad_tol) {
    MarginalParams start = warm ? *warm : initial_marginal_params(spec, pl, I, false);
    start.tau = 0.0;
    return fit_marginal_smooth(spec, pl, start, false, grad_tol);
}

} // namespace detail

inline SiloResult silo_baseline(const Portfolio& portfolio, const MarginalSpec& spec1, const MarginalSpec& spec2,
                                const BootstrapConfig& config,
                                std::span<const double> levels = default_tvar_levels,
                                const std::optional<std::string>& company = std::nullopt) {
    const PreparedPortfolio prep = prepare_portfolio(portfolio);
    const int n_cells = upper_cell_count(prep.I);

    std::map<std::string, const LossTrianglePair*> by_id;
    for (const auto& c : portfolio.companies) by_id[c.company_id] = &c;

    std::vector<detail::SiloUnit> units;  // company-major, lob inner
    std::vector<size_t> unit_company;
    for (size_t c = 0; c < prep.ids.size(); ++c) {
        if (company && prep.ids[c] != *company) continue;
        for (int lob = 1; lob <= 2; ++lob) {
            detail::SiloUnit u;
            u.cells = &prep.lob(lob).companies[c];
            u.spec = lob == 1 ? spec1 : spec2;
            const auto pl = detail::single_company_lob(*u.cells, prep.I);
            u.params = detail::silo_glm_fit(u.spec, pl, prep.I, nullptr, config.refit_options.inner_grad_tol);
            u.eta.resize(u.cells->y.size());
            u.mu.resize(u.cells->y.size());
            for (size_t k = 0; k < u.cells->y.size(); ++k) {
                u.eta[k] = detail::eta0_of(u.params, prep.I, u.cells->rows[k]);
                u.mu[k] = std::exp(u.eta[k]);
            }
            u.sorted_resid = pseudo_residuals(u.spec, u.params, 0.0, *u.cells).residuals;
            std::sort(u.sorted_resid.begin(), u.sorted_resid.end());
            u.premiums = lob == 1 ? &by_id.at(prep.ids[c])->triangle_1.premiums
                                  : &by_id.at(prep.ids[c])->triangle_2.premiums;
            units.push_back(std::move(u));
            unit_company.push_back(c);
        }
    }
    if (units.empty()) throw ValidationError("silo_baseline: company filter matched nothing");
    const auto lower = lower_triangle_cells(prep.I);

    struct Slot {
        double lob1 = 0.0, lob2 = 0.0;
        bool ok = false;
        std::string error;
    };
    std::vector<Slot> slots(static_cast<size_t>(config.replicates));

    parallel_for(static_cast<size_t>(config.replicates), config.threads, [&](size_t r) {
        RngStream rng(config.seed, {0x5170ULL, static_cast<std::uint64_t>(r)});
        Slot& slot = slots[r];
        try {
            for (size_t ui = 0; ui < units.size(); ++ui) {
                const auto& u = units[ui];
                CompanyCells boot = *u.cells;
                long clipped = 0;
                double sum_log = 0.0;
                for (int k = 0; k < n_cells; ++k) {
                    const double eps = detail::sorted_quantile(u.sorted_resid, rng.next_uniform());
                    const double y =
                        detail::reconstruct_cell(u.spec.family, u.params.sigma, u.eta[static_cast<size_t>(k)],
                                                 u.mu[static_cast<size_t>(k)], eps, clipped);
                    boot.y[static_cast<size_t>(k)] = y;
                    boot.log_y[static_cast<size_t>(k)] = std::log(y);
                    sum_log += boot.log_y[static_cast<size_t>(k)];
                }
                boot.sum_log_y = sum_log;
                const auto pl = detail::single_company_lob(boot, prep.I);
                const MarginalParams refit =
                    detail::silo_glm_fit(u.spec, pl, prep.I, &u.params, config.refit_options.inner_grad_tol);
                double reserve = 0.0;
                for (const auto& idx : lower) {
                    const double eta =
                        detail::eta0_of(refit, prep.I, {idx.accident_year, idx.development_year});
                    double y = std::exp(eta);
                    if (config.process_error)
                        y = detail::reconstruct_cell(u.spec.family, refit.sigma, eta, y,
                                                     detail::sorted_quantile(u.sorted_resid, rng.next_uniform()),
                                                     clipped);
                    reserve += (*u.premiums)[static_cast<size_t>(idx.accident_year - 1)] * y;
                }
                (ui % 2 == 0 ? slot.lob1 : slot.lob2) += reserve;
            }
            slot.ok = true;
        } catch (const NumericalError& e) {
            slot.error = e.what();
        } catch (const ValidationError& e) {
            slot.error = e.what();
        }
    });

    SiloResult result;
    for (int r = 0; r < config.replicates; ++r) {
        const auto& slot = slots[static_cast<size_t>(r)];
        if (slot.ok) {
            result.lob1_totals.push_back(slot.lob1);
            result.lob2_totals.push_back(slot.lob2);
        } else {
            result.failures.emplace_back(r, slot.error);
        }
    }
    if (static_cast<int>(result.failures.size()) > config.failure_budget())
        throw NumericalError("silo_baseline: " + std::to_string(result.failures.size()) +
                             " replicate failures exceed the budget");
    for (double level : levels) {
        const double t = tvar(result.lob1_totals, level) + tvar(result.lob2_totals, level);
        result.report.tvar_ladder[level] = t;
    }
    result.report.risk_capital = risk_capital(result.report.tvar_ladder);
    return result;
}

// ---------------------------------------------------------------------------
// True risk capital: the RC ladder of the exact predictive distribution,
// approximated by n independent future lower triangles from the truth.
// ---------------------------------------------------------------------------

inline RiskReport true_risk_capital(const GroundTruth& truth, int n, std::uint64_t seed,
                                    std::span<const double> levels = default_tvar_levels,
                                    std::optional<int> company = std::nullopt, int threads = 0) {
    if (n < 1) throw ValidationError("true_risk_capital: n must be >= 1");
    std::vector<double> totals(static_cast<size_t>(n));
    parallel_for(static_cast<size_t>(n), threads, [&](size_t k) {
        RngStream rng(seed, {0x7271ULL, static_cast<std::uint64_t>(k)});
        totals[k] = draw_future_reserve(truth, rng, company).total();
    });
    return make_risk_report(totals, levels);
}

// ---------------------------------------------------------------------------
// Flat CSV export: model,level,tvar,risk_capital,gain_vs_silo
// ---------------------------------------------------------------------------

inline void write_risk_report_csv(const std::map<std::string, RiskReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "model,level,tvar,risk_capital,gain_vs_silo\n";
    for (const auto& [model, report] : reports)
        for (const auto& [level, t] : report.tvar_ladder) {
            out << model << ',' << format_double(level) << ',' << format_double(t) << ',';
            if (const auto rc = detail::ladder_at(report.risk_capital, level)) out << format_double(*rc);
            out << ',';
            if (const auto g = detail::ladder_at(report.gain_vs_silo, level)) out << format_double(*g);
            out << "\n";
        }
    if (!out) throw IoError("failed writing " + path);
}

} // namespace surcmm

#endif // SURCMM_RISK_HPP
