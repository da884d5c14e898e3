#ifndef SURCMM_BOOTSTRAP_HPP
#define SURCMM_BOOTSTRAP_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surcmm/estimation.hpp"
#include "surcmm/parallel.hpp"
#include "surcmm/rng.hpp"
#include "surcmm/simulator.hpp"
#include "surcmm/triangles.hpp"

namespace surcmm {

struct BootstrapConfig {
    int replicates = 5000;
    std::uint64_t seed = 0;
    bool refit = true;          // false: skip refits; reserves carry process noise only
    bool process_error = true;  // resample future cells; false gives the plug-in reserve
    int max_failures = -1;      // -1: max(1, replicates / 100)
    int threads = 0;            // 0: hardware concurrency
    FitOptions refit_options{1e-4, 30, 1e-7, false};

    int failure_budget() const {
        return max_failures >= 0 ? max_failures : std::max(1, replicates / 100);
    }
};

struct ReplicateReserves {
    int replicate = 0;
    std::vector<ReserveEstimate> per_company;
    double portfolio_total = 0.0;
};

struct BootstrapDistribution {
    std::vector<std::string> company_ids;
    std::vector<ReplicateReserves> reserves;              // ascending replicate id
    std::vector<std::pair<int, std::string>> failures;    // (replicate id, reason)
    BootstrapConfig config;
    long clipped_cells = 0;

    // Totals per replicate, either for one company or the whole portfolio.
    std::vector<double> totals(std::optional<int> company = std::nullopt) const {
        std::vector<double> out;
        out.reserve(reserves.size());
        for (const auto& r : reserves)
            out.push_back(company ? r.per_company[static_cast<size_t>(*company)].total() : r.portfolio_total);
        return out;
    }
};

// Thrown when replicate failures exceed the tolerated budget.
class BootstrapAbort : public NumericalError {
public:
    BootstrapAbort(const std::string& msg, BootstrapDistribution partial)
        : NumericalError(msg), partial_results(std::move(partial)) {}
    BootstrapDistribution partial_results;
};

// Right-continuous inverse of the (n+1)-denominator empirical CDF: the
// ceil(u*n)-th order statistic of the sample.
inline double empirical_quantile(std::span<const double> sample, double u) {
    if (sample.empty()) throw ValidationError("empirical_quantile: empty sample");
    if (!(u > 0.0 && u < 1.0)) throw ValidationError("empirical_quantile: u must lie in (0,1)");
    std::vector<double> sorted(sample.begin(), sample.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    auto k = static_cast<size_t>(std::ceil(u * n));
    k = std::min(std::max<size_t>(k, 1), sorted.size());
    return sorted[k - 1];
}

namespace detail {

inline double sorted_quantile(const std::vector<double>& sorted, double u) {
    auto k = static_cast<size_t>(std::ceil(u * static_cast<double>(sorted.size())));
    k = std::min(std::max<size_t>(k, 1), sorted.size());
    return sorted[k - 1];
}

struct BootstrapPrep {
    PreparedPortfolio base;
    std::vector<std::vector<double>> eta_1, eta_2;        // eta-tilde per upper cell
    std::vector<std::vector<double>> mu_1, mu_2;          // exp(eta-tilde)
    std::vector<std::vector<double>> resid_1, resid_2;    // sorted pseudo-residuals
    std::vector<double> theta;                            // per company
    std::vector<const LossTrianglePair*> aligned;         // portfolio rows in prepared order
    std::vector<TriangleIndex> lower;
};

inline BootstrapPrep make_bootstrap_prep(const JointModelFit& fit, const Portfolio& portfolio) {
    BootstrapPrep prep;
    prep.base = prepare_portfolio(portfolio);
    prep.lower = lower_triangle_cells(prep.base.I);
    if (prep.base.ids != fit.company_ids)
        throw ValidationError("bootstrap_reserves: fit and portfolio disagree on company ids");

    std::map<std::string, const LossTrianglePair*> by_id;
    for (const auto& c : portfolio.companies) by_id[c.company_id] = &c;
    for (const auto& id : prep.base.ids) prep.aligned.push_back(by_id.at(id));

    for (size_t c = 0; c < prep.base.ids.size(); ++c) {
        const std::string& id = prep.base.ids[c];
        prep.theta.push_back(fit.dependence.spec.family == CopulaFamily::independence
                                 ? 0.0
                                 : fit.dependence.theta_for(id));
        for (int lob = 1; lob <= 2; ++lob) {
            const auto& cells = prep.base.lob(lob).companies[c];
            MarginalParams tilde = lob == 1 ? fit.params_1 : fit.params_2;
            tilde.beta = fit.reserve_beta(lob);
            const double b_hat = (lob == 1 ? fit.effects_1 : fit.effects_2).b_hat.at(id);
            std::vector<double> eta(cells.y.size()), mu(cells.y.size());
            for (size_t k = 0; k < cells.y.size(); ++k) {
                eta[k] = eta0_of(tilde, prep.base.I, cells.rows[k]) + b_hat;
                mu[k] = std::exp(eta[k]);
            }
            auto resid = pseudo_residuals(lob == 1 ? fit.spec_1 : fit.spec_2, tilde, b_hat, cells).residuals;
            std::sort(resid.begin(), resid.end());
            (lob == 1 ? prep.eta_1 : prep.eta_2).push_back(std::move(eta));
            (lob == 1 ? prep.mu_1 : prep.mu_2).push_back(std::move(mu));
            (lob == 1 ? prep.resid_1 : prep.resid_2).push_back(std::move(resid));
        }
    }
    return prep;
}

inline double reconstruct_cell(Family family, double sigma, double eta, double mu, double eps,
                               long& clipped) {
    if (family == Family::lognormal) return std::exp(eta + sigma * eps);
    // gamma: y* = eps * sqrt(mu * gamma) + mu with gamma = mu / sigma
    double y = eps * mu / std::sqrt(sigma) + mu;
    if (!(y > 0.0)) {
        y = 1e-8 * mu;
        ++clipped;
    }
    return y;
}

// Reserves for one replicate. With process resampling, each future cell is a
// resampled residual around the replicate's fitted mean (copula-coupled
// across the LOBs, drawn from `rng`); otherwise it is the plug-in value
// omega * exp(eta_hat).
inline std::vector<ReserveEstimate> replicate_reserves(const JointModelFit& fit, const BootstrapPrep& prep,
                                                       const MarginalParams& p1, const MarginalParams& p2,
                                                       const CompanyEffects& e1, const CompanyEffects& e2,
                                                       bool process_error, RngStream* rng, long& clipped) {
    const CopulaSpec pair_copula{fit.copula.family, ThetaScope::shared};
    std::vector<ReserveEstimate> out;
    out.reserve(prep.base.ids.size());
    for (size_t c = 0; c < prep.base.ids.size(); ++c) {
        const std::string& id = prep.base.ids[c];
        std::vector<std::pair<double, double>> pairs;
        if (process_error)
            pairs = sample_copula(pair_copula, prep.theta[c], static_cast<int>(prep.lower.size()), *rng);
        ReserveEstimate r;
        for (int lob = 1; lob <= 2; ++lob) {
            const MarginalParams& params = lob == 1 ? p1 : p2;
            const double b = (lob == 1 ? e1 : e2).b_hat.at(id);
            const auto& premiums =
                (lob == 1 ? prep.aligned[c]->triangle_1 : prep.aligned[c]->triangle_2).premiums;
            const auto& resid = (lob == 1 ? prep.resid_1 : prep.resid_2)[c];
            const Family family = (lob == 1 ? fit.spec_1 : fit.spec_2).family;
            double sum = 0.0;
            for (size_t k = 0; k < prep.lower.size(); ++k) {
                const auto& idx = prep.lower[k];
                const double eta =
                    eta0_of(params, prep.base.I, {idx.accident_year, idx.development_year}) + b;
                double y = std::exp(eta);
                if (process_error) {
                    const double u = lob == 1 ? pairs[k].first : pairs[k].second;
                    y = reconstruct_cell(family, params.sigma, eta, std::exp(eta), sorted_quantile(resid, u),
                                         clipped);
                }
                sum += premiums[static_cast<size_t>(idx.accident_year - 1)] * y;
            }
            (lob == 1 ? r.lob_1 : r.lob_2) = sum;
        }
        out.push_back(r);
    }
    return out;
}

} // namespace detail

// Coefficient-thresholded residual bootstrap of the reserve: copula-coupled
// resampling of pseudo-residual ranks, observed-triangle reconstruction,
// refit at the observed-data penalties, then the future lower triangle drawn
// around the refit means through the same residual machinery (plug-in
// omega * exp(eta) reserves instead when process_error is off). Replicate r
// draws from a sub-stream of (seed, r); results are identical for any
// thread count.
inline BootstrapDistribution bootstrap_reserves(const JointModelFit& fit, const Portfolio& portfolio,
                                                const BootstrapConfig& config) {
    if (config.replicates < 1) throw ValidationError("bootstrap: replicates must be >= 1");
    const detail::BootstrapPrep prep = detail::make_bootstrap_prep(fit, portfolio);
    const int n_companies = static_cast<int>(prep.base.ids.size());
    const int n_cells = upper_cell_count(prep.base.I);
    const CopulaSpec pair_copula{fit.copula.family, ThetaScope::shared};

    struct Slot {
        std::optional<ReplicateReserves> ok;
        std::string error;
    };
    std::vector<Slot> slots(static_cast<size_t>(config.replicates));
    std::atomic<long> clipped{0};

    parallel_for(static_cast<size_t>(config.replicates), config.threads, [&](size_t r) {
        RngStream rng(config.seed, {0xB007ULL, static_cast<std::uint64_t>(r)});
        PreparedPortfolio boot = prep.base;
        long clipped_here = 0;
        for (int c = 0; c < n_companies; ++c) {
            const auto pairs = sample_copula(pair_copula, prep.theta[static_cast<size_t>(c)], n_cells, rng);
            for (int lob = 1; lob <= 2; ++lob) {
                auto& cells = boot.lob(lob).companies[static_cast<size_t>(c)];
                const auto& eta = (lob == 1 ? prep.eta_1 : prep.eta_2)[static_cast<size_t>(c)];
                const auto& mu = (lob == 1 ? prep.mu_1 : prep.mu_2)[static_cast<size_t>(c)];
                const auto& resid = (lob == 1 ? prep.resid_1 : prep.resid_2)[static_cast<size_t>(c)];
                const Family family = (lob == 1 ? fit.spec_1 : fit.spec_2).family;
                const double sigma = (lob == 1 ? fit.params_1 : fit.params_2).sigma;
                double sum_log = 0.0;
                for (int k = 0; k < n_cells; ++k) {
                    const double u = lob == 1 ? pairs[static_cast<size_t>(k)].first
                                              : pairs[static_cast<size_t>(k)].second;
                    const double eps = detail::sorted_quantile(resid, u);
                    const double y = detail::reconstruct_cell(family, sigma, eta[static_cast<size_t>(k)],
                                                              mu[static_cast<size_t>(k)], eps, clipped_here);
                    cells.y[static_cast<size_t>(k)] = y;
                    cells.log_y[static_cast<size_t>(k)] = std::log(y);
                    sum_log += cells.log_y[static_cast<size_t>(k)];
                }
                cells.sum_log_y = sum_log;
            }
        }
        clipped.fetch_add(clipped_here);

        try {
            ReplicateReserves rec;
            rec.replicate = static_cast<int>(r);
            long clipped_lower = 0;
            if (!config.refit) {
                // no re-estimation: reserves from the base fit's own coefficients
                MarginalParams t1 = fit.params_1, t2 = fit.params_2;
                t1.beta = fit.reserve_beta(1);
                t2.beta = fit.reserve_beta(2);
                rec.per_company = detail::replicate_reserves(fit, prep, t1, t2, fit.effects_1, fit.effects_2,
                                                             config.process_error, &rng, clipped_lower);
            } else {
                JointModelFit refit;
                if (fit.kind == ModelKind::ssurcmm) {
                    PenaltyConfig pen;
                    pen.scope = fit.penalty.scope;
                    pen.lambda1 = fit.penalty.lambda1;
                    pen.lambda2 = fit.penalty.lambda2;
                    refit = fit_sparse_surcmm_prepared(boot, fit.spec_1, fit.spec_2, fit.copula, pen,
                                                       config.refit_options, &fit);
                } else {
                    refit = fit_surcmm_prepared(boot, fit.spec_1, fit.spec_2, fit.copula, config.refit_options,
                                                fit.kind == ModelKind::surcmm, &fit);
                }
                rec.per_company =
                    detail::replicate_reserves(fit, prep, refit.params_1, refit.params_2, refit.effects_1,
                                               refit.effects_2, config.process_error, &rng, clipped_lower);
            }
            clipped.fetch_add(clipped_lower);
            for (const auto& e : rec.per_company) rec.portfolio_total += e.total();
            slots[r].ok = std::move(rec);
        } catch (const NumericalError& e) {
            slots[r].error = e.what();
        } catch (const ValidationError& e) {
            slots[r].error = e.what();
        }
    });

    BootstrapDistribution dist;
    dist.company_ids = prep.base.ids;
    dist.config = config;
    dist.clipped_cells = clipped.load();
    for (int r = 0; r < config.replicates; ++r) {
        auto& slot = slots[static_cast<size_t>(r)];
        if (slot.ok)
            dist.reserves.push_back(std::move(*slot.ok));
        else
            dist.failures.emplace_back(r, slot.error);
    }
    if (static_cast<int>(dist.failures.size()) > config.failure_budget())
        throw BootstrapAbort("bootstrap: " + std::to_string(dist.failures.size()) +
                                 " replicate failures exceed the budget of " +
                                 std::to_string(config.failure_budget()),
                             std::move(dist));
    return dist;
}

struct DistributionSummary {
    double mean = 0.0;
    double stddev = 0.0;
    double cv = 0.0;
    double bias_pct = 0.0;         // |point - mean| / point, in percent
    double bias_pct_signed = 0.0;  // (point - mean) / point, in percent
};

inline DistributionSummary summarize_distribution(std::span<const double> totals, double point_reserve) {
    if (totals.size() < 2) throw ValidationError("summarize_distribution: need at least 2 replicates");
    DistributionSummary s;
    s.mean = mean(totals);
    s.stddev = sample_sd(totals);
    s.cv = s.stddev / s.mean;
    s.bias_pct_signed = 100.0 * (point_reserve - s.mean) / point_reserve;
    s.bias_pct = std::fabs(s.bias_pct_signed);
    return s;
}

// ---------------------------------------------------------------------------
// Persistence: replicate CSV (one row per replicate per company)
// ---------------------------------------------------------------------------

inline const char* const kDistributionHeader = "replicate,company_id,reserve_lob1,reserve_lob2,total_reserve";

inline void write_distribution_csv(const BootstrapDistribution& dist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << kDistributionHeader << "\n";
    for (const auto& rec : dist.reserves)
        for (size_t c = 0; c < dist.company_ids.size(); ++c) {
            const auto& e = rec.per_company[c];
            out << rec.replicate << ',' << dist.company_ids[c] << ',' << format_double(e.lob_1) << ','
                << format_double(e.lob_2) << ',' << format_double(e.total()) << "\n";
        }
    if (!out) throw IoError("failed writing " + path);
}

inline BootstrapDistribution read_distribution_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open distribution file " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kDistributionHeader)
        throw ValidationError(path + ": header must be '" + std::string(kDistributionHeader) + "'");

    std::map<int, std::map<std::string, ReserveEstimate>> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 5)
            throw ValidationError(path + " line " + std::to_string(line_no) + ": expected 5 fields");
        const int rep = static_cast<int>(detail::parse_int_field(f[0], "replicate", line_no));
        ReserveEstimate e;
        e.lob_1 = detail::parse_double_field(f[2], "reserve_lob1", line_no);
        e.lob_2 = detail::parse_double_field(f[3], "reserve_lob2", line_no);
        rows[rep][f[1]] = e;
    }
    if (rows.empty()) throw ValidationError(path + ": no data rows");

    BootstrapDistribution dist;
    for (const auto& [id, _] : rows.begin()->second) dist.company_ids.push_back(id);
    for (const auto& [rep, by_company] : rows) {
        ReplicateReserves rec;
        rec.replicate = rep;
        for (const auto& id : dist.company_ids) {
            const auto it = by_company.find(id);
            if (it == by_company.end())
                throw ValidationError(path + ": replicate " + std::to_string(rep) + " misses company " + id);
            rec.per_company.push_back(it->second);
            rec.portfolio_total += it->second.total();
        }
        dist.reserves.push_back(std::move(rec));
    }
    dist.config.replicates = static_cast<int>(dist.reserves.size());
    return dist;
}

} // namespace surcmm

#endif // SURCMM_BOOTSTRAP_HPP
