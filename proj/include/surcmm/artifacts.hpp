#ifndef SURCMM_ARTIFACTS_HPP
#define SURCMM_ARTIFACTS_HPP

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "surcmm/bootstrap.hpp"
#include "surcmm/estimation.hpp"
#include "surcmm/risk.hpp"
#include "surcmm/simulator.hpp"

namespace surcmm {

using json = nlohmann::json;

inline std::vector<std::string> beta_names(int I) {
    std::vector<std::string> names{"(Intercept)"};
    for (int i = 2; i <= I; ++i) names.push_back("year" + std::to_string(i));
    for (int j = 2; j <= I; ++j) names.push_back("dev" + std::to_string(j));
    return names;
}

namespace detail {

inline json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
    return v;
}

} // namespace detail

inline std::string penalty_scope_name(PenaltyScope s) {
    switch (s) {
        case PenaltyScope::none: return "none";
        case PenaltyScope::accident_only: return "ay";
        case PenaltyScope::development_only: return "dy";
        case PenaltyScope::both: return "both";
    }
    return "?";
}

inline PenaltyScope penalty_scope_from(const std::string& s) {
    if (s == "none") return PenaltyScope::none;
    if (s == "ay" || s == "accident-only") return PenaltyScope::accident_only;
    if (s == "dy" || s == "development-only") return PenaltyScope::development_only;
    if (s == "both") return PenaltyScope::both;
    throw ValidationError("unknown penalty scope '" + s + "'");
}

inline ModelKind model_kind_from(const std::string& s) {
    if (s == "sur-copula") return ModelKind::sur_copula;
    if (s == "surcmm") return ModelKind::surcmm;
    if (s == "ssurcmm") return ModelKind::ssurcmm;
    throw ValidationError("unknown model '" + s + "' (expected sur-copula, surcmm, or ssurcmm)");
}

inline Family family_from(const std::string& s) {
    if (s == "gamma") return Family::gamma;
    if (s == "lognormal") return Family::lognormal;
    throw ValidationError("unknown marginal family '" + s + "'");
}

inline SparsityScenario scenario_from(const std::string& s) {
    if (s == "none") return SparsityScenario::none;
    if (s == "zero-one-accident") return SparsityScenario::zero_one_accident;
    if (s == "zero-one-development") return SparsityScenario::zero_one_development;
    if (s == "zero-both") return SparsityScenario::zero_both;
    throw ValidationError("unknown sparsity scenario '" + s + "'");
}

// ---------------------------------------------------------------------------
// Fit artifact
// ---------------------------------------------------------------------------

inline json fit_to_json(const JointModelFit& fit) {
    json j;
    j["model"] = model_name(fit.kind);
    j["I"] = fit.I;
    j["company_ids"] = fit.company_ids;
    j["beta_names"] = beta_names(fit.I);
    for (int lob = 1; lob <= 2; ++lob) {
        const auto& spec = lob == 1 ? fit.spec_1 : fit.spec_2;
        const auto& params = lob == 1 ? fit.params_1 : fit.params_2;
        const auto& effects = lob == 1 ? fit.effects_1 : fit.effects_2;
        json m;
        m["family"] = family_name(spec.family);
        m["quadrature_nodes"] = spec.quadrature_nodes;
        m["beta"] = detail::vec_to_json(params.beta);
        m["sigma"] = params.sigma;
        m["tau"] = params.tau;
        m["b_hat"] = effects.b_hat;
        m["thresholded_beta"] = detail::vec_to_json(lob == 1 ? fit.thresholded_beta_1 : fit.thresholded_beta_2);
        j["lob" + std::to_string(lob)] = std::move(m);
    }
    j["copula"]["family"] = fit.copula.family == CopulaFamily::gaussian ? "gaussian" : "independence";
    j["copula"]["scope"] = fit.copula.scope == ThetaScope::shared ? "shared" : "per-company";
    j["copula"]["shared_theta"] = fit.dependence.shared_theta;
    j["copula"]["theta_by_company"] = fit.dependence.theta_by_company;
    j["copula"]["at_boundary"] = fit.dependence.at_boundary;
    j["penalty"]["scope"] = penalty_scope_name(fit.penalty.scope);
    j["penalty"]["lambda1"] = fit.penalty.lambda1;
    j["penalty"]["lambda2"] = fit.penalty.lambda2;
    j["threshold"] = fit.threshold;
    json diag;
    diag["outer_iterations"] = fit.diagnostics.outer_iterations;
    diag["final_change_norm"] = fit.diagnostics.final_change_norm;
    diag["converged"] = fit.diagnostics.converged;
    diag["marginal_loglik_1"] = fit.diagnostics.marginal_loglik_1;
    diag["marginal_loglik_2"] = fit.diagnostics.marginal_loglik_2;
    diag["copula_loglik"] = fit.diagnostics.copula_loglik;
    diag["total_loglik"] = fit.diagnostics.total_loglik;
    diag["df"] = fit.diagnostics.df;
    diag["aic"] = fit.diagnostics.aic;
    diag["theta_at_boundary"] = fit.diagnostics.theta_at_boundary;
    diag["objective_per_iteration"] = fit.diagnostics.objective_per_iteration;
    json table = json::array();
    for (const auto& g : fit.diagnostics.aic_table)
        table.push_back({{"lambda1", g.lambda1},
                         {"lambda2", g.lambda2},
                         {"total_loglik", g.total_loglik},
                         {"df", g.df},
                         {"aic", g.aic}});
    diag["aic_table"] = std::move(table);
    j["diagnostics"] = std::move(diag);
    return j;
}

inline JointModelFit fit_from_json(const json& j) {
    JointModelFit fit;
    fit.kind = model_kind_from(j.at("model").get<std::string>());
    fit.I = j.at("I").get<int>();
    fit.company_ids = j.at("company_ids").get<std::vector<std::string>>();
    for (int lob = 1; lob <= 2; ++lob) {
        const auto& m = j.at("lob" + std::to_string(lob));
        auto& spec = lob == 1 ? fit.spec_1 : fit.spec_2;
        auto& params = lob == 1 ? fit.params_1 : fit.params_2;
        auto& effects = lob == 1 ? fit.effects_1 : fit.effects_2;
        spec.family = family_from(m.at("family").get<std::string>());
        spec.quadrature_nodes = m.at("quadrature_nodes").get<int>();
        params.beta = detail::vec_from_json(m.at("beta"));
        params.sigma = m.at("sigma").get<double>();
        params.tau = m.at("tau").get<double>();
        effects.b_hat = m.at("b_hat").get<std::map<std::string, double>>();
        (lob == 1 ? fit.thresholded_beta_1 : fit.thresholded_beta_2) =
            detail::vec_from_json(m.at("thresholded_beta"));
    }
    const auto& cop = j.at("copula");
    fit.copula.family = cop.at("family").get<std::string>() == "gaussian" ? CopulaFamily::gaussian
                                                                          : CopulaFamily::independence;
    fit.copula.scope =
        cop.at("scope").get<std::string>() == "shared" ? ThetaScope::shared : ThetaScope::per_company;
    fit.dependence.spec = fit.copula;
    fit.dependence.shared_theta = cop.at("shared_theta").get<double>();
    fit.dependence.theta_by_company = cop.at("theta_by_company").get<std::map<std::string, double>>();
    fit.dependence.at_boundary = cop.at("at_boundary").get<bool>();
    fit.penalty.scope = penalty_scope_from(j.at("penalty").at("scope").get<std::string>());
    fit.penalty.lambda1 = j.at("penalty").at("lambda1").get<double>();
    fit.penalty.lambda2 = j.at("penalty").at("lambda2").get<double>();
    fit.threshold = j.at("threshold").get<double>();
    const auto& diag = j.at("diagnostics");
    fit.diagnostics.outer_iterations = diag.at("outer_iterations").get<int>();
    fit.diagnostics.final_change_norm = diag.at("final_change_norm").get<double>();
    fit.diagnostics.converged = diag.at("converged").get<bool>();
    fit.diagnostics.marginal_loglik_1 = diag.at("marginal_loglik_1").get<double>();
    fit.diagnostics.marginal_loglik_2 = diag.at("marginal_loglik_2").get<double>();
    fit.diagnostics.copula_loglik = diag.at("copula_loglik").get<double>();
    fit.diagnostics.total_loglik = diag.at("total_loglik").get<double>();
    fit.diagnostics.df = diag.at("df").get<int>();
    fit.diagnostics.aic = diag.at("aic").get<double>();
    fit.diagnostics.theta_at_boundary = diag.at("theta_at_boundary").get<bool>();
    fit.diagnostics.objective_per_iteration = diag.at("objective_per_iteration").get<std::vector<double>>();
    for (const auto& g : diag.at("aic_table"))
        fit.diagnostics.aic_table.push_back({g.at("lambda1").get<double>(), g.at("lambda2").get<double>(),
                                             g.at("total_loglik").get<double>(), g.at("df").get<int>(),
                                             g.at("aic").get<double>()});
    return fit;
}

// ---------------------------------------------------------------------------
// Generator config / ground-truth sidecar
// ---------------------------------------------------------------------------

inline json generator_config_to_json(const GeneratorConfig& c) {
    json j;
    j["n_companies"] = c.n_companies;
    j["I"] = c.I;
    j["family_1"] = family_name(c.family_1);
    j["family_2"] = family_name(c.family_2);
    j["intercept_1"] = c.intercept_1;
    j["intercept_2"] = c.intercept_2;
    j["accident_effects_1"] = c.accident_effects_1;
    j["accident_effects_2"] = c.accident_effects_2;
    j["development_effects_1"] = c.development_effects_1;
    j["development_effects_2"] = c.development_effects_2;
    j["tau_1"] = c.tau_1;
    j["tau_2"] = c.tau_2;
    j["sigma_1"] = c.sigma_1;
    j["sigma_2"] = c.sigma_2;
    j["theta"] = c.theta;
    j["premiums_1"] = c.premiums_1;
    j["premiums_2"] = c.premiums_2;
    j["scenario"] = scenario_name(c.scenario);
    j["zero_accident_year"] = c.zero_accident_year;
    j["zero_development_year"] = c.zero_development_year;
    j["seed"] = c.seed;
    return j;
}

inline GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c = default_appendix_e_config();
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_companies", c.n_companies);
    get("I", c.I);
    if (j.contains("family_1")) c.family_1 = family_from(j.at("family_1").get<std::string>());
    if (j.contains("family_2")) c.family_2 = family_from(j.at("family_2").get<std::string>());
    get("intercept_1", c.intercept_1);
    get("intercept_2", c.intercept_2);
    get("accident_effects_1", c.accident_effects_1);
    get("accident_effects_2", c.accident_effects_2);
    get("development_effects_1", c.development_effects_1);
    get("development_effects_2", c.development_effects_2);
    get("tau_1", c.tau_1);
    get("tau_2", c.tau_2);
    get("sigma_1", c.sigma_1);
    get("sigma_2", c.sigma_2);
    get("theta", c.theta);
    get("premiums_1", c.premiums_1);
    get("premiums_2", c.premiums_2);
    get("zero_accident_year", c.zero_accident_year);
    get("zero_development_year", c.zero_development_year);
    get("seed", c.seed);
    if (j.contains("scenario"))
        c = with_scenario(c, scenario_from(j.at("scenario").get<std::string>()));
    return c;
}

inline json ground_truth_to_json(const GroundTruth& t) {
    json j;
    j["config"] = generator_config_to_json(t.config);
    j["company_ids"] = t.company_ids;
    j["b_1"] = t.b_1;
    j["b_2"] = t.b_2;
    j["expected_lower_1"] = t.expected_lower_1;
    j["expected_lower_2"] = t.expected_lower_2;
    return j;
}

inline GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth t;
    t.config = generator_config_from_json(j.at("config"));
    // scenario zeroing is already baked into the stored effect vectors
    t.config.scenario = scenario_from(j.at("config").at("scenario").get<std::string>());
    t.company_ids = j.at("company_ids").get<std::vector<std::string>>();
    t.b_1 = j.at("b_1").get<std::vector<double>>();
    t.b_2 = j.at("b_2").get<std::vector<double>>();
    t.expected_lower_1 = j.at("expected_lower_1").get<std::vector<std::vector<double>>>();
    t.expected_lower_2 = j.at("expected_lower_2").get<std::vector<std::vector<double>>>();
    return t;
}

// ---------------------------------------------------------------------------
// Bootstrap sidecar and risk report
// ---------------------------------------------------------------------------

inline json bootstrap_summary_to_json(const BootstrapDistribution& dist) {
    json j;
    j["replicates"] = dist.config.replicates;
    j["seed"] = dist.config.seed;
    j["refit"] = dist.config.refit;
    j["successes"] = dist.reserves.size();
    j["clipped_cells"] = dist.clipped_cells;
    json failures = json::array();
    for (const auto& [rep, reason] : dist.failures) failures.push_back({{"replicate", rep}, {"reason", reason}});
    j["failures"] = std::move(failures);
    j["company_ids"] = dist.company_ids;
    return j;
}

inline json risk_report_to_json(const RiskReport& report) {
    auto map_to_json = [](const std::map<double, double>& m) {
        json o = json::object();
        for (const auto& [k, v] : m) o[format_double(k)] = v;
        return o;
    };
    json j;
    j["tvar"] = map_to_json(report.tvar_ladder);
    j["risk_capital"] = map_to_json(report.risk_capital);
    j["gain_vs_silo"] = map_to_json(report.gain_vs_silo);
    return j;
}

inline void save_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError(path + ": invalid JSON (" + e.what() + ")");
    }
    return j;
}

} // namespace surcmm

#endif // SURCMM_ARTIFACTS_HPP
