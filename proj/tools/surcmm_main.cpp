// surcmm: batch pipeline for multivariate loss reserving with SUR copula
// mixed models. Subcommands: simulate, fit, bootstrap, risk, report.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "surcmm/artifacts.hpp"
#include "surcmm/bootstrap.hpp"
#include "surcmm/estimation.hpp"
#include "surcmm/risk.hpp"
#include "surcmm/simulator.hpp"
#include "surcmm/triangles.hpp"

namespace fs = std::filesystem;
using namespace surcmm;

namespace {

struct GlobalConfig {
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    int threads = 0;
    json file;  // parsed --config contents, may be empty

    template <typename T>
    T value(const std::string& key, T fallback) const {
        if (file.contains(key)) return file.at(key).get<T>();
        return fallback;
    }
};

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::vector<double> parse_levels(const std::string& csv) {
    std::vector<double> levels;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const double v = std::stod(item);
        if (!(v > 0.0 && v < 1.0)) throw ValidationError("TVaR level " + item + " must lie in (0,1)");
        levels.push_back(v);
    }
    if (levels.empty()) throw ValidationError("no TVaR levels given");
    for (size_t k = 1; k < levels.size(); ++k)
        if (levels[k] <= levels[k - 1]) throw ValidationError("TVaR levels must be strictly increasing");
    return levels;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalConfig& global, int companies, int accident_years, const std::string& scenario,
                 std::optional<double> theta) {
    GeneratorConfig config = global.file.contains("generator")
                                 ? generator_config_from_json(global.file.at("generator"))
                                 : default_appendix_e_config();
    config.n_companies = companies;
    if (accident_years != config.I && accident_years != 10)
        throw ValidationError("simulate: the Appendix-E generator is defined for I=10");
    config.seed = global.seed;
    if (theta) config.theta = *theta;
    config = with_scenario(config, scenario_from(scenario));

    auto [portfolio, truth] = generate_portfolio(config);
    ensure_out_dir(global.out_dir);
    const std::string csv = join_path(global.out_dir, "portfolio.csv");
    write_portfolio_csv(portfolio, csv);
    save_json(ground_truth_to_json(truth), join_path(global.out_dir, "ground_truth.json"));

    const int rows = companies * 2 * upper_cell_count(config.I);
    std::cout << "wrote " << csv << ": " << companies << " companies, I=" << config.I << ", " << rows
              << " data rows, scenario=" << scenario_name(config.scenario) << ", seed=" << global.seed << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const GlobalConfig& global, const std::string& input, const std::string& model,
            const std::string& penalty_scope, const std::string& copula_scope, const std::string& family,
            bool select_marginal, bool use_bic, int nodes, double tolerance, int max_outer) {
    const Portfolio portfolio = load_portfolio(input);
    const ModelKind kind = model_kind_from(model);

    MarginalSpec spec1{family_from(family == "auto" ? "gamma" : family), nodes};
    MarginalSpec spec2 = spec1;
    json selection_note;
    if (select_marginal || family == "auto") {
        const auto sel = select_marginal_family(portfolio, {Family::gamma, Family::lognormal}, nodes,
                                                kind != ModelKind::sur_copula);
        spec1 = sel.spec_1;
        spec2 = sel.spec_2;
        json table = json::array();
        for (int lob = 0; lob < 2; ++lob)
            for (const auto& [fam, aic_v] : sel.table[static_cast<size_t>(lob)])
                table.push_back({{"lob", lob + 1}, {"family", family_name(fam)}, {"aic", aic_v}});
        selection_note["table"] = std::move(table);
        selection_note["selected"] = {family_name(spec1.family), family_name(spec2.family)};
        if (sel.tie_1 || sel.tie_2) selection_note["tie"] = "AIC tie resolved toward the first candidate";
    }

    CopulaSpec copula{CopulaFamily::gaussian,
                      copula_scope == "per-company" ? ThetaScope::per_company : ThetaScope::shared};
    FitOptions options;
    options.tolerance = tolerance;
    options.max_outer = max_outer;
    options.use_bic = use_bic;

    JointModelFit fit;
    if (kind == ModelKind::ssurcmm) {
        PenaltyConfig penalty;
        penalty.scope = penalty_scope_from(penalty_scope == "default" ? "both" : penalty_scope);
        fit = fit_sparse_surcmm(portfolio, spec1, spec2, copula, penalty, options);
        apply_threshold(fit, portfolio);
    } else {
        if (penalty_scope != "default" && penalty_scope != "none")
            throw ValidationError("--penalty applies to the ssurcmm model only");
        fit = fit_surcmm(portfolio, spec1, spec2, copula, options, kind == ModelKind::surcmm);
    }

    ensure_out_dir(global.out_dir);
    json artifact = fit_to_json(fit);
    if (!selection_note.is_null()) artifact["family_selection"] = selection_note;
    const std::string path = join_path(global.out_dir, "fit_" + model_name(fit.kind) + ".json");
    save_json(artifact, path);

    std::cout << "wrote " << path << "\n"
              << "  families: " << family_name(spec1.family) << "/" << family_name(spec2.family)
              << "  sigma: " << fixed2(fit.params_1.sigma) << "/" << fixed2(fit.params_2.sigma)
              << "  tau: " << fixed2(fit.params_1.tau) << "/" << fixed2(fit.params_2.tau) << "\n";
    if (fit.copula.scope == ThetaScope::shared)
        std::cout << "  theta: " << fixed2(fit.dependence.shared_theta) << "\n";
    else
        std::cout << "  theta: per-company (" << fit.dependence.theta_by_company.size() << " values)\n";
    if (fit.kind == ModelKind::ssurcmm)
        std::cout << "  lambda: (" << format_double(fit.penalty.lambda1) << ", "
                  << format_double(fit.penalty.lambda2) << ")  threshold: " << format_double(fit.threshold)
                  << "\n";
    std::cout << "  loglik: " << fixed2(fit.diagnostics.total_loglik) << "  AIC: " << fixed2(fit.diagnostics.aic)
              << "  outer iterations: " << fit.diagnostics.outer_iterations << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

int cmd_bootstrap(const GlobalConfig& global, const std::string& input, const std::string& fit_path,
                  int replicates, bool no_refit) {
    const Portfolio portfolio = load_portfolio(input);
    const JointModelFit fit = fit_from_json(load_json(fit_path));

    BootstrapConfig config;
    config.replicates = replicates;
    config.seed = global.seed;
    config.refit = !no_refit;
    config.threads = global.threads;

    const BootstrapDistribution dist = bootstrap_reserves(fit, portfolio, config);

    ensure_out_dir(global.out_dir);
    const std::string base = "bootstrap_" + model_name(fit.kind);
    const std::string csv = join_path(global.out_dir, base + ".csv");
    write_distribution_csv(dist, csv);
    save_json(bootstrap_summary_to_json(dist), join_path(global.out_dir, base + "_summary.json"));

    const auto totals = dist.totals();
    const auto point = point_reserve(fit, portfolio);
    const auto summary = summarize_distribution(totals, point.total());
    std::cout << "wrote " << csv << ": " << dist.reserves.size() << " replicates (" << dist.failures.size()
              << " failures, " << dist.clipped_cells << " clipped cells)\n"
              << "  portfolio point reserve " << format_money(point.total()) << ", bootstrap mean "
              << format_money(summary.mean) << ", bias " << fixed2(summary.bias_pct) << "%, CV "
              << fixed2(summary.cv) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// risk
// ---------------------------------------------------------------------------

int cmd_risk(const GlobalConfig& global, const std::vector<std::string>& dist_args, const std::string& portfolio_path,
             bool with_silo, const std::string& truth_path, const std::string& company,
             const std::string& levels_csv, int silo_replicates) {
    const std::vector<double> levels = parse_levels(levels_csv);
    const std::optional<std::string> company_filter =
        company == "portfolio" ? std::nullopt : std::optional<std::string>(company);

    std::map<std::string, RiskReport> reports;
    for (const auto& arg : dist_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos) throw ValidationError("--dist expects model=path, got '" + arg + "'");
        const std::string name = arg.substr(0, eq);
        const BootstrapDistribution dist = read_distribution_csv(arg.substr(eq + 1));
        std::optional<int> idx;
        if (company_filter) {
            const auto it =
                std::find(dist.company_ids.begin(), dist.company_ids.end(), *company_filter);
            if (it == dist.company_ids.end())
                throw ValidationError("company " + *company_filter + " not present in " + arg);
            idx = static_cast<int>(it - dist.company_ids.begin());
        }
        const auto totals = dist.totals(idx);
        for (double level : levels)
            if (tvar_tail_degenerate(totals.size(), level))
                std::cerr << "warning: " << name << " has " << totals.size() << " replicates; at level "
                          << format_double(level)
                          << " fewer than one point lies beyond the quantile (TVaR computed inclusively)\n";
        reports[name] = make_risk_report(totals, levels);
    }

    if (with_silo) {
        if (portfolio_path.empty()) throw ValidationError("--silo requires --portfolio");
        const Portfolio portfolio = load_portfolio(portfolio_path);
        BootstrapConfig config;
        config.replicates = silo_replicates;
        config.seed = global.seed;
        config.threads = global.threads;
        const auto silo = silo_baseline(portfolio, MarginalSpec{Family::gamma, 20},
                                        MarginalSpec{Family::gamma, 20}, config, levels, company_filter);
        reports["silo"] = silo.report;
    }

    if (!truth_path.empty()) {
        const GroundTruth truth = ground_truth_from_json(load_json(truth_path));
        std::optional<int> idx;
        if (company_filter) {
            const auto it = std::find(truth.company_ids.begin(), truth.company_ids.end(), *company_filter);
            if (it == truth.company_ids.end())
                throw ValidationError("company " + *company_filter + " not present in the ground truth");
            idx = static_cast<int>(it - truth.company_ids.begin());
        }
        reports["true"] = true_risk_capital(truth, 100000, global.seed, levels, idx, global.threads);
    }

    if (reports.empty()) throw ValidationError("risk: nothing to report; pass --dist, --silo, or --truth");

    // gains against the silo ladder where present
    if (reports.count("silo"))
        for (auto& [name, report] : reports)
            if (name != "silo") report.gain_vs_silo = risk_capital_gain(report.risk_capital, reports["silo"].risk_capital);

    ensure_out_dir(global.out_dir);
    write_risk_report_csv(reports, join_path(global.out_dir, "risk.csv"));
    json j;
    for (const auto& [name, report] : reports) j[name] = risk_report_to_json(report);
    save_json(j, join_path(global.out_dir, "risk.json"));

    std::cout << "scope: " << (company_filter ? *company_filter : std::string("portfolio")) << "\n";
    for (const auto& [name, report] : reports) {
        std::cout << name << " TVaR:";
        for (const auto& [level, v] : report.tvar_ladder)
            std::cout << "  " << format_double(100 * level) << "%=" << format_money(v);
        std::cout << "\n";
    }
    std::cout << "wrote " << join_path(global.out_dir, "risk.csv") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::vector<double> quartiles(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double h = p * (static_cast<double>(v.size()) - 1);
        const size_t lo = static_cast<size_t>(h);
        const size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

int cmd_report(const GlobalConfig& global, const std::string& company, const std::string& format) {
    const std::string dir = global.out_dir;
    const std::optional<std::string> company_filter =
        company == "portfolio" ? std::nullopt : std::optional<std::string>(company);

    std::optional<Portfolio> portfolio;
    if (fs::exists(join_path(dir, "portfolio.csv"))) portfolio = load_portfolio(join_path(dir, "portfolio.csv"));
    std::optional<GroundTruth> truth;
    if (fs::exists(join_path(dir, "ground_truth.json")))
        truth = ground_truth_from_json(load_json(join_path(dir, "ground_truth.json")));

    std::map<std::string, JointModelFit> fits;
    std::map<std::string, BootstrapDistribution> dists;
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
        if (name.rfind("fit_", 0) == 0 && name.size() > 9 && name.substr(name.size() - 5) == ".json")
            fits[name.substr(4, name.size() - 9)] = fit_from_json(load_json(join_path(dir, name)));
        if (name.rfind("bootstrap_", 0) == 0 && name.substr(name.size() - 4) == ".csv")
            dists[name.substr(10, name.size() - 14)] = read_distribution_csv(join_path(dir, name));
    }

    std::ostringstream md;
    std::ostringstream flat;
    flat << "section,model,metric,value\n";
    md << "# Reserving report\n\n";
    md << "Scope: " << (company_filter ? *company_filter : std::string("portfolio")) << "\n\n";

    md << "## Portfolio\n\n";
    if (portfolio) {
        md << "- companies: " << portfolio->companies.size() << ", accident/development years: " << portfolio->size
           << "\n\n";
    } else {
        md << "*portfolio.csv not available*\n\n";
    }

    md << "## Reserves\n\n";
    std::optional<ReserveEstimate> actual;
    if (truth) {
        std::optional<int> idx;
        if (company_filter) {
            const auto it = std::find(truth->company_ids.begin(), truth->company_ids.end(), *company_filter);
            if (it != truth->company_ids.end()) idx = static_cast<int>(it - truth->company_ids.begin());
        }
        actual = actual_reserve(*truth, truth->config.seed, idx);
    }
    if (portfolio && !fits.empty()) {
        md << "| Model | LOB1 | LOB2 | Total |" << (actual ? " Error |" : "") << "\n";
        md << "|---|---|---|---|" << (actual ? "---|" : "") << "\n";
        for (const auto& [name, fit] : fits) {
            const auto r = point_reserve(fit, *portfolio, company_filter);
            md << "| " << name << " | " << format_money(r.lob_1) << " | " << format_money(r.lob_2) << " | "
               << format_money(r.total()) << " |";
            flat << "reserve," << name << ",lob1," << format_double(r.lob_1) << "\n";
            flat << "reserve," << name << ",lob2," << format_double(r.lob_2) << "\n";
            flat << "reserve," << name << ",total," << format_double(r.total()) << "\n";
            if (actual) {
                const double err = percentage_error(r.total(), actual->total());
                md << " " << fixed2(err) << "% |";
                flat << "reserve," << name << ",pct_error," << format_double(err) << "\n";
            }
            md << "\n";
        }
        if (actual) {
            md << "| actual | " << format_money(actual->lob_1) << " | " << format_money(actual->lob_2) << " | "
               << format_money(actual->total()) << " |" << (actual ? "  |" : "") << "\n";
            flat << "reserve,actual,total," << format_double(actual->total()) << "\n";
        }
        md << "\n";
    } else {
        md << "*needs portfolio.csv and at least one fit_<model>.json*\n\n";
    }

    md << "## Predictive distributions\n\n";
    if (!dists.empty() && portfolio && !fits.empty()) {
        md << "| Model | Reserve | Bootstrap mean | Bias | Std. dev. | CV |\n|---|---|---|---|---|---|\n";
        std::ofstream plot(join_path(dir, "plot_reserve_quantiles.csv"));
        plot << "model,min,q1,median,q3,max\n";
        for (const auto& [name, dist] : dists) {
            if (!fits.count(name)) continue;
            std::optional<int> idx;
            if (company_filter) {
                const auto it = std::find(dist.company_ids.begin(), dist.company_ids.end(), *company_filter);
                if (it == dist.company_ids.end()) continue;
                idx = static_cast<int>(it - dist.company_ids.begin());
            }
            const auto totals = dist.totals(idx);
            const auto point = point_reserve(fits.at(name), *portfolio, company_filter);
            const auto s = summarize_distribution(totals, point.total());
            md << "| " << name << " | " << format_money(point.total()) << " | " << format_money(s.mean) << " | "
               << fixed2(s.bias_pct) << "% | " << format_money(s.stddev) << " | " << fixed2(s.cv) << " |\n";
            flat << "bootstrap," << name << ",mean," << format_double(s.mean) << "\n";
            flat << "bootstrap," << name << ",bias_pct," << format_double(s.bias_pct) << "\n";
            flat << "bootstrap," << name << ",stddev," << format_double(s.stddev) << "\n";
            flat << "bootstrap," << name << ",cv," << format_double(s.cv) << "\n";
            const auto qs = quartiles(totals);
            plot << name;
            for (double q : qs) plot << ',' << format_double(q);
            plot << "\n";
        }
        md << "\n";
    } else {
        md << "*needs bootstrap_<model>.csv plus the matching fit and portfolio*\n\n";
    }

    md << "## Risk capital\n\n";
    if (fs::exists(join_path(dir, "risk.json"))) {
        const json risk = load_json(join_path(dir, "risk.json"));
        md << "| Model | Level | TVaR | Risk capital | Gain vs silo |\n|---|---|---|---|---|\n";
        for (const auto& [model, rep] : risk.items())
            for (const auto& [level, value] : rep.at("tvar").items()) {
                md << "| " << model << " | " << level << " | " << format_money(value.get<double>()) << " | ";
                if (rep.at("risk_capital").contains(level)) {
                    md << format_money(rep.at("risk_capital").at(level).get<double>());
                    flat << "risk_capital," << model << "," << level << ","
                         << format_double(rep.at("risk_capital").at(level).get<double>()) << "\n";
                }
                md << " | ";
                if (rep.at("gain_vs_silo").contains(level))
                    md << fixed2(rep.at("gain_vs_silo").at(level).get<double>()) << "%";
                md << " |\n";
                flat << "tvar," << model << "," << level << "," << format_double(value.get<double>()) << "\n";
            }
        md << "\n";
    } else {
        md << "*risk.json not available*\n\n";
    }

    if (portfolio) {
        std::ofstream plot(join_path(dir, "plot_loss_ratios.csv"));
        plot << "company_id,lob,min,q1,median,q3,max\n";
        for (const auto& c : portfolio->companies)
            for (int lob = 1; lob <= 2; ++lob) {
                const auto st = standardize(lob == 1 ? c.triangle_1 : c.triangle_2);
                const auto qs = quartiles(st.ratios);
                plot << c.company_id << ',' << lob;
                for (double q : qs) plot << ',' << format_double(q);
                plot << "\n";
            }
    }

    std::ofstream out(join_path(dir, "report.md"));
    if (!out) throw IoError("cannot write report.md");
    out << md.str();
    if (format == "csv") {
        std::ofstream fcsv(join_path(dir, "report.csv"));
        if (!fcsv) throw IoError("cannot write report.csv");
        fcsv << flat.str();
    }
    std::cout << "wrote " << join_path(dir, "report.md") << (format == "csv" ? " and report.csv" : "") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SUR copula mixed model loss-reserving pipeline"};
    app.require_subcommand(1);

    // --config is pre-parsed so file values become defaults; explicit flags win.
    GlobalConfig global;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") {
            try {
                global.file = load_json(argv[i + 1]);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 1;
            }
        }
    std::string config_path;
    app.add_option("--config", config_path, "JSON configuration file (flags override file values)");
    global.out_dir = global.value<std::string>("out", ".");
    global.seed = global.value<std::uint64_t>("seed", 0);
    global.threads = global.value<int>("threads", 0);
    app.add_option("--out", global.out_dir, "output directory");
    app.add_option("--seed", global.seed, "random seed");
    app.add_option("--threads", global.threads, "worker threads (0 = all cores)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-company portfolio");
    int companies = global.value<int>("companies", 30);
    int accident_years = 10;
    std::string scenario = global.value<std::string>("scenario", "none");
    double theta_override = -2.0;
    sim->add_option("--companies", companies, "number of companies");
    sim->add_option("--accident-years", accident_years, "triangle size I");
    sim->add_option("--scenario", scenario, "none|zero-one-accident|zero-one-development|zero-both");
    sim->add_option("--theta", theta_override, "override the true dependence parameter");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "fit a model to a portfolio CSV");
    std::string input = global.value<std::string>("input", "");
    std::string model = global.value<std::string>("model", "ssurcmm");
    std::string penalty = global.value<std::string>("penalty", "default");
    std::string copula_scope = global.value<std::string>("copula_scope", "shared");
    std::string family = global.value<std::string>("family", "gamma");
    bool select_marginal = false;
    bool use_bic = false;
    int nodes = global.value<int>("quadrature_nodes", 20);
    double tolerance = 1e-4;
    int max_outer = 50;
    fit_cmd->add_option("--input", input, "portfolio CSV");
    fit_cmd->add_option("--model", model, "sur-copula|surcmm|ssurcmm");
    fit_cmd->add_option("--penalty", penalty, "none|ay|dy|both (ssurcmm)");
    fit_cmd->add_option("--copula-scope", copula_scope, "shared|per-company");
    fit_cmd->add_option("--family", family, "gamma|lognormal|auto");
    fit_cmd->add_flag("--select-marginal", select_marginal, "choose marginal families by AIC");
    fit_cmd->add_flag("--bic", use_bic, "select penalties by BIC instead of AIC");
    fit_cmd->add_option("--nodes", nodes, "quadrature nodes");
    fit_cmd->add_option("--tol", tolerance, "outer convergence tolerance");
    fit_cmd->add_option("--max-outer", max_outer, "outer iteration cap");

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "predictive reserve distribution for a fit");
    std::string boot_input = global.value<std::string>("input", "");
    std::string fit_path;
    int replicates = 5000;
    if (global.file.contains("bootstrap")) {
        const auto& b = global.file.at("bootstrap");
        if (b.contains("replicates")) replicates = b.at("replicates").get<int>();
        if (b.contains("seed")) global.seed = b.at("seed").get<std::uint64_t>();
    }
    bool no_refit = false;
    boot->add_option("--input", boot_input, "portfolio CSV");
    boot->add_option("--fit", fit_path, "fit artifact JSON");
    boot->add_option("--replicates", replicates, "bootstrap replicates");
    boot->add_flag("--no-refit", no_refit, "skip per-replicate refits (smoke mode)");

    // risk
    auto* risk_cmd = app.add_subcommand("risk", "TVaR ladder, risk capital, and gains vs silo");
    std::vector<std::string> dist_args;
    std::string risk_portfolio = global.value<std::string>("input", "");
    bool with_silo = false;
    std::string truth_path;
    std::string company = global.value<std::string>("company", "portfolio");
    std::string levels_csv = global.value<std::string>("levels", "0.6,0.8,0.85,0.9,0.95,0.99");
    int silo_replicates = 1000;
    risk_cmd->add_option("--dist", dist_args, "model=distribution.csv (repeatable)");
    risk_cmd->add_option("--portfolio", risk_portfolio, "portfolio CSV (for --silo)");
    risk_cmd->add_flag("--silo", with_silo, "compute the silo GLM baseline");
    risk_cmd->add_option("--truth", truth_path, "ground-truth sidecar for the true risk capital");
    risk_cmd->add_option("--company", company, "company id or 'portfolio'");
    risk_cmd->add_option("--levels", levels_csv, "comma-separated TVaR levels");
    risk_cmd->add_option("--silo-replicates", silo_replicates, "silo bootstrap replicates");

    // report
    auto* rep = app.add_subcommand("report", "consolidated summary of the pipeline outputs");
    std::string rep_company = global.value<std::string>("company", "portfolio");
    std::string rep_format = "md";
    rep->add_option("--company", rep_company, "company id or 'portfolio'");
    rep->add_option("--format", rep_format, "md|csv (csv adds a flat export)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sim->parsed())
            return cmd_simulate(global, companies, accident_years, scenario,
                                theta_override > -1.0 ? std::optional<double>(theta_override) : std::nullopt);
        if (fit_cmd->parsed()) {
            if (input.empty()) throw ValidationError("fit: --input is required");
            return cmd_fit(global, input, model, penalty, copula_scope, family, select_marginal, use_bic, nodes,
                           tolerance, max_outer);
        }
        if (boot->parsed()) {
            if (boot_input.empty()) throw ValidationError("bootstrap: --input is required");
            if (fit_path.empty()) throw ValidationError("bootstrap: --fit is required");
            return cmd_bootstrap(global, boot_input, fit_path, replicates, no_refit);
        }
        if (risk_cmd->parsed())
            return cmd_risk(global, dist_args, risk_portfolio, with_silo, truth_path, company, levels_csv,
                            silo_replicates);
        if (rep->parsed()) return cmd_report(global, rep_company, rep_format);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
