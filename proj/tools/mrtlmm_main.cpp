// Command-line front end: simulate MRT-style datasets, fit the mixed model,
// run replication studies and the marginal-vs-conditional oracle.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrtlmm/errors.hpp"
#include "mrtlmm/replicate.hpp"

using nlohmann::json;
using namespace mrtlmm;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ParseError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << content;
}

json fit_to_json(const FitResult& fr, const std::vector<CoefInference>* cis) {
    json coefs = json::array();
    for (Eigen::Index j = 0; j < fr.beta.size(); ++j) {
        json c{{"name", fr.x_names[static_cast<std::size_t>(j)]},
               {"estimate", fr.beta[j]},
               {"se", std::sqrt(fr.beta_cov(j, j))}};
        if (cis) {
            const auto& ci = (*cis)[static_cast<std::size_t>(j)];
            c["df"] = ci.df;
            c["ci_low"] = ci.ci_low;
            c["ci_high"] = ci.ci_high;
            c["level"] = ci.level;
            c["df_fallback"] = ci.df_fallback;
        }
        coefs.push_back(std::move(c));
    }
    json G = json::array();
    for (Eigen::Index i = 0; i < fr.G_hat.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < fr.G_hat.cols(); ++j) row.push_back(fr.G_hat(i, j));
        G.push_back(std::move(row));
    }
    return json{{"objective", to_string(fr.objective)},
                {"coefficients", coefs},
                {"random_effect_names", fr.z_names},
                {"G", G},
                {"sigma2_eps", fr.variance.sigma2_eps},
                {"loglik", fr.loglik},
                {"deviance", fr.deviance},
                {"convergence", json{{"converged", fr.converged}, {"n_evals", fr.n_evals}}}};
}

std::string format_ci_table(const std::vector<CoefInference>& cis) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "coefficient" << std::right << std::setw(10) << "estimate"
       << std::setw(22) << "CI" << std::setw(10) << "df" << "\n";
    for (const auto& c : cis) {
        std::ostringstream ci;
        ci << "(" << std::fixed << std::setprecision(3) << c.ci_low << ", " << c.ci_high << ")";
        os << std::left << std::setw(16) << c.name << std::right << std::fixed
           << std::setprecision(3) << std::setw(10) << c.estimate << std::setw(22) << ci.str()
           << std::setprecision(1) << std::setw(10) << c.df << "\n";
    }
    return os.str();
}

std::string ci_table_csv(const std::vector<CoefInference>& cis) {
    std::ostringstream os;
    os.precision(10);
    os << "coefficient,estimate,se,df,ci_low,ci_high,level\n";
    for (const auto& c : cis)
        os << c.name << "," << c.estimate << "," << c.se << "," << c.df << "," << c.ci_low << ","
           << c.ci_high << "," << c.level << "\n";
    return os.str();
}

std::string report_csv(const ReplicationReport& rep) {
    std::ostringstream os;
    os.precision(10);
    os << "parameter,kind,truth,bias,sd,coverage\n";
    for (const auto& s : rep.fixed)
        os << s.name << ",fixed," << s.truth << "," << s.bias << "," << s.sd << "," << s.coverage
           << "\n";
    for (const auto& s : rep.variance)
        os << s.name << ",variance," << s.truth << "," << s.bias << "," << s.sd << ",\n";
    return os.str();
}

std::string report_markdown(const ReplicationReport& rep) {
    std::ostringstream os;
    os << "| parameter | truth | bias | sd | cp |\n|---|---|---|---|---|\n" << std::fixed;
    for (const auto& s : rep.fixed)
        os << "| " << s.name << " | " << std::setprecision(3) << s.truth << " | " << s.bias
           << " | " << s.sd << " | " << s.coverage << " |\n";
    for (const auto& s : rep.variance)
        os << "| " << s.name << " | " << std::setprecision(3) << s.truth << " | " << s.bias
           << " | " << s.sd << " | - |\n";
    os << "\nreplicates used: " << rep.n_used << " / " << rep.n_requested
       << " (non-converged: " << rep.n_nonconverged << ")\n";
    return os.str();
}

LongitudinalDataset simulate_from_config(const json& cfg, std::optional<std::uint64_t> seed) {
    if (cfg.contains("heartsteps")) {
        const auto coefs = HeartstepsCoefs::from_json(cfg.at("heartsteps"));
        return simulate_heartsteps_like(cfg.value("n", 37), cfg.value("T", 210), coefs,
                                        cfg.value("avail_rate", 0.804),
                                        seed.value_or(cfg.value("seed", std::uint64_t{1})));
    }
    auto sim = SimConfig::from_json(cfg);
    if (seed) sim.seed = *seed;
    return simulate_gm(sim);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear mixed model engine and micro-randomized-trial simulation lab"};
    app.require_subcommand(1);

    std::string config_path, data_path, spec_path, out_path, trace_path, ci_csv_path;
    std::string objective_str = "reml";
    double level = 0.95;
    int reps = 1000, workers = 1, n = 200, T = 30;
    long mc_n = 1000000;
    std::uint64_t seed = 1;
    bool seed_given = false;
    double beta0 = 0.0, beta1 = 1.0, s2u = 1.0, s2x1 = 1.0, s2eps = 1.0;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option_function<std::uint64_t>(
            "--seed",
            [&](const std::uint64_t& v) {
                seed = v;
                seed_given = true;
            },
            "RNG seed");
    };

    auto* sim = app.add_subcommand("simulate", "generate a dataset from a config JSON");
    sim->add_option("--config", config_path, "SimConfig JSON (or {\"heartsteps\": ...})")
        ->required();
    sim->add_option("--out", out_path, "output CSV path")->required();
    add_seed(sim);

    auto* fitc = app.add_subcommand("fit", "fit the mixed model to a CSV dataset");
    fitc->add_option("--data", data_path)->required();
    fitc->add_option("--spec", spec_path, "ModelSpec JSON")->required();
    fitc->add_option("--objective", objective_str, "ml|reml");
    fitc->add_option("--level", level);
    fitc->add_option("--out", out_path, "JSON report path");
    fitc->add_option("--ci-csv", ci_csv_path, "inference table CSV path");
    fitc->add_option("--trace", trace_path, "deviance trace CSV path");

    auto* pred = app.add_subcommand("predict", "per-individual random-effect predictions");
    pred->add_option("--data", data_path)->required();
    pred->add_option("--spec", spec_path)->required();
    pred->add_option("--objective", objective_str, "ml|reml");
    pred->add_option("--out", out_path, "output CSV path");

    auto* repl = app.add_subcommand("replicate", "Monte-Carlo replication study");
    repl->add_option("--config", config_path, "SimConfig JSON")->required();
    repl->add_option("--spec", spec_path, "ModelSpec JSON (default: the GM's own model)");
    repl->add_option("--reps", reps);
    repl->add_option("--level", level);
    repl->add_option("--workers", workers);
    repl->add_option("--objective", objective_str, "ml|reml");
    repl->add_option("--out", out_path, "output prefix (writes .csv and .md)");
    add_seed(repl);

    auto* oracle = app.add_subcommand("oracle-marginal",
                                      "Monte-Carlo marginal slope/intercept for the two-timepoint "
                                      "endogenous model");
    oracle->add_option("--beta0", beta0);
    oracle->add_option("--beta1", beta1);
    oracle->add_option("--s2u", s2u, "random-intercept variance");
    oracle->add_option("--s2x1", s2x1, "X1 variance");
    oracle->add_option("--s2eps", s2eps, "noise variance");
    oracle->add_option("--mc-n", mc_n);
    add_seed(oracle);

    auto* demo = app.add_subcommand("fccm-demo", "GM1 vs GM3 bias contrast");
    demo->add_option("--n", n);
    demo->add_option("--T", T);
    demo->add_option("--reps", reps);
    demo->add_option("--workers", workers);
    add_seed(demo);

    auto* ana = app.add_subcommand("analyze", "full workflow: fits, intervals, LRT, predictions");
    ana->add_option("--data", data_path)->required();
    ana->add_option("--spec", spec_path)->required();
    ana->add_option("--objective", objective_str, "ml|reml");
    ana->add_option("--level", level);
    ana->add_option("--out", out_path, "JSON report path");

    try {
        app.parse(argc, argv);

        if (sim->parsed()) {
            const auto data = simulate_from_config(
                read_json_file(config_path),
                seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
            save_csv(data, out_path);
            std::cout << "wrote " << data.n_obs() << " rows for " << data.individuals.size()
                      << " individuals to " << out_path << "\n";
        } else if (fitc->parsed()) {
            const auto data = load_csv(data_path);
            const auto spec = ModelSpec::from_json(read_json_file(spec_path));
            const auto bundle = build_design(data, spec);
            FitOptions opts;
            opts.keep_trace = !trace_path.empty();
            const auto fr = fit(bundle, objective_from_string(objective_str), opts);
            const auto cis = satterthwaite_ci(fr, bundle, level);
            std::cout << format_ci_table(cis) << "\nsigma2_eps: " << fr.variance.sigma2_eps
                      << "\nG diagonal:";
            for (Eigen::Index j = 0; j < fr.G_hat.rows(); ++j) std::cout << " " << fr.G_hat(j, j);
            std::cout << "\n" << to_string(fr.objective) << " loglik: " << fr.loglik
                      << (fr.converged ? "" : "  [NOT CONVERGED]") << "\n";
            if (!out_path.empty()) write_text_file(out_path, fit_to_json(fr, &cis).dump(2) + "\n");
            if (!ci_csv_path.empty()) write_text_file(ci_csv_path, ci_table_csv(cis));
            if (!trace_path.empty()) {
                std::ostringstream os;
                os << "iter,deviance\n";
                os.precision(12);
                for (std::size_t i = 0; i < fr.optimizer_trace.size(); ++i)
                    os << i << "," << fr.optimizer_trace[i] << "\n";
                write_text_file(trace_path, os.str());
            }
        } else if (pred->parsed()) {
            const auto data = load_csv(data_path);
            const auto spec = ModelSpec::from_json(read_json_file(spec_path));
            const auto bundle = build_design(data, spec);
            const auto fr = fit(bundle, objective_from_string(objective_str));
            const auto re = predict_random_effects(bundle, fr);
            std::ostringstream os;
            os.precision(10);
            os << "id";
            for (const auto& zn : fr.z_names) os << ",b_" << zn << ",sd_" << zn;
            os << "\n";
            for (std::size_t i = 0; i < re.ids.size(); ++i) {
                os << re.ids[i];
                for (Eigen::Index j = 0; j < re.b_hat[i].size(); ++j)
                    os << "," << re.b_hat[i][j] << "," << std::sqrt(re.cond_cov[i](j, j));
                os << "\n";
            }
            if (!out_path.empty())
                write_text_file(out_path, os.str());
            else
                std::cout << os.str();
        } else if (repl->parsed()) {
            auto cfg = SimConfig::from_json(read_json_file(config_path));
            if (seed_given) cfg.seed = seed;
            const ModelSpec spec = spec_path.empty()
                                       ? gm_model_spec(cfg.gm)
                                       : ModelSpec::from_json(read_json_file(spec_path));
            ReplicationOptions opts;
            opts.level = level;
            opts.workers = workers;
            opts.objective = objective_from_string(objective_str);
            const auto rep = run_replication(cfg, spec, reps, opts);
            std::cout << report_markdown(rep);
            if (!out_path.empty()) {
                write_text_file(out_path + ".csv", report_csv(rep));
                write_text_file(out_path + ".md", report_markdown(rep));
            }
        } else if (oracle->parsed()) {
            const auto r = marginal_oracle(beta0, beta1, s2u, s2x1, s2eps, mc_n, seed);
            std::cout.precision(6);
            std::cout << "conditional:   intercept " << r.beta0 << "  slope " << r.beta1 << "\n"
                      << "MC marginal:   intercept " << r.marginal_intercept << " (se "
                      << r.intercept_se << ")  slope " << r.marginal_slope << " (se " << r.slope_se
                      << ")\n"
                      << "closed form:   intercept " << r.closed_form_intercept << "  slope "
                      << r.closed_form_slope << "\n"
                      << "printed form:  intercept " << r.printed_form_intercept << "  slope "
                      << r.printed_form_slope << "\n";
        } else if (demo->parsed()) {
            ReplicationOptions opts;
            opts.workers = workers;
            const auto d = fccm_bias_demo(n, T, reps, seed, opts);
            std::cout << "GM1 (assumption holds):\n" << report_markdown(d.gm1)
                      << "\nGM3 (assumption violated):\n" << report_markdown(d.gm3);
        } else if (ana->parsed()) {
            const auto data = load_csv(data_path);
            const auto spec = ModelSpec::from_json(read_json_file(spec_path));
            const auto rep = analyze(data, spec, objective_from_string(objective_str), level);
            std::cout << "=== model with treatment random slope ===\n"
                      << format_ci_table(rep.ci_full) << "variance components:";
            for (Eigen::Index j = 0; j < rep.full.G_hat.rows(); ++j)
                std::cout << " " << rep.full.G_hat(j, j);
            std::cout << "  sigma2_eps " << rep.full.variance.sigma2_eps << "\n";
            if (rep.full.G_hat.rows() == 2) {
                const double denom =
                    std::sqrt(rep.full.G_hat(0, 0) * rep.full.G_hat(1, 1));
                if (denom > 0)
                    std::cout << "corr(b0,b1): " << rep.full.G_hat(0, 1) / denom << "\n";
            }
            std::cout << "\n=== model without treatment random slope ===\n"
                      << format_ci_table(rep.ci_reduced) << "variance components:";
            for (Eigen::Index j = 0; j < rep.reduced.G_hat.rows(); ++j)
                std::cout << " " << rep.reduced.G_hat(j, j);
            std::cout << "  sigma2_eps " << rep.reduced.variance.sigma2_eps << "\n";
            std::cout << "\nLRT for the treatment random slope: stat " << rep.lrt.stat
                      << "  p(chi2_1) " << rep.lrt.p_chi1 << "  p(mixture) " << rep.lrt.p_mixture
                      << "\n";
            std::cout << "\nper-individual treatment-effect predictions (b_hat, cond sd):\n";
            for (std::size_t i = 0; i < rep.random_effects.ids.size(); ++i) {
                std::cout << "  " << rep.random_effects.ids[i];
                for (Eigen::Index j = 0; j < rep.random_effects.b_hat[i].size(); ++j)
                    std::cout << "  " << rep.random_effects.b_hat[i][j] << " ("
                              << std::sqrt(rep.random_effects.cond_cov[i](j, j)) << ")";
                std::cout << "\n";
            }
            if (!out_path.empty()) {
                json j{{"full", fit_to_json(rep.full, &rep.ci_full)},
                       {"reduced", fit_to_json(rep.reduced, &rep.ci_reduced)},
                       {"lrt",
                        json{{"stat", rep.lrt.stat},
                             {"p_chi1", rep.lrt.p_chi1},
                             {"p_mixture", rep.lrt.p_mixture}}}};
                write_text_file(out_path, j.dump(2) + "\n");
            }
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
