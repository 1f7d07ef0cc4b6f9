#include "mrtlmm/replicate.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "mrtlmm/errors.hpp"
#include "mrtlmm/rng.hpp"

namespace mrtlmm {

ModelSpec gm_model_spec(int gm) {
    ModelSpec spec;
    spec.fixed_main = {"1", "x"};
    spec.fixed_trt = {"1", "x"};
    if (gm == 2) {
        spec.random_main = {"1", "x"};
        spec.random_trt = {"1", "x"};
    } else {
        spec.random_main = {"1"};
        spec.random_trt = {"1"};
    }
    // GM1/GM2 generate independent random effects and the analysis imposes
    // that structure. GM3's covariate process is driven by the random
    // intercept, which couples the effects; its analysis model leaves G
    // unstructured (the usual default when nothing is known about G).
    spec.diagonal_g = gm != 3;
    return spec;
}

namespace {

// Generating value behind each fixed-effect column of the GM fit.
double fixed_truth(const std::string& name, const GmParams& p) {
    if (name == "1") return p.alpha0;
    if (name == "x") return p.alpha1;
    if (name == "trt:1") return p.beta0;
    if (name == "trt:x") return p.beta1;
    return std::numeric_limits<double>::quiet_NaN();
}

double variance_truth(const std::string& name, const GmParams& p) {
    if (name == "1") return p.sigma2_b0;
    if (name == "x") return p.sigma2_b1;
    if (name == "trt:1") return p.sigma2_b2;
    if (name == "trt:x") return p.sigma2_b3;
    if (name == "sigma2_eps") return p.sigma2_eps;
    return std::numeric_limits<double>::quiet_NaN();
}

struct Moments {
    double mean, sd;
};

Moments moments(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

} // namespace

ReplicationReport run_replication(const SimConfig& cfg, const ModelSpec& spec, int reps,
                                  const ReplicationOptions& opts) {
    if (reps < 2) throw ValidationError("need at least 2 replicates");
    cfg.validate();

    // probe one replicate to size the result arrays
    const DesignBundle probe = build_design(simulate_gm(cfg), spec);
    const std::size_t p = static_cast<std::size_t>(probe.p());
    const std::size_t q = static_cast<std::size_t>(probe.q());

    struct RepResult {
        bool ok = false;
        std::vector<double> beta;      // p
        std::vector<int> covered;      // p
        std::vector<double> varcomp;   // q + 1 (sigma2_eps last)
    };
    std::vector<RepResult> results(static_cast<std::size_t>(reps));

    auto run_one = [&](int r) {
        RepResult& out = results[static_cast<std::size_t>(r)];
        try {
            SimConfig rc = cfg;
            rc.seed = substream_seed(cfg.seed, static_cast<std::uint64_t>(r));
            const DesignBundle bundle = build_design(simulate_gm(rc), spec);
            const FitResult fr = fit(bundle, opts.objective);
            if (!fr.converged) return;
            const auto cis = satterthwaite_ci(fr, bundle, opts.level);
            out.beta.resize(p);
            out.covered.resize(p);
            for (std::size_t j = 0; j < p; ++j) {
                out.beta[j] = fr.beta[static_cast<Eigen::Index>(j)];
                const double truth = fixed_truth(bundle.x_names[j], cfg.params);
                out.covered[j] = (cis[j].ci_low <= truth && truth <= cis[j].ci_high) ? 1 : 0;
            }
            out.varcomp.resize(q + 1);
            for (std::size_t j = 0; j < q; ++j)
                out.varcomp[j] = fr.G_hat(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
            out.varcomp[q] = fr.variance.sigma2_eps;
            out.ok = true;
        } catch (const Error&) {
            out.ok = false; // counted as non-converged
        }
    };

    const int workers = std::max(1, opts.workers);
    if (workers == 1) {
        for (int r = 0; r < reps; ++r) run_one(r);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) run_one(r);
            });
        for (auto& t : pool) t.join();
    }

    ReplicationReport report;
    report.config = cfg;
    report.level = opts.level;
    report.n_requested = reps;
    for (const auto& r : results)
        r.ok ? ++report.n_used : ++report.n_nonconverged;
    if (report.n_used < 2) throw NumericError("fewer than 2 converged replicates");

    for (std::size_t j = 0; j < p; ++j) {
        std::vector<double> est;
        est.reserve(static_cast<std::size_t>(report.n_used));
        long covered = 0;
        for (const auto& r : results) {
            if (!r.ok) continue;
            est.push_back(r.beta[j]);
            covered += r.covered[j];
        }
        const auto m = moments(est);
        const double truth = fixed_truth(probe.x_names[j], cfg.params);
        report.fixed.push_back({probe.x_names[j], truth, m.mean - truth, m.sd,
                                static_cast<double>(covered) / static_cast<double>(report.n_used)});
    }
    for (std::size_t j = 0; j <= q; ++j) {
        std::vector<double> est;
        est.reserve(static_cast<std::size_t>(report.n_used));
        for (const auto& r : results)
            if (r.ok) est.push_back(r.varcomp[j]);
        const auto m = moments(est);
        const std::string name = j < q ? probe.z_names[j] : "sigma2_eps";
        const double truth = variance_truth(name, cfg.params);
        report.variance.push_back(
            {name, truth, m.mean - truth, m.sd, std::numeric_limits<double>::quiet_NaN()});
    }
    return report;
}

MarginalOracleResult marginal_oracle(double beta0, double beta1, double s2u, double s2x1,
                                     double s2eps, long mc_n, std::uint64_t seed) {
    if (mc_n < 10000) throw ValidationError("mc_n must be at least 10^4");
    if (s2u < 0 || s2x1 < 0 || !(s2eps > 0))
        throw ValidationError("variances must be nonnegative and sigma2_eps positive");

    SplitMix64 g(seed);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    const double sd_u = std::sqrt(s2u), sd_x1 = std::sqrt(s2x1), sd_e = std::sqrt(s2eps);

    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (long k = 0; k < mc_n; ++k) {
        const double b = sd_u * stdnorm(g);
        const double x1 = sd_x1 * stdnorm(g);
        const double y2 = beta0 + beta1 * x1 + b + sd_e * stdnorm(g);
        const double x2 = y2;
        const double y3 = beta0 + beta1 * x2 + b + sd_e * stdnorm(g);
        sx += x2;
        sy += y3;
        sxx += x2 * x2;
        sxy += x2 * y3;
        syy += y3 * y3;
    }
    const double n = static_cast<double>(mc_n);
    const double xbar = sx / n, ybar = sy / n;
    const double Sxx = sxx - n * xbar * xbar;
    const double Sxy = sxy - n * xbar * ybar;
    const double Syy = syy - n * ybar * ybar;

    MarginalOracleResult r;
    r.beta0 = beta0;
    r.beta1 = beta1;
    r.mc_n = mc_n;
    r.marginal_slope = Sxy / Sxx;
    r.marginal_intercept = ybar - r.marginal_slope * xbar;
    const double s2 = (Syy - r.marginal_slope * Sxy) / (n - 2.0);
    r.slope_se = std::sqrt(s2 / Sxx);
    r.intercept_se = std::sqrt(s2 * (1.0 / n + xbar * xbar / Sxx));

    // joint-Gaussian conditional-expectation algebra
    const double var_y2 = beta1 * beta1 * s2x1 + s2u + s2eps;
    const double shrink = s2u / var_y2;
    r.closed_form_slope = beta1 + shrink;
    r.closed_form_intercept = beta0 * (1.0 - shrink);

    // the alternative printed closed form, reported for comparison
    const double rho = s2u / (s2u + s2eps);
    const double zeta = beta1 * s2x1 / (beta1 * s2x1 + s2u + s2eps);
    r.printed_form_slope = (1.0 - rho * zeta) * beta1 + rho;
    r.printed_form_intercept = (1.0 - rho * zeta - rho) * beta0;
    return r;
}

FccmDemoResult fccm_bias_demo(int n, int T, int reps, std::uint64_t seed,
                              const ReplicationOptions& opts) {
    FccmDemoResult out;
    SimConfig cfg;
    cfg.n = n;
    cfg.T = T;

    cfg.gm = 1;
    cfg.seed = substream_seed(seed, 1);
    out.gm1 = run_replication(cfg, gm_model_spec(1), reps, opts);

    cfg.gm = 3;
    cfg.seed = substream_seed(seed, 2);
    out.gm3 = run_replication(cfg, gm_model_spec(3), reps, opts);
    return out;
}

AnalysisReport analyze(const LongitudinalDataset& data, const ModelSpec& spec, Objective obj,
                       double level) {
    if (spec.random_trt.empty())
        throw ValidationError("analyze compares fits with and without the treatment random "
                              "slope; spec.random_trt must be non-empty");
    if (spec.random_main.empty())
        throw ValidationError("analyze requires at least one main random-effect term");

    ModelSpec reduced_spec = spec;
    reduced_spec.random_trt.clear();

    const DesignBundle full_bundle = build_design(data, spec);
    const DesignBundle reduced_bundle = build_design(data, reduced_spec);

    AnalysisReport rep;
    rep.full = fit(full_bundle, obj);
    rep.reduced = fit(reduced_bundle, obj);
    rep.ci_full = satterthwaite_ci(rep.full, full_bundle, level);
    rep.ci_reduced = satterthwaite_ci(rep.reduced, reduced_bundle, level);
    rep.lrt = lrt_variance(rep.full, rep.reduced);
    rep.random_effects = predict_random_effects(full_bundle, rep.full);
    rep.ids = rep.random_effects.ids;
    return rep;
}

} // namespace mrtlmm
