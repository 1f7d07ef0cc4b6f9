#include "mrtlmm/simulate.hpp"

#include <cmath>
#include <random>

#include "mrtlmm/errors.hpp"
#include "mrtlmm/rng.hpp"

namespace mrtlmm {

GmParams GmParams::from_json(const nlohmann::json& j) {
    GmParams p;
    p.alpha0 = j.value("alpha0", p.alpha0);
    p.alpha1 = j.value("alpha1", p.alpha1);
    p.beta0 = j.value("beta0", p.beta0);
    p.beta1 = j.value("beta1", p.beta1);
    p.sigma2_b0 = j.value("sigma2_b0", p.sigma2_b0);
    p.sigma2_b1 = j.value("sigma2_b1", p.sigma2_b1);
    p.sigma2_b2 = j.value("sigma2_b2", p.sigma2_b2);
    p.sigma2_b3 = j.value("sigma2_b3", p.sigma2_b3);
    p.sigma2_eps = j.value("sigma2_eps", p.sigma2_eps);
    return p;
}

nlohmann::json GmParams::to_json() const {
    return nlohmann::json{{"alpha0", alpha0},       {"alpha1", alpha1},
                          {"beta0", beta0},         {"beta1", beta1},
                          {"sigma2_b0", sigma2_b0}, {"sigma2_b1", sigma2_b1},
                          {"sigma2_b2", sigma2_b2}, {"sigma2_b3", sigma2_b3},
                          {"sigma2_eps", sigma2_eps}};
}

void SimConfig::validate() const {
    if (gm < 1 || gm > 3) throw ValidationError("gm must be 1, 2 or 3");
    if (n < 1 || T < 1) throw ValidationError("n and T must be >= 1");
    if (params.sigma2_b0 < 0 || params.sigma2_b1 < 0 || params.sigma2_b2 < 0 ||
        params.sigma2_b3 < 0)
        throw ValidationError("random-effect variances must be nonnegative");
    if (!(params.sigma2_eps > 0)) throw ValidationError("sigma2_eps must be positive");
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
    SimConfig c;
    c.gm = j.value("gm", c.gm);
    c.n = j.value("n", c.n);
    c.T = j.value("T", c.T);
    c.seed = j.value("seed", c.seed);
    if (j.contains("params")) c.params = GmParams::from_json(j.at("params"));
    c.validate();
    return c;
}

nlohmann::json SimConfig::to_json() const {
    return nlohmann::json{
        {"gm", gm}, {"n", n}, {"T", T}, {"seed", seed}, {"params", params.to_json()}};
}

namespace {
constexpr double kGm2Cutoff = -1.27;
}

LongitudinalDataset simulate_gm(const SimConfig& cfg) {
    cfg.validate();
    const GmParams& p = cfg.params;
    const bool gm2 = cfg.gm == 2;
    const bool gm3 = cfg.gm == 3;

    LongitudinalDataset data;
    data.covariate_names = {"x"};
    data.has_treatment = true;
    data.has_prob = true;
    data.individuals.reserve(static_cast<std::size_t>(cfg.n));

    for (int i = 0; i < cfg.n; ++i) {
        SplitMix64 g(substream_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> stdnorm(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        const double b0 = std::sqrt(p.sigma2_b0) * stdnorm(g);
        const double b1 = gm2 ? std::sqrt(p.sigma2_b1) * stdnorm(g) : 0.0;
        const double b2 = std::sqrt(p.sigma2_b2) * stdnorm(g);
        const double b3 = gm2 ? std::sqrt(p.sigma2_b3) * stdnorm(g) : 0.0;
        const double cov_shift = gm3 ? b0 : 0.0;

        IndividualSeries s;
        s.id = "i" + std::to_string(i + 1);
        s.time.resize(static_cast<std::size_t>(cfg.T));
        s.covariates.resize(cfg.T, 1);
        s.outcome.resize(cfg.T);
        s.treatment.resize(static_cast<std::size_t>(cfg.T));
        s.prob.resize(static_cast<std::size_t>(cfg.T));

        double x = cov_shift + stdnorm(g); // X_1
        for (int t = 0; t < cfg.T; ++t) {
            const double pt = gm2 ? (x > kGm2Cutoff ? 0.7 : 0.3) : 0.5;
            const int a = unif(g) < pt ? 1 : 0;
            const double eps = std::sqrt(p.sigma2_eps) * stdnorm(g);
            const double y = p.alpha0 + p.alpha1 * x + b0 + b1 * x +
                             a * (p.beta0 + p.beta1 * x + b2 + b3 * x) + eps;
            s.time[static_cast<std::size_t>(t)] = t + 1;
            s.covariates(t, 0) = x;
            s.treatment[static_cast<std::size_t>(t)] = a;
            s.prob[static_cast<std::size_t>(t)] = pt;
            s.outcome[t] = y;
            x = y + cov_shift + stdnorm(g); // X_{t+1} lags the outcome
        }
        data.individuals.push_back(std::move(s));
    }
    return data;
}

HeartstepsCoefs HeartstepsCoefs::from_json(const nlohmann::json& j) {
    HeartstepsCoefs c;
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::array<double, 4>>();
    if (j.contains("alpha_avail")) c.alpha_avail = j.at("alpha_avail").get<std::array<double, 4>>();
    if (j.contains("beta")) c.beta = j.at("beta").get<std::array<double, 3>>();
    c.sigma2_b0 = j.value("sigma2_b0", c.sigma2_b0);
    c.sigma2_b1 = j.value("sigma2_b1", c.sigma2_b1);
    c.corr_b = j.value("corr_b", c.corr_b);
    c.sigma2_eps = j.value("sigma2_eps", c.sigma2_eps);
    return c;
}

nlohmann::json HeartstepsCoefs::to_json() const {
    return nlohmann::json{{"alpha", alpha},         {"alpha_avail", alpha_avail},
                          {"beta", beta},           {"sigma2_b0", sigma2_b0},
                          {"sigma2_b1", sigma2_b1}, {"corr_b", corr_b},
                          {"sigma2_eps", sigma2_eps}};
}

LongitudinalDataset simulate_heartsteps_like(int n, int T, const HeartstepsCoefs& coefs,
                                             double avail_rate, std::uint64_t seed) {
    if (n < 1 || T < 1) throw ValidationError("n and T must be >= 1");
    if (!(avail_rate > 0.0 && avail_rate <= 1.0))
        throw ValidationError("avail_rate must be in (0,1]");
    if (std::abs(coefs.corr_b) > 1.0) throw ValidationError("corr_b must be in [-1,1]");

    LongitudinalDataset data;
    data.covariate_names = {"day", "homework", "logstep_pre"};
    data.has_treatment = true;
    data.has_availability = true;
    data.has_prob = true;

    const double sd_b0 = std::sqrt(coefs.sigma2_b0);
    const double sd_b1 = std::sqrt(coefs.sigma2_b1);
    const double r = coefs.corr_b;

    for (int i = 0; i < n; ++i) {
        SplitMix64 g(substream_seed(seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> stdnorm(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        const double z1 = stdnorm(g), z2 = stdnorm(g);
        const double b0 = sd_b0 * z1;
        const double b1 = sd_b1 * (r * z1 + std::sqrt(std::max(0.0, 1.0 - r * r)) * z2);

        IndividualSeries s;
        s.id = "i" + std::to_string(i + 1);
        s.time.resize(static_cast<std::size_t>(T));
        s.covariates.resize(T, 3);
        s.outcome.resize(T);
        s.availability.resize(static_cast<std::size_t>(T));
        s.treatment.resize(static_cast<std::size_t>(T));
        s.prob.resize(static_cast<std::size_t>(T));

        double logstep = 2.0 + stdnorm(g);
        for (int t = 0; t < T; ++t) {
            const double day = static_cast<double>(t);
            const double hw = unif(g) < 0.5 ? 1.0 : 0.0;
            const int avail = unif(g) < avail_rate ? 1 : 0;
            const int a = (avail == 1 && unif(g) < 0.6) ? 1 : 0;
            const double eps = std::sqrt(coefs.sigma2_eps) * stdnorm(g);
            double y = coefs.alpha[0] + coefs.alpha[1] * day + coefs.alpha[2] * hw +
                       coefs.alpha[3] * logstep + b0;
            if (avail == 1)
                y += coefs.alpha_avail[0] + coefs.alpha_avail[1] * day +
                     coefs.alpha_avail[2] * hw + coefs.alpha_avail[3] * logstep;
            if (a == 1) y += coefs.beta[0] + coefs.beta[1] * day + coefs.beta[2] * hw + b1;
            y += eps;

            s.time[static_cast<std::size_t>(t)] = t + 1;
            s.covariates(t, 0) = day;
            s.covariates(t, 1) = hw;
            s.covariates(t, 2) = logstep;
            s.availability[static_cast<std::size_t>(t)] = avail;
            s.treatment[static_cast<std::size_t>(t)] = a;
            s.prob[static_cast<std::size_t>(t)] = 0.6;
            s.outcome[t] = y;

            // prior-30-min step count for the next slot trails today's outcome
            logstep = 0.3 * y + 0.4 * logstep + stdnorm(g);
        }
        data.individuals.push_back(std::move(s));
    }
    return data;
}

} // namespace mrtlmm
