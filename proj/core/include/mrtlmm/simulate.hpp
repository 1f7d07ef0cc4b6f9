#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "mrtlmm/dataset.hpp"

namespace mrtlmm {

/// Generative-model parameters. sigma2_b0/sigma2_b1 are the variances of the
/// main-effect random intercept/slope, sigma2_b2/sigma2_b3 of the treatment
/// random intercept/slope.
struct GmParams {
    double alpha0 = -2.0;
    double alpha1 = -0.3;
    double beta0 = 1.0;
    double beta1 = 0.3;
    double sigma2_b0 = 4.0;
    double sigma2_b1 = 0.25;
    double sigma2_b2 = 1.0;
    double sigma2_b3 = 0.25;
    double sigma2_eps = 1.0;

    static GmParams from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct SimConfig {
    int gm = 1;               // 1, 2 or 3
    int n = 30;               // individuals
    int T = 10;               // time points per individual
    std::uint64_t seed = 1;
    GmParams params;

    void validate() const;
    static SimConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Simulates one dataset under generative model cfg.gm:
///   GM1: random intercept + random treatment intercept; X_t lags the outcome;
///        constant randomization probability 1/2.
///   GM2: adds random slopes in X for both blocks; randomization probability
///        0.7 when X_t > -1.27 and 0.3 otherwise.
///   GM3: as GM1 but the covariate noise is centered at b_0 (the covariate
///        depends on the random effect directly).
/// Covariate column name is "x". Deterministic in (seed), with a per-individual
/// substream so parallel generation cannot change the output.
LongitudinalDataset simulate_gm(const SimConfig& cfg);

/// Coefficients for the availability-gated treatment-effect model used by the
/// synthetic HeartSteps-like generator.
struct HeartstepsCoefs {
    std::array<double, 4> alpha{1.997, -0.009, 0.840, 0.537};       // 1, day, homework, logstep_pre
    std::array<double, 4> alpha_avail{-0.182, 0.008, -0.863, -0.154};
    std::array<double, 3> beta{0.410, -0.017, 0.130};               // 1, day, homework
    double sigma2_b0 = 0.182;
    double sigma2_b1 = 0.0;
    double corr_b = 0.0;
    double sigma2_eps = 7.139;

    static HeartstepsCoefs from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Availability ~ Bernoulli(avail_rate); treatment ~ Bernoulli(0.6) gated by
/// availability. Covariates: "day" (0-based index), "homework" (Bernoulli 1/2),
/// "logstep_pre" (lag-correlated noise seeded by the prior outcome).
LongitudinalDataset simulate_heartsteps_like(int n, int T, const HeartstepsCoefs& coefs,
                                             double avail_rate, std::uint64_t seed);

} // namespace mrtlmm
