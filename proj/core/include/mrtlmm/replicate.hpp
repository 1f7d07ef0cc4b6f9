#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrtlmm/inference.hpp"
#include "mrtlmm/lmm.hpp"
#include "mrtlmm/simulate.hpp"

namespace mrtlmm {

struct ParamSummary {
    std::string name;
    double truth;
    double bias;
    double sd;
    double coverage; // NaN for variance components (no interval is built)
};

struct ReplicationReport {
    std::vector<ParamSummary> fixed;
    std::vector<ParamSummary> variance;
    int n_requested = 0;
    int n_used = 0;           // converged replicates entering the summaries
    int n_nonconverged = 0;
    double level = 0.95;
    SimConfig config;
};

struct ReplicationOptions {
    double level = 0.95;
    int workers = 1;
    Objective objective = Objective::REML;
};

/// Simulate/fit/summarize loop. Per-replicate seeds are substreams of
/// cfg.seed, estimates are stored per replicate index and aggregated in
/// index order, so the report is identical for any worker count.
ReplicationReport run_replication(const SimConfig& cfg, const ModelSpec& spec, int reps,
                                  const ReplicationOptions& opts = {});

/// The fitted model the replication studies use for a given GM.
ModelSpec gm_model_spec(int gm);

struct MarginalOracleResult {
    double beta0, beta1;           // generating conditional coefficients
    double marginal_intercept, intercept_se;
    double marginal_slope, slope_se;
    double closed_form_slope;      // joint-Gaussian algebra
    double closed_form_intercept;
    double printed_form_slope;     // the alternative printed closed form
    double printed_form_intercept;
    long mc_n;
};

/// Two-timepoint endogenous-covariate model: b ~ N(0, s2u), X1 ~ N(0, s2x1),
/// Y2 = b0 + b1 X1 + b + e2, X2 = Y2, Y3 = b0 + b1 X2 + b + e3. The marginal
/// relationship E(Y3 | X2) is estimated by Monte-Carlo least squares; both
/// closed forms are reported alongside for comparison.
MarginalOracleResult marginal_oracle(double beta0, double beta1, double s2u, double s2x1,
                                     double s2eps, long mc_n, std::uint64_t seed);

struct FccmDemoResult {
    ReplicationReport gm1;
    ReplicationReport gm3;
};

/// Side-by-side GM1 vs GM3 bias contrast at identical (n, T, reps).
FccmDemoResult fccm_bias_demo(int n, int T, int reps, std::uint64_t seed,
                              const ReplicationOptions& opts = {});

struct AnalysisReport {
    FitResult full;                 // with the treatment random slope
    FitResult reduced;              // without it
    std::vector<CoefInference> ci_full;
    std::vector<CoefInference> ci_reduced;
    VarCompTest lrt;
    RandomEffectsPrediction random_effects; // from the full fit
    std::vector<std::string> ids;
};

/// Full data-analysis workflow: fit with and without the treatment random
/// slope, interval table, boundary LRT, per-individual predictions.
AnalysisReport analyze(const LongitudinalDataset& data, const ModelSpec& spec,
                       Objective obj = Objective::REML, double level = 0.95);

} // namespace mrtlmm
