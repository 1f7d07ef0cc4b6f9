#pragma once

#include <string>
#include <vector>

#include "mrtlmm/lmm.hpp"

namespace mrtlmm {

struct CoefInference {
    std::string name;
    double estimate;
    double se;
    double df;        // Satterthwaite
    double ci_low;
    double ci_high;
    double level;
    bool df_fallback = false; // non-PD information; df = N - p used instead
};

/// t intervals with Satterthwaite degrees of freedom. The variance-parameter
/// vector is (theta entries, sigma2_eps); gradients and the observed
/// information come from central finite differences of the fit's own
/// objective (relative step 1e-4).
std::vector<CoefInference> satterthwaite_ci(const FitResult& fr, const DesignBundle& bundle,
                                            double level = 0.95);

struct VarCompTest {
    double stat;       // -2 (reduced - full) log lik, clipped at 0
    double p_chi1;     // chi^2_1 upper tail
    double p_mixture;  // 0.5 chi^2_0 + 0.5 chi^2_1 boundary mixture
    double full_loglik;
    double reduced_loglik;
    Objective objective;
};

/// LRT for a variance component dropped from the full model. Under REML the
/// two fits must share the same fixed-effect design.
VarCompTest lrt_variance(const FitResult& full, const FitResult& reduced);

} // namespace mrtlmm
