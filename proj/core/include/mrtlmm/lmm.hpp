#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mrtlmm/design.hpp"

namespace mrtlmm {

enum class Objective { ML, REML };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

/// Variance components in relative-Cholesky form: G = sigma2_eps * lambda * lambda^T.
struct VarianceParams {
    Eigen::MatrixXd lambda; // q x q lower triangular, nonnegative diagonal
    double sigma2_eps = 1.0;

    Eigen::MatrixXd G() const { return sigma2_eps * lambda * lambda.transpose(); }
};

/// Marginal outcome covariance for one individual: V = Z G Z^T + sigma2_eps I.
Eigen::MatrixXd marginal_covariance(const Eigen::MatrixXd& Z, const VarianceParams& vp);

struct GlsResult {
    Eigen::VectorXd beta;
    Eigen::MatrixXd beta_cov; // (sum_i X_i' V_i^-1 X_i)^-1
};

GlsResult gls_fixed_effects(const DesignBundle& bundle, const VarianceParams& vp);

/// -2 log of the stacked multivariate-normal density at explicit parameters.
/// Evaluated per individual from a dense Cholesky of V_i; independent of the
/// profiled evaluation path and used as its oracle.
double direct_deviance(const DesignBundle& bundle, const Eigen::VectorXd& beta,
                       const VarianceParams& vp);

/// Deviance value returned when a theta point is numerically pathological.
inline constexpr double kDevianceSentinel = 1e10;

/// Profiled-deviance evaluator. Caches per-individual cross products
/// (X'X, X'Z, Z'Z, X'y, Z'y, y'y) so each theta evaluation costs
/// O(q^3 + p q^2 + p^2 q) per individual via the Woodbury identity on
/// W_i = I + Z_i Lambda Lambda' Z_i'.
class ProfiledModel {
public:
    explicit ProfiledModel(const DesignBundle& bundle);

    struct Eval {
        double deviance;          // profiled over beta and sigma2_eps
        Eigen::VectorXd beta;
        Eigen::MatrixXd beta_cov_unit; // (sum X'W^-1 X)^-1; multiply by sigma2
        double sigma2;            // profiled residual variance
        double rss_w;             // weighted residual sum of squares
        double logdet_w;          // sum_i log|W_i|
        double logdet_xwx;        // log|sum X'W^-1 X|
    };

    /// theta packs the free entries of lambda: the diagonal when the bundle
    /// requests diagonal G, otherwise the lower triangle column-major.
    Eigen::Index theta_dim() const;
    Eigen::MatrixXd lambda_from_theta(const Eigen::VectorXd& theta) const;
    Eigen::VectorXd theta_from_lambda(const Eigen::MatrixXd& lambda) const;

    Eval eval(const Eigen::VectorXd& theta, Objective obj) const;

    /// Deviance with beta profiled but sigma2 free; the Satterthwaite
    /// machinery differentiates this in (theta, sigma2).
    double deviance_at(const Eigen::VectorXd& theta, double sigma2, Objective obj) const;

    /// [M(theta)^-1]_jj with M = sum_i X_i' W_i^-1 X_i; Var(beta_j) = sigma2 * this.
    double unit_beta_variance(const Eigen::VectorXd& theta, Eigen::Index j) const;

    Eigen::Index p() const { return p_; }
    Eigen::Index q() const { return q_; }
    Eigen::Index n_total() const { return n_total_; }
    const DesignBundle& bundle() const { return *bundle_; }

    struct Core {
        Eigen::MatrixXd M;    // sum X'W^-1 X
        Eigen::VectorXd v;    // sum X'W^-1 y
        double syy;           // sum y'W^-1 y
        double logdet_w;
        bool ok;
    };
    Core assemble(const Eigen::MatrixXd& lambda) const;

private:
    struct GroupStats {
        Eigen::Index n;
        Eigen::MatrixXd XtX, XtZ, ZtZ;
        Eigen::VectorXd Xty, Zty;
        double yty;
        bool dense = false; // extreme data scale: use the QR path in data space
    };

    const DesignBundle* bundle_;
    std::vector<GroupStats> stats_;
    Eigen::Index p_, q_, n_total_;
    bool diagonal_;
};

double profiled_deviance(const Eigen::VectorXd& theta, const DesignBundle& bundle,
                         Objective obj);

struct FitOptions {
    double tol_deviance = 1e-8;    // absolute
    double tol_param = 1e-8;       // relative
    int max_evals = 5000;          // total across starts
    int multistarts = 5;
    std::uint64_t jitter_seed = 0x5eedULL;
    bool fix_lambda_zero = false;  // pure fixed-effects mode (no optimization)
    bool keep_trace = false;
};

struct FitResult {
    Eigen::VectorXd beta;
    VarianceParams variance;
    Eigen::MatrixXd G_hat;         // sigma2_eps * lambda * lambda'
    double loglik;                 // -deviance/2 (ML loglik or REML criterion)
    double deviance;
    Eigen::MatrixXd beta_cov;
    Objective objective;
    bool converged;
    int n_evals;
    std::vector<double> optimizer_trace;

    Eigen::VectorXd theta;
    std::vector<std::string> x_names, z_names;
    bool diagonal_g = false;
    bool lambda_fixed_zero = false;
};

FitResult fit(const DesignBundle& bundle, Objective obj, const FitOptions& opts = {});

struct RandomEffectsPrediction {
    std::vector<std::string> ids;
    std::vector<Eigen::VectorXd> b_hat;     // per individual, q
    std::vector<Eigen::MatrixXd> cond_cov;  // G - G Z' V^-1 Z G
};

RandomEffectsPrediction predict_random_effects(const DesignBundle& bundle, const FitResult& fr);

} // namespace mrtlmm
