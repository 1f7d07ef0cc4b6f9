#include "mrtlmm/inference.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "mrtlmm/errors.hpp"

namespace mrtlmm {

namespace {

constexpr double kRelStep = 1e-4;

// Variance-parameter vector for the Satterthwaite machinery: the free theta
// entries followed by sigma2_eps. When lambda was fixed at zero the only
// free parameter is sigma2_eps.
struct VarParamView {
    const ProfiledModel& pm;
    const FitResult& fr;
    bool theta_free;

    Eigen::Index dim() const { return (theta_free ? pm.theta_dim() : 0) + 1; }

    Eigen::VectorXd value() const {
        Eigen::VectorXd v(dim());
        if (theta_free) v.head(pm.theta_dim()) = fr.theta;
        v[dim() - 1] = fr.variance.sigma2_eps;
        return v;
    }

    double deviance(const Eigen::VectorXd& v) const {
        Eigen::VectorXd theta = theta_free ? v.head(pm.theta_dim()).eval() : fr.theta;
        return pm.deviance_at(theta, v[v.size() - 1], fr.objective);
    }

    double beta_variance(const Eigen::VectorXd& v, Eigen::Index j) const {
        Eigen::VectorXd theta = theta_free ? v.head(pm.theta_dim()).eval() : fr.theta;
        return v[v.size() - 1] * pm.unit_beta_variance(theta, j);
    }
};

double step_for(double x) { return kRelStep * std::max(std::abs(x), 1e-2); }

} // namespace

std::vector<CoefInference> satterthwaite_ci(const FitResult& fr, const DesignBundle& bundle,
                                            double level) {
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must be in (0,1)");

    ProfiledModel pm(bundle);
    const Eigen::Index p = pm.p();
    const double n_minus_p = static_cast<double>(pm.n_total() - p);

    VarParamView vp{pm, fr, !fr.lambda_fixed_zero};
    const Eigen::Index d = vp.dim();
    const Eigen::VectorXd v0 = vp.value();

    // observed information of the (RE)ML deviance: A = 2 H^-1
    Eigen::MatrixXd H(d, d);
    bool hess_ok = true;
    {
        const double f0 = vp.deviance(v0);
        std::vector<double> h(static_cast<std::size_t>(d));
        for (Eigen::Index i = 0; i < d; ++i) h[static_cast<std::size_t>(i)] = step_for(v0[i]);
        for (Eigen::Index i = 0; i < d && hess_ok; ++i) {
            const double hi = h[static_cast<std::size_t>(i)];
            Eigen::VectorXd vp_ = v0, vm = v0;
            vp_[i] += hi;
            vm[i] -= hi;
            const double fp = vp.deviance(vp_), fm = vp.deviance(vm);
            H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
            for (Eigen::Index j = i + 1; j < d; ++j) {
                const double hj = h[static_cast<std::size_t>(j)];
                Eigen::VectorXd vpp = v0, vpm = v0, vmp = v0, vmm = v0;
                vpp[i] += hi; vpp[j] += hj;
                vpm[i] += hi; vpm[j] -= hj;
                vmp[i] -= hi; vmp[j] += hj;
                vmm[i] -= hi; vmm[j] -= hj;
                H(i, j) = H(j, i) = (vp.deviance(vpp) - vp.deviance(vpm) - vp.deviance(vmp) +
                                     vp.deviance(vmm)) /
                                    (4.0 * hi * hj);
            }
            if (!H.row(i).allFinite()) hess_ok = false;
        }
    }

    Eigen::MatrixXd A;
    if (hess_ok) {
        Eigen::LLT<Eigen::MatrixXd> llt(H);
        if (llt.info() == Eigen::Success) {
            A = 2.0 * llt.solve(Eigen::MatrixXd::Identity(d, d));
        } else {
            hess_ok = false;
        }
    }

    std::vector<CoefInference> out;
    out.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) {
        CoefInference ci;
        ci.name = bundle.x_names[static_cast<std::size_t>(j)];
        ci.estimate = fr.beta[j];
        ci.level = level;
        const double var_j = fr.beta_cov(j, j);
        ci.se = std::sqrt(var_j);

        double df = n_minus_p;
        bool fallback = !hess_ok;
        if (hess_ok) {
            Eigen::VectorXd grad(d);
            for (Eigen::Index i = 0; i < d; ++i) {
                const double hi = step_for(v0[i]);
                Eigen::VectorXd vp_ = v0, vm = v0;
                vp_[i] += hi;
                vm[i] -= hi;
                grad[i] = (vp.beta_variance(vp_, j) - vp.beta_variance(vm, j)) / (2.0 * hi);
            }
            const double denom = grad.dot(A * grad);
            if (denom > 0.0 && std::isfinite(denom)) {
                df = 2.0 * var_j * var_j / denom;
            } else {
                fallback = true;
                df = n_minus_p;
            }
        }
        ci.df = df;
        ci.df_fallback = fallback;

        boost::math::students_t tdist(df);
        const double tq = boost::math::quantile(tdist, 0.5 * (1.0 + level));
        ci.ci_low = ci.estimate - tq * ci.se;
        ci.ci_high = ci.estimate + tq * ci.se;
        out.push_back(std::move(ci));
    }
    return out;
}

VarCompTest lrt_variance(const FitResult& full, const FitResult& reduced) {
    if (full.objective != reduced.objective)
        throw ValidationError("LRT requires both fits to use the same objective");
    if (full.objective == Objective::REML && full.x_names != reduced.x_names)
        throw ValidationError("REML likelihood-ratio comparison requires identical fixed-effect "
                              "designs");
    if (reduced.z_names.size() > full.z_names.size())
        throw ValidationError("reduced model must be nested in the full model");

    VarCompTest t;
    t.objective = full.objective;
    t.full_loglik = full.loglik;
    t.reduced_loglik = reduced.loglik;
    t.stat = std::max(0.0, -2.0 * (reduced.loglik - full.loglik));

    boost::math::chi_squared chi1(1.0);
    t.p_chi1 = t.stat > 0.0 ? boost::math::cdf(boost::math::complement(chi1, t.stat)) : 1.0;
    t.p_mixture = t.stat > 0.0 ? 0.5 * t.p_chi1 : 1.0;
    return t;
}

} // namespace mrtlmm
