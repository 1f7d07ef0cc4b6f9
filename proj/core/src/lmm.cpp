#include "mrtlmm/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "mrtlmm/errors.hpp"
#include "mrtlmm/rng.hpp"

namespace mrtlmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Above this magnitude of raw data, the cross-product shortcut loses too many
// digits (y'W^-1 y and the residual sum differ by ~|data|^2); such groups are
// handled through a QR reduction in data space instead.
constexpr double kDenseDataThreshold = 1e4;

// Cholesky of M after symmetric diagonal equilibration, so that solves and
// log-determinants survive wildly different column scales.
struct ScaledSpd {
    Eigen::VectorXd d; // sqrt(diag(M))
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool ok = false;

    explicit ScaledSpd(const Eigen::MatrixXd& M) {
        const Eigen::Index p = M.rows();
        d = M.diagonal().cwiseMax(0.0).cwiseSqrt();
        for (Eigen::Index j = 0; j < p; ++j)
            if (!(d[j] > 0.0)) return;
        const Eigen::MatrixXd Mn =
            d.cwiseInverse().asDiagonal() * M * d.cwiseInverse().asDiagonal();
        llt.compute(Mn);
        ok = llt.info() == Eigen::Success;
    }

    double logdet() const {
        return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum() +
               2.0 * d.array().log().sum();
    }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        return d.cwiseInverse().asDiagonal() *
               llt.solve(Eigen::VectorXd(d.cwiseInverse().asDiagonal() * b));
    }
    Eigen::MatrixXd inverse() const {
        const Eigen::Index p = d.size();
        const Eigen::MatrixXd Mn_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
        return d.cwiseInverse().asDiagonal() * Mn_inv * d.cwiseInverse().asDiagonal();
    }
};

} // namespace

std::string to_string(Objective o) { return o == Objective::ML ? "ML" : "REML"; }

Objective objective_from_string(const std::string& s) {
    if (s == "ml" || s == "ML") return Objective::ML;
    if (s == "reml" || s == "REML") return Objective::REML;
    throw ValidationError("unknown objective '" + s + "' (expected ml or reml)");
}

Eigen::MatrixXd marginal_covariance(const Eigen::MatrixXd& Z, const VarianceParams& vp) {
    if (!(vp.sigma2_eps > 0.0)) throw ValidationError("sigma2_eps must be positive");
    if (vp.lambda.rows() != Z.cols() || vp.lambda.cols() != Z.cols())
        throw ValidationError("lambda dimension does not match Z columns");
    const Eigen::Index n = Z.rows();
    Eigen::MatrixXd V = Z * vp.G() * Z.transpose();
    V.diagonal().array() += vp.sigma2_eps;
    return 0.5 * (V + V.transpose());
}

double direct_deviance(const DesignBundle& bundle, const Eigen::VectorXd& beta,
                       const VarianceParams& vp) {
    double dev = 0.0;
    const Eigen::MatrixXd G = vp.G();
    for (const auto& g : bundle.groups) {
        const Eigen::Index n = g.y.size();
        Eigen::MatrixXd V = g.Z * G * g.Z.transpose();
        V.diagonal().array() += vp.sigma2_eps;
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success) {
            // boundary theta values can make V numerically singular
            V.diagonal().array() += 1e-10 * V.trace() / static_cast<double>(n);
            llt.compute(V);
            if (llt.info() != Eigen::Success)
                throw NumericError("marginal covariance not positive definite for individual '" +
                                   g.id + "'");
        }
        const Eigen::VectorXd r = g.y - g.X * beta;
        const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        dev += logdet + r.dot(llt.solve(r)) + static_cast<double>(n) * kLog2Pi;
    }
    return dev;
}

// ---------------------------------------------------------------------------
// ProfiledModel

ProfiledModel::ProfiledModel(const DesignBundle& bundle)
    : bundle_(&bundle), p_(bundle.p()), q_(bundle.q()), diagonal_(bundle.diagonal_g) {
    if (q_ < 1) throw ValidationError("profiled deviance requires at least one random-effect term");
    n_total_ = 0;
    stats_.reserve(bundle.groups.size());
    for (const auto& g : bundle.groups) {
        GroupStats s;
        s.n = g.y.size();
        const double scale =
            std::max({g.X.size() ? g.X.cwiseAbs().maxCoeff() : 0.0,
                      g.Z.cwiseAbs().maxCoeff(), g.y.cwiseAbs().maxCoeff()});
        s.dense = scale > kDenseDataThreshold;
        if (!s.dense) {
            s.XtX = g.X.transpose() * g.X;
            s.XtZ = g.X.transpose() * g.Z;
            s.ZtZ = g.Z.transpose() * g.Z;
            s.Xty = g.X.transpose() * g.y;
            s.Zty = g.Z.transpose() * g.y;
            s.yty = g.y.squaredNorm();
        }
        n_total_ += s.n;
        stats_.push_back(std::move(s));
    }
}

Eigen::Index ProfiledModel::theta_dim() const {
    return diagonal_ ? q_ : q_ * (q_ + 1) / 2;
}

Eigen::MatrixXd ProfiledModel::lambda_from_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != theta_dim()) throw ValidationError("theta has wrong length");
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q_, q_);
    if (diagonal_) {
        L.diagonal() = theta;
    } else {
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < q_; ++j)
            for (Eigen::Index i = j; i < q_; ++i) L(i, j) = theta[k++];
    }
    return L;
}

Eigen::VectorXd ProfiledModel::theta_from_lambda(const Eigen::MatrixXd& lambda) const {
    Eigen::VectorXd theta(theta_dim());
    if (diagonal_) {
        theta = lambda.diagonal();
    } else {
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < q_; ++j)
            for (Eigen::Index i = j; i < q_; ++i) theta[k++] = lambda(i, j);
    }
    return theta;
}

ProfiledModel::Core ProfiledModel::assemble(const Eigen::MatrixXd& lambda) const {
    Core c;
    c.M = Eigen::MatrixXd::Zero(p_, p_);
    c.v = Eigen::VectorXd::Zero(p_);
    c.syy = 0.0;
    c.logdet_w = 0.0;
    c.ok = true;

    Eigen::MatrixXd K(q_, q_), B(p_, q_);
    Eigen::VectorXd a(q_);
    for (std::size_t gi = 0; gi < stats_.size(); ++gi) {
        const auto& s = stats_[gi];
        if (s.dense) {
            // QR reduction of the penalized least-squares system in data
            // space: with A = [Z lambda; I], the projector complement
            // I - Q1 Q1' maps [X; 0] and [y; 0] onto the whitened problem,
            // and |K| = |R|^2. Keeps everything at residual scale even when
            // the raw covariates are astronomically large.
            const auto& g = bundle_->groups[gi];
            const Eigen::Index n = g.y.size();
            Eigen::MatrixXd A(n + q_, q_);
            A.topRows(n).noalias() = g.Z * lambda;
            A.bottomRows(q_).setIdentity();
            const Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
            const Eigen::MatrixXd R =
                qr.matrixQR().topRows(q_).triangularView<Eigen::Upper>();
            c.logdet_w += 2.0 * R.diagonal().array().abs().log().sum();
            Eigen::MatrixXd Q1 = Eigen::MatrixXd::Identity(n + q_, q_);
            Q1.applyOnTheLeft(qr.householderQ());
            Eigen::MatrixXd Xa = Eigen::MatrixXd::Zero(n + q_, p_);
            Xa.topRows(n) = g.X;
            Eigen::VectorXd ya = Eigen::VectorXd::Zero(n + q_);
            ya.head(n) = g.y;
            Xa.noalias() -= Q1 * (Q1.transpose() * Xa).eval();
            ya.noalias() -= Q1 * (Q1.transpose() * ya).eval();
            c.M.noalias() += Xa.transpose() * Xa;
            c.v.noalias() += Xa.transpose() * ya;
            c.syy += ya.squaredNorm();
            continue;
        }
        K.noalias() = lambda.transpose() * s.ZtZ * lambda;
        K.diagonal().array() += 1.0;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) {
            c.ok = false;
            return c;
        }
        c.logdet_w += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        B.noalias() = s.XtZ * lambda;
        a.noalias() = lambda.transpose() * s.Zty;
        const Eigen::MatrixXd KinvBt = llt.solve(B.transpose());
        const Eigen::VectorXd Kinva = llt.solve(a);
        c.M.noalias() += s.XtX;
        c.M.noalias() -= B * KinvBt;
        c.v.noalias() += s.Xty;
        c.v.noalias() -= B * Kinva;
        c.syy += s.yty - a.dot(Kinva);
    }
    if (!c.M.allFinite() || !c.v.allFinite() || !std::isfinite(c.syy)) c.ok = false;
    return c;
}

ProfiledModel::Eval ProfiledModel::eval(const Eigen::VectorXd& theta, Objective obj) const {
    Eval e;
    e.deviance = kDevianceSentinel;
    const auto core = assemble(lambda_from_theta(theta));
    if (!core.ok) return e;

    const ScaledSpd spd(core.M);
    if (!spd.ok) return e;
    e.beta = spd.solve(core.v);
    e.beta_cov_unit = spd.inverse();
    e.logdet_w = core.logdet_w;
    e.logdet_xwx = spd.logdet();
    e.rss_w = std::max(
        core.syy - 2.0 * e.beta.dot(core.v) + e.beta.dot(core.M * e.beta), 1e-300);

    const double N = static_cast<double>(n_total_);
    const double p = static_cast<double>(p_);
    if (obj == Objective::ML) {
        e.sigma2 = e.rss_w / N;
        e.deviance = core.logdet_w + N * std::log(e.sigma2) + N * (1.0 + kLog2Pi);
    } else {
        if (n_total_ <= p_) return e;
        e.sigma2 = e.rss_w / (N - p);
        e.deviance = core.logdet_w + (N - p) * std::log(e.sigma2) + e.logdet_xwx +
                     (N - p) * (1.0 + kLog2Pi);
    }
    if (!std::isfinite(e.deviance)) e.deviance = kDevianceSentinel;
    return e;
}

double ProfiledModel::deviance_at(const Eigen::VectorXd& theta, double sigma2,
                                  Objective obj) const {
    if (!(sigma2 > 0.0)) return kDevianceSentinel;
    const auto core = assemble(lambda_from_theta(theta));
    if (!core.ok) return kDevianceSentinel;
    const ScaledSpd spd(core.M);
    if (!spd.ok) return kDevianceSentinel;
    const Eigen::VectorXd beta = spd.solve(core.v);
    const double rss =
        std::max(core.syy - 2.0 * beta.dot(core.v) + beta.dot(core.M * beta), 1e-300);
    const double N = static_cast<double>(n_total_);
    const double p = static_cast<double>(p_);
    double dev;
    if (obj == Objective::ML) {
        dev = core.logdet_w + N * std::log(sigma2) + rss / sigma2 + N * kLog2Pi;
    } else {
        dev = core.logdet_w + (N - p) * std::log(sigma2) + spd.logdet() + rss / sigma2 +
              (N - p) * kLog2Pi;
    }
    return std::isfinite(dev) ? dev : kDevianceSentinel;
}

double ProfiledModel::unit_beta_variance(const Eigen::VectorXd& theta, Eigen::Index j) const {
    const auto core = assemble(lambda_from_theta(theta));
    if (!core.ok) throw NumericError("could not assemble normal equations");
    const ScaledSpd spd(core.M);
    if (!spd.ok) throw NumericError("singular normal-equations matrix");
    Eigen::VectorXd ej = Eigen::VectorXd::Zero(p_);
    ej[j] = 1.0;
    return spd.solve(ej)[j];
}

double profiled_deviance(const Eigen::VectorXd& theta, const DesignBundle& bundle, Objective obj) {
    return ProfiledModel(bundle).eval(theta, obj).deviance;
}

// ---------------------------------------------------------------------------
// GLS

namespace {

// Rank check on the equilibrated normal-equations matrix, so that columns on
// very different scales are not mistaken for collinear ones.
void require_full_rank(const Eigen::MatrixXd& M, const std::vector<std::string>& x_names) {
    const Eigen::Index p = M.rows();
    Eigen::VectorXd d = M.diagonal().cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index j = 0; j < p; ++j)
        if (!(d[j] > 0.0)) d[j] = 1.0; // zero column: caught below as deficient
    const Eigen::MatrixXd Mn =
        d.cwiseInverse().asDiagonal() * M * d.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Mn);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
        std::string cols;
        const auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < p; ++k) {
            if (!cols.empty()) cols += ", ";
            cols += x_names[static_cast<std::size_t>(perm[k])];
        }
        throw NumericError("rank-deficient fixed-effect design; collinear columns: " + cols);
    }
}

} // namespace

GlsResult gls_fixed_effects(const DesignBundle& bundle, const VarianceParams& vp) {
    if (!(vp.sigma2_eps > 0.0)) throw ValidationError("sigma2_eps must be positive");
    ProfiledModel pm(bundle);
    const auto core = pm.assemble(vp.lambda);
    if (!core.ok) throw NumericError("could not assemble normal equations");
    require_full_rank(core.M, bundle.x_names);
    const ScaledSpd spd(core.M);
    if (!spd.ok) throw NumericError("singular normal-equations matrix");
    GlsResult r;
    r.beta = spd.solve(core.v);
    r.beta_cov = vp.sigma2_eps * spd.inverse();
    r.beta_cov = 0.5 * (r.beta_cov + r.beta_cov.transpose()).eval();
    return r;
}

// ---------------------------------------------------------------------------
// Nelder-Mead with lower bounds (projection) and restarts

namespace {

struct NmResult {
    Eigen::VectorXd x;
    double f;
    int evals = 0;
    bool converged = false;
};

NmResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& fn,
                     Eigen::VectorXd x0, const Eigen::VectorXd& lb, double tol_f, double tol_x,
                     int max_evals, std::vector<double>* trace) {
    const Eigen::Index d = x0.size();
    auto project = [&](Eigen::VectorXd x) {
        for (Eigen::Index i = 0; i < d; ++i) x[i] = std::max(x[i], lb[i]);
        return x;
    };

    NmResult res;
    std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(d) + 1);
    std::vector<double> fs(static_cast<std::size_t>(d) + 1);
    xs[0] = project(std::move(x0));
    fs[0] = fn(xs[0]);
    ++res.evals;
    for (Eigen::Index i = 0; i < d; ++i) {
        Eigen::VectorXd x = xs[0];
        const double step = 0.25 * std::max(1.0, std::abs(x[i]));
        x[i] += step;
        xs[static_cast<std::size_t>(i) + 1] = project(x);
        fs[static_cast<std::size_t>(i) + 1] = fn(xs[static_cast<std::size_t>(i) + 1]);
        ++res.evals;
    }

    std::vector<std::size_t> ord(xs.size());
    auto sort_simplex = [&] {
        for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
        std::stable_sort(ord.begin(), ord.end(),
                         [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    };

    while (res.evals < max_evals) {
        sort_simplex();
        const std::size_t best = ord[0], worst = ord.back(), second = ord[ord.size() - 2];
        if (trace) trace->push_back(fs[best]);

        double diam = 0.0;
        for (std::size_t i = 1; i < ord.size(); ++i)
            diam = std::max(diam, (xs[ord[i]] - xs[best]).norm());
        if (std::abs(fs[worst] - fs[best]) < tol_f &&
            diam < tol_x * (1.0 + xs[best].norm())) {
            res.converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
        for (std::size_t i = 0; i + 1 < ord.size(); ++i) centroid += xs[ord[i]];
        centroid /= static_cast<double>(d);

        const Eigen::VectorXd xr = project(centroid + (centroid - xs[worst]));
        const double fr = fn(xr);
        ++res.evals;
        if (fr < fs[ord[0]]) {
            const Eigen::VectorXd xe = project(centroid + 2.0 * (centroid - xs[worst]));
            const double fe = fn(xe);
            ++res.evals;
            if (fe < fr) {
                xs[worst] = xe;
                fs[worst] = fe;
            } else {
                xs[worst] = xr;
                fs[worst] = fr;
            }
        } else if (fr < fs[second]) {
            xs[worst] = xr;
            fs[worst] = fr;
        } else {
            const bool outside = fr < fs[worst];
            const Eigen::VectorXd base = outside ? xr : xs[worst];
            const Eigen::VectorXd xc = project(centroid + 0.5 * (base - centroid));
            const double fc = fn(xc);
            ++res.evals;
            if (fc < std::min(fr, fs[worst])) {
                xs[worst] = xc;
                fs[worst] = fc;
            } else {
                // shrink toward the best vertex
                for (std::size_t i = 1; i < ord.size(); ++i) {
                    xs[ord[i]] = project(xs[best] + 0.5 * (xs[ord[i]] - xs[best]));
                    fs[ord[i]] = fn(xs[ord[i]]);
                    ++res.evals;
                }
            }
        }
    }
    sort_simplex();
    res.x = xs[ord[0]];
    res.f = fs[ord[0]];
    return res;
}

} // namespace

// ---------------------------------------------------------------------------
// fit

FitResult fit(const DesignBundle& bundle, Objective obj, const FitOptions& opts) {
    ProfiledModel pm(bundle);
    const Eigen::Index p = pm.p();
    if (pm.n_total() <= p)
        throw ValidationError("need more observations than fixed-effect columns (N > p)");

    const Eigen::Index d = pm.theta_dim();

    // rank check at the base point; names the collinear columns up front
    {
        Eigen::VectorXd base = Eigen::VectorXd::Zero(d);
        const auto core = pm.assemble(pm.lambda_from_theta(base));
        if (!core.ok) throw NumericError("could not assemble normal equations");
        require_full_rank(core.M, bundle.x_names);
    }

    // lower bounds: diagonal lambda entries are nonnegative
    Eigen::VectorXd lb = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
    {
        if (bundle.diagonal_g) {
            lb.setZero();
        } else {
            Eigen::Index k = 0;
            for (Eigen::Index j = 0; j < pm.q(); ++j)
                for (Eigen::Index i = j; i < pm.q(); ++i) {
                    if (i == j) lb[k] = 0.0;
                    ++k;
                }
        }
    }

    FitResult fr;
    fr.objective = obj;
    fr.x_names = bundle.x_names;
    fr.z_names = bundle.z_names;
    fr.diagonal_g = bundle.diagonal_g;
    fr.lambda_fixed_zero = opts.fix_lambda_zero;

    Eigen::VectorXd theta_hat;
    if (opts.fix_lambda_zero) {
        theta_hat = Eigen::VectorXd::Zero(d);
        fr.converged = true;
        fr.n_evals = 1;
    } else {
        auto objective_fn = [&](const Eigen::VectorXd& th) { return pm.eval(th, obj).deviance; };

        // base start: lambda = identity; jittered restarts U(0.5, 1.5)
        Eigen::VectorXd base = pm.theta_from_lambda(Eigen::MatrixXd::Identity(pm.q(), pm.q()));
        SplitMix64 rng(opts.jitter_seed);
        auto unif = [&] {
            return 0.5 + static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
        };

        const int starts = std::max(1, opts.multistarts);
        const int budget = std::max(50, opts.max_evals / starts);
        double best_f = std::numeric_limits<double>::infinity();
        bool any_converged = false;
        int total_evals = 0;
        for (int s = 0; s < starts; ++s) {
            Eigen::VectorXd x0 = base;
            if (s > 0)
                for (Eigen::Index i = 0; i < d; ++i) x0[i] *= unif();
            auto r = nelder_mead(objective_fn, x0, lb, opts.tol_deviance, opts.tol_param, budget,
                                 opts.keep_trace ? &fr.optimizer_trace : nullptr);
            total_evals += r.evals;
            if (r.f < best_f) {
                best_f = r.f;
                theta_hat = r.x;
            }
            any_converged = any_converged || r.converged;
        }
        fr.converged = any_converged && std::isfinite(best_f) && best_f < kDevianceSentinel;
        fr.n_evals = total_evals;
    }

    const auto e = pm.eval(theta_hat, obj);
    if (e.deviance >= kDevianceSentinel)
        throw NumericError("deviance evaluation failed at the optimum");
    fr.theta = theta_hat;
    fr.beta = e.beta;
    fr.variance.lambda = pm.lambda_from_theta(theta_hat);
    fr.variance.sigma2_eps = e.sigma2;
    fr.G_hat = fr.variance.G();
    fr.deviance = e.deviance;
    fr.loglik = -0.5 * e.deviance;
    fr.beta_cov = e.sigma2 * e.beta_cov_unit;
    fr.beta_cov = 0.5 * (fr.beta_cov + fr.beta_cov.transpose()).eval();
    return fr;
}

// ---------------------------------------------------------------------------
// Empirical-Bayes prediction

RandomEffectsPrediction predict_random_effects(const DesignBundle& bundle, const FitResult& frt) {
    RandomEffectsPrediction pred;
    const Eigen::MatrixXd& G = frt.G_hat;
    for (const auto& g : bundle.groups) {
        Eigen::MatrixXd V = g.Z * G * g.Z.transpose();
        V.diagonal().array() += frt.variance.sigma2_eps;
        Eigen::LLT<Eigen::MatrixXd> llt(V);
        if (llt.info() != Eigen::Success) {
            V.diagonal().array() += 1e-10 * V.trace() / static_cast<double>(V.rows());
            llt.compute(V);
            if (llt.info() != Eigen::Success)
                throw NumericError("non-PD marginal covariance for individual '" + g.id + "'");
        }
        const Eigen::VectorXd r = g.y - g.X * frt.beta;
        const Eigen::MatrixXd GZt = G * g.Z.transpose();
        pred.ids.push_back(g.id);
        pred.b_hat.push_back(GZt * llt.solve(r));
        Eigen::MatrixXd cc = G - GZt * llt.solve(GZt.transpose());
        pred.cond_cov.push_back(0.5 * (cc + cc.transpose()));
    }
    return pred;
}

} // namespace mrtlmm
