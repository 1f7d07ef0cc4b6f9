#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mrtlmm/errors.hpp"
#include "mrtlmm/lmm.hpp"
#include "mrtlmm/replicate.hpp"
#include "mrtlmm/simulate.hpp"
#include "oracles.hpp"

using namespace mrtlmm;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

DesignBundle random_bundle(int n_groups, int T, int p, int q, unsigned seed,
                           bool diagonal = false) {
    std::mt19937 g(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    DesignBundle b;
    b.diagonal_g = diagonal;
    for (int j = 0; j < p; ++j) b.x_names.push_back("x" + std::to_string(j));
    for (int j = 0; j < q; ++j) b.z_names.push_back("z" + std::to_string(j));
    for (int i = 0; i < n_groups; ++i) {
        IndividualDesign d;
        d.id = "g" + std::to_string(i);
        d.X.resize(T, p);
        d.Z.resize(T, q);
        d.y.resize(T);
        for (int t = 0; t < T; ++t) {
            d.X(t, 0) = 1.0;
            for (int j = 1; j < p; ++j) d.X(t, j) = N(g);
            d.Z(t, 0) = 1.0;
            for (int j = 1; j < q; ++j) d.Z(t, j) = N(g);
            d.y[t] = N(g);
        }
        b.groups.push_back(std::move(d));
    }
    return b;
}

// Balanced one-way random-intercept layout: intercept-only X and Z.
DesignBundle one_way_bundle(const Eigen::MatrixXd& y) {
    DesignBundle b;
    b.x_names = {"1"};
    b.z_names = {"1"};
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        IndividualDesign d;
        d.id = "g" + std::to_string(i);
        d.X = Eigen::MatrixXd::Ones(y.cols(), 1);
        d.Z = Eigen::MatrixXd::Ones(y.cols(), 1);
        d.y = y.row(i).transpose();
        b.groups.push_back(std::move(d));
    }
    return b;
}

Eigen::MatrixXd simulate_one_way(int n, int T, double mu, double s_b, double s_e,
                                 unsigned seed) {
    std::mt19937 g(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::MatrixXd y(n, T);
    for (int i = 0; i < n; ++i) {
        const double b = s_b * N(g);
        for (int t = 0; t < T; ++t) y(i, t) = mu + b + s_e * N(g);
    }
    return y;
}

// Standard dense REML criterion, assembled per group from explicit V_i.
double dense_reml_criterion(const DesignBundle& bundle, const Eigen::VectorXd& beta,
                            const VarianceParams& vp) {
    double logdet_v = 0.0, quad = 0.0;
    Eigen::Index N = 0;
    const Eigen::Index p = bundle.p();
    Eigen::MatrixXd xvx = Eigen::MatrixXd::Zero(p, p);
    for (const auto& g : bundle.groups) {
        const Eigen::MatrixXd V = marginal_covariance(g.Z, vp);
        const Eigen::LLT<Eigen::MatrixXd> llt(V);
        for (Eigen::Index i = 0; i < V.rows(); ++i)
            logdet_v += 2.0 * std::log(llt.matrixL()(i, i));
        const Eigen::VectorXd r = g.y - g.X * beta;
        quad += r.dot(llt.solve(r));
        xvx += g.X.transpose() * llt.solve(g.X);
        N += g.y.size();
    }
    const double logdet_xvx = std::log(xvx.determinant());
    return logdet_v + logdet_xvx + quad + static_cast<double>(N - p) * kLog2Pi;
}

} // namespace

TEST_CASE("marginal covariance basics") {
    SUBCASE("zero lambda collapses to iid noise") {
        const auto b = random_bundle(1, 4, 2, 2, 11);
        VarianceParams vp;
        vp.lambda = Eigen::MatrixXd::Zero(2, 2);
        vp.sigma2_eps = 2.5;
        const Eigen::MatrixXd V = marginal_covariance(b.groups[0].Z, vp);
        CHECK((V - 2.5 * Eigen::MatrixXd::Identity(4, 4)).norm() == doctest::Approx(0.0));
    }
    SUBCASE("random-intercept compound symmetry") {
        VarianceParams vp;
        vp.lambda = Eigen::MatrixXd::Constant(1, 1, 2.0);
        vp.sigma2_eps = 0.25; // G = 1
        const Eigen::MatrixXd V = marginal_covariance(Eigen::MatrixXd::Ones(3, 1), vp);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(V(i, j) == doctest::Approx(i == j ? 1.25 : 1.0));
    }
    SUBCASE("two independent effects with a slope") {
        VarianceParams vp;
        vp.lambda = Eigen::Vector2d(2.0, 0.5).asDiagonal(); // G = diag(4, 1/4)
        vp.sigma2_eps = 1.0;
        Eigen::MatrixXd Z(1, 2);
        Z << 1.0, 0.5;
        CHECK(marginal_covariance(Z, vp)(0, 0) == doctest::Approx(5.0625));
    }
}

TEST_CASE("gls reduces to ols at zero lambda") {
    const auto b = random_bundle(4, 5, 3, 1, 21);
    VarianceParams vp;
    vp.lambda = Eigen::MatrixXd::Zero(1, 1);
    vp.sigma2_eps = 1.7;
    const auto gls = gls_fixed_effects(b, vp);
    const auto ols = oracles::stacked_ols(b);
    CHECK((gls.beta - ols.beta).norm() == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("gls recovers exact coefficients from noise-free data") {
    auto b = random_bundle(3, 6, 3, 2, 31);
    const Eigen::Vector3d beta(1.0, -2.0, 0.5);
    for (auto& g : b.groups) g.y = g.X * beta;
    VarianceParams vp;
    vp.lambda.setIdentity(2, 2);
    vp.lambda(1, 0) = 0.3;
    vp.sigma2_eps = 0.9;
    const auto gls = gls_fixed_effects(b, vp);
    CHECK((gls.beta - beta).norm() < 1e-10);
}

TEST_CASE("balanced random-intercept gls is the grand mean for any lambda") {
    const Eigen::MatrixXd y = simulate_one_way(6, 4, 1.5, 1.0, 0.7, 41);
    const auto b = one_way_bundle(y);
    for (double lam : {0.0, 0.5, 3.0}) {
        VarianceParams vp;
        vp.lambda = Eigen::MatrixXd::Constant(1, 1, lam);
        vp.sigma2_eps = 0.49;
        const auto gls = gls_fixed_effects(b, vp);
        CHECK(gls.beta[0] == doctest::Approx(y.mean()).epsilon(1e-12));
    }
}

TEST_CASE("collinear fixed effects are rejected by name") {
    auto b = random_bundle(3, 5, 2, 1, 51);
    for (auto& g : b.groups) g.X.col(1) = 2.0 * g.X.col(0);
    VarianceParams vp;
    vp.lambda = Eigen::MatrixXd::Zero(1, 1);
    CHECK_THROWS_AS(gls_fixed_effects(b, vp), NumericError);
    CHECK_THROWS_AS(fit(b, Objective::ML), NumericError);
}

TEST_CASE("profiled ml deviance agrees with the dense evaluator") {
    std::mt19937 g(61);
    std::uniform_real_distribution<double> U(-1.0, 1.5);
    for (int rep = 0; rep < 6; ++rep) {
        const bool diagonal = rep % 2 == 0;
        const auto b = random_bundle(3 + rep, 4, 2, 2, 100 + static_cast<unsigned>(rep),
                                     diagonal);
        const ProfiledModel pm(b);
        for (int k = 0; k < 25; ++k) {
            Eigen::VectorXd theta(pm.theta_dim());
            for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = std::abs(U(g));
            const auto ev = pm.eval(theta, Objective::ML);
            VarianceParams vp;
            vp.lambda = pm.lambda_from_theta(theta);
            vp.sigma2_eps = ev.sigma2;
            const double dense = direct_deviance(b, ev.beta, vp);
            CHECK(ev.deviance == doctest::Approx(dense).epsilon(1e-9));
        }
    }
}

TEST_CASE("profiled reml criterion matches the standard dense formula") {
    std::mt19937 g(71);
    std::uniform_real_distribution<double> U(0.1, 1.2);
    const auto b = random_bundle(5, 4, 2, 2, 202);
    const ProfiledModel pm(b);
    for (int k = 0; k < 25; ++k) {
        Eigen::VectorXd theta(pm.theta_dim());
        for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = U(g);
        if (theta.size() > 2) theta[1] = U(g) - 0.6; // off-diagonal may be negative
        const auto ev = pm.eval(theta, Objective::REML);
        VarianceParams vp;
        vp.lambda = pm.lambda_from_theta(theta);
        vp.sigma2_eps = ev.sigma2;
        CHECK(ev.deviance ==
              doctest::Approx(dense_reml_criterion(b, ev.beta, vp)).epsilon(1e-9));
    }
}

TEST_CASE("evaluator stays accurate on explosively scaled covariates") {
    // Feedback-driven covariate dynamics can push |x| past 1e9; the evaluator
    // must neither lose the residual scale to cancellation nor misread the
    // column-scale spread as collinearity.
    SimConfig cfg;
    cfg.gm = 2;
    cfg.n = 60;
    cfg.T = 30;
    int n_extreme = 0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        cfg.seed = seed;
        const auto b = build_design(simulate_gm(cfg), gm_model_spec(2));
        double xmax = 0.0;
        for (const auto& g : b.groups)
            xmax = std::max(xmax, g.X.cwiseAbs().maxCoeff());
        if (xmax < 1e6) continue;
        ++n_extreme;
        const ProfiledModel pm(b);
        Eigen::VectorXd theta = Eigen::VectorXd::Constant(pm.theta_dim(), 0.7);
        const auto ev = pm.eval(theta, Objective::ML);
        REQUIRE(std::isfinite(ev.deviance));
        VarianceParams vp;
        vp.lambda = pm.lambda_from_theta(theta);
        vp.sigma2_eps = ev.sigma2;
        CHECK(ev.deviance == doctest::Approx(direct_deviance(b, ev.beta, vp))
                                 .epsilon(1e-6));
        const auto fr = fit(b, Objective::REML);
        CHECK(fr.converged);
        CHECK(std::isfinite(fr.deviance));
        CHECK(fr.variance.sigma2_eps > 0.0);
    }
    CHECK(n_extreme >= 2); // the sweep must actually hit extreme datasets
}

TEST_CASE("single observation deviance in closed form") {
    DesignBundle b;
    b.x_names = {"1"};
    b.z_names = {"1"};
    IndividualDesign d;
    d.id = "a";
    d.X = Eigen::MatrixXd::Ones(1, 1);
    d.Z = Eigen::MatrixXd::Ones(1, 1);
    d.y = Eigen::VectorXd::Constant(1, 1.8);
    b.groups.push_back(d);

    VarianceParams vp;
    vp.lambda = Eigen::MatrixXd::Constant(1, 1, 1.5);
    vp.sigma2_eps = 0.8;
    const double mu = 0.4;
    const double s = vp.sigma2_eps * (1.0 + 1.5 * 1.5); // sigma2_b + sigma2_eps
    const double expected = std::log(s) + std::pow(1.8 - mu, 2) / s + kLog2Pi;
    CHECK(direct_deviance(b, Eigen::VectorXd::Constant(1, mu), vp) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("fit matches the balanced one-way closed forms") {
    const Eigen::MatrixXd y = simulate_one_way(12, 6, 2.0, 1.0, 0.8, 81);
    const auto b = one_way_bundle(y);

    for (const auto obj : {Objective::ML, Objective::REML}) {
        const auto oracle = oracles::one_way_anova(y, obj == Objective::REML);
        REQUIRE_FALSE(oracle.clipped);
        const auto fr = fit(b, obj);
        REQUIRE(fr.converged);
        CHECK(fr.beta[0] == doctest::Approx(oracle.mu).epsilon(1e-8));
        CHECK(fr.G_hat(0, 0) == doctest::Approx(oracle.sigma2_b).epsilon(1e-4));
        CHECK(fr.variance.sigma2_eps == doctest::Approx(oracle.sigma2_eps).epsilon(1e-4));
    }
}

TEST_CASE("fit clips the group variance at the boundary") {
    // No group effect in truth; pick a draw whose between-mean-square is
    // small enough that the unconstrained estimate would be negative.
    Eigen::MatrixXd y;
    oracles::OneWayEstimates oracle{};
    unsigned seed = 90;
    for (;; ++seed) {
        y = simulate_one_way(8, 8, 0.0, 0.0, 1.0, seed);
        oracle = oracles::one_way_anova(y, true);
        if (oracle.clipped) break;
    }
    const auto b = one_way_bundle(y);
    const auto fr = fit(b, Objective::REML);
    REQUIRE(fr.converged);
    CHECK(fr.G_hat(0, 0) < 1e-6);
    CHECK(fr.variance.sigma2_eps == doctest::Approx(oracle.sigma2_eps).epsilon(1e-4));
}

TEST_CASE("degenerate zero-within-variance data drives the deviance down the boundary") {
    Eigen::MatrixXd y(2, 2);
    y << 1, 1, 3, 3;
    const auto b = one_way_bundle(y);
    double prev = profiled_deviance(Eigen::VectorXd::Constant(1, 1.0), b, Objective::ML);
    for (double lam : {2.0, 4.0, 8.0}) {
        const double d = profiled_deviance(Eigen::VectorXd::Constant(1, lam), b, Objective::ML);
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("fit is scale equivariant") {
    const auto b = random_bundle(6, 5, 2, 1, 301);
    auto scaled = b;
    const double c = 3.7;
    for (auto& g : scaled.groups) g.y *= c;

    for (const auto obj : {Objective::ML, Objective::REML}) {
        const auto f1 = fit(b, obj);
        const auto f2 = fit(scaled, obj);
        REQUIRE(f1.converged);
        REQUIRE(f2.converged);
        CHECK((f2.beta - c * f1.beta).norm() < 1e-6 * (1.0 + f1.beta.norm()));
        CHECK(f2.variance.sigma2_eps ==
              doctest::Approx(c * c * f1.variance.sigma2_eps).epsilon(1e-6));
        CHECK((f2.G_hat - c * c * f1.G_hat).norm() < 1e-5 * (1.0 + f1.G_hat.norm()));
    }
}

TEST_CASE("fit is invariant to the order of individuals") {
    const auto b = random_bundle(6, 4, 2, 1, 401);
    auto rev = b;
    std::reverse(rev.groups.begin(), rev.groups.end());
    const auto f1 = fit(b, Objective::REML);
    const auto f2 = fit(rev, Objective::REML);
    CHECK((f1.beta - f2.beta).norm() < 1e-8);
    CHECK(f1.G_hat(0, 0) == doctest::Approx(f2.G_hat(0, 0)).epsilon(1e-6));
}

TEST_CASE("fit is bitwise reproducible") {
    const auto b = random_bundle(5, 5, 2, 1, 501);
    const auto f1 = fit(b, Objective::ML);
    const auto f2 = fit(b, Objective::ML);
    CHECK(f1.deviance == f2.deviance);
    CHECK((f1.beta - f2.beta).norm() == 0.0);
    CHECK((f1.G_hat - f2.G_hat).norm() == 0.0);
    CHECK(f1.n_evals == f2.n_evals);
}

TEST_CASE("fixed-lambda fit is plain least squares") {
    const auto b = random_bundle(4, 6, 3, 1, 601);
    FitOptions opts;
    opts.fix_lambda_zero = true;
    const auto fr = fit(b, Objective::REML, opts);
    const auto ols = oracles::stacked_ols(b);
    CHECK((fr.beta - ols.beta).norm() < 1e-10);
    CHECK(fr.variance.sigma2_eps == doctest::Approx(ols.s2).epsilon(1e-10));
    CHECK(fr.G_hat.norm() == 0.0);
    CHECK((fr.beta_cov - ols.beta_cov).norm() < 1e-10);
}

TEST_CASE("predicted random effects") {
    SUBCASE("zero G predicts zero effects") {
        const auto b = random_bundle(4, 5, 2, 1, 701);
        FitOptions opts;
        opts.fix_lambda_zero = true;
        const auto fr = fit(b, Objective::REML, opts);
        const auto pred = predict_random_effects(b, fr);
        REQUIRE(pred.ids.size() == 4);
        for (const auto& bh : pred.b_hat) CHECK(bh.norm() == 0.0);
    }

    SUBCASE("zero residuals predict zero effects") {
        auto b = random_bundle(3, 5, 2, 1, 801);
        const Eigen::Vector2d beta(0.7, -1.1);
        for (auto& g : b.groups) g.y = g.X * beta;
        FitResult fr;
        fr.beta = beta;
        fr.variance.lambda = Eigen::MatrixXd::Identity(1, 1);
        fr.variance.sigma2_eps = 1.0;
        fr.G_hat = fr.variance.G();
        const auto pred = predict_random_effects(b, fr);
        for (const auto& bh : pred.b_hat) CHECK(bh.norm() < 1e-12);
    }

    SUBCASE("balanced shrinkage in closed form") {
        const Eigen::MatrixXd y = simulate_one_way(5, 4, 0.0, 1.0, 1.0, 901);
        const auto b = one_way_bundle(y);
        const double mu = 0.3, s2b = 2.0, s2e = 0.5;
        const double T = 4.0;
        FitResult fr;
        fr.beta = Eigen::VectorXd::Constant(1, mu);
        fr.variance.sigma2_eps = s2e;
        fr.variance.lambda = Eigen::MatrixXd::Constant(1, 1, std::sqrt(s2b / s2e));
        fr.G_hat = fr.variance.G();
        const auto pred = predict_random_effects(b, fr);
        const double shrink = T * s2b / (T * s2b + s2e);
        for (int i = 0; i < 5; ++i) {
            CHECK(pred.b_hat[static_cast<std::size_t>(i)][0] ==
                  doctest::Approx(shrink * (y.row(i).mean() - mu)).epsilon(1e-10));
            CHECK(pred.cond_cov[static_cast<std::size_t>(i)](0, 0) ==
                  doctest::Approx(s2b * s2e / (T * s2b + s2e)).epsilon(1e-10));
        }
    }

    SUBCASE("shrinkage grows with the noise variance") {
        const Eigen::MatrixXd y = simulate_one_way(5, 4, 0.0, 1.0, 1.0, 902);
        const auto b = one_way_bundle(y);
        double prev = std::numeric_limits<double>::infinity();
        for (double s2e : {0.25, 1.0, 4.0, 16.0}) {
            FitResult fr;
            fr.beta = Eigen::VectorXd::Constant(1, y.mean());
            fr.variance.sigma2_eps = s2e;
            fr.variance.lambda = Eigen::MatrixXd::Constant(1, 1, std::sqrt(1.0 / s2e));
            fr.G_hat = fr.variance.G(); // held at 1 while the noise grows
            const auto pred = predict_random_effects(b, fr);
            double norm = 0.0;
            for (const auto& bh : pred.b_hat) norm += bh.squaredNorm();
            CHECK(norm < prev);
            prev = norm;
        }
    }
}

TEST_CASE("pathological theta returns the sentinel instead of nan") {
    const auto b = random_bundle(3, 4, 2, 1, 1001);
    const ProfiledModel pm(b);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 1e200);
    const double d = pm.eval(theta, Objective::ML).deviance;
    CHECK((d == kDevianceSentinel || std::isfinite(d)));
    CHECK_FALSE(std::isnan(d));
}

TEST_CASE("fit refuses more parameters than observations") {
    const auto b = random_bundle(1, 2, 3, 1, 1101);
    CHECK_THROWS_AS(fit(b, Objective::ML), ValidationError);
}
