#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivmsm/errors.hpp"
#include "ivmsm/estimators.hpp"
#include "ivmsm/inference.hpp"
#include "ivmsm/nuisance.hpp"
#include "ivmsm/numerics.hpp"
#include "ivmsm/panel.hpp"
#include "ivmsm/rng.hpp"
#include "ivmsm/simulate.hpp"
#include "ivmsm/weights.hpp"

using namespace ivmsm;

namespace {

// single-period panel with randomized treatment and homoskedastic noise
LongitudinalPanel exogenous_panel(std::size_t n, double b0, double b1, double sd,
                                  std::uint64_t seed) {
    LongitudinalPanel p;
    p.n = n;
    p.T = 1;
    p.k = 1;
    p.a.resize(n);
    p.z.assign(n, 0.0);
    p.l.assign(n, 0.0);
    p.y.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        p.a[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        p.y[i] = b0 + b1 * p.a[i] + sd * rng.normal();
    }
    return p;
}

// mean over subjects of the weighted residual score h (y - m) / wbar
std::vector<double> mean_beta_score(const LongitudinalPanel& panel, const MsmmSpec& spec,
                                    const std::vector<double>& beta, EstimatorKind kind,
                                    const EstimateOptions& opt) {
    const WeightSet ws = build_weights(panel, kind, opt);
    const std::vector<double> inv = ws.inverse_wbar();
    std::vector<double> s;
    for (std::size_t i = 0; i < panel.n; ++i) {
        const std::vector<double> path = panel.treatment_path(i);
        const std::vector<double> h = design_row(spec, path);
        if (s.empty()) s.assign(h.size(), 0.0);
        const double resid = panel.y_terminal(i) - mean_value(spec, beta, path);
        for (std::size_t j = 0; j < h.size(); ++j) s[j] += h[j] * resid * inv[i];
    }
    for (double& x : s) x /= (double)panel.n;
    return s;
}

NuisanceFit probit_params_only(const NuisanceFit& fit) {
    NuisanceFit out;
    out.kind = fit.kind;
    out.alpha = fit.alpha;
    out.nu = fit.nu;
    out.q = fit.q;
    out.converged = true;
    return out;
}

// central finite differences of the mean score in the supplied fit's
// parameters, compared column by column against the analytic jacobian block
void check_jacobian_block(const LongitudinalPanel& panel, const MsmmSpec& spec,
                          const std::vector<double>& beta, EstimatorKind kind,
                          const EstimateOptions& base, const NuisanceFit& fit,
                          bool density, const Matrix& J, std::size_t col0,
                          double* max_abs = nullptr) {
    const std::vector<double>& theta = fit.theta;
    const std::size_t na = fit.alpha.size();
    for (std::size_t c = 0; c < theta.size(); ++c) {
        const double h = 1e-4 * std::max(1.0, std::abs(theta[c]));
        std::vector<double> sp, sm;
        for (int sign : {+1, -1}) {
            NuisanceFit f2 = probit_params_only(fit);
            std::vector<double> th = theta;
            th[c] += sign * h;
            if (density) {
                f2.gamma = th;
            } else if (fit.kind == NuisanceFit::Kind::MARKOV_TREATMENT) {
                f2.alpha = {th[0], th[1]};
                f2.nu = {th[2]};
            } else {
                f2.alpha.assign(th.begin(), th.begin() + na);
                f2.nu.assign(th.begin() + na, th.end());
            }
            EstimateOptions o2 = base;
            if (density)
                o2.iv_density_fit = &f2;
            else
                o2.treatment_fit = &f2;
            (sign > 0 ? sp : sm) = mean_beta_score(panel, spec, beta, kind, o2);
        }
        for (std::size_t j = 0; j < sp.size(); ++j) {
            const double fd = (sp[j] - sm[j]) / (2.0 * h);
            const double an = J(j, col0 + c);
            CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(an)));
            if (max_abs) *max_abs = std::max(*max_abs, std::abs(an));
        }
    }
}

void check_influence_and_cov(const SandwichParts& parts, std::size_t n) {
    const std::size_t p = parts.beta_dim;
    for (std::size_t c = 0; c < p; ++c) {
        double mean = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += parts.influence(i, c);
            scale += std::abs(parts.influence(i, c));
        }
        mean /= (double)n;
        scale /= (double)n;
        CHECK(std::abs(mean) <= 1e-8 * std::max(scale, 1e-12));
    }
    CHECK(parts.cov(0, 1) == parts.cov(1, 0));
    const Eig2 e = eig2x2(parts.cov);
    CHECK(e.lambda1 >= 0.0);
    CHECK(e.lambda2 >= -1e-10 * std::max(e.lambda1, 1e-300));
}

}  // namespace

TEST_CASE("robust covariance matches classical least squares under homoskedasticity") {
    const std::size_t n = 10000;
    const double sd = 1.5;
    const LongitudinalPanel p = exogenous_panel(n, 1.0, 2.0, sd, 515001);
    const EstimateReport er = estimate(p, EstimatorKind::ASSOCIATIONAL);
    const Matrix V = sandwich_variance(p, er.beta, EstimatorKind::ASSOCIATIONAL);

    // classical normal-theory covariance from the same data
    double s1 = 0.0;
    for (double a : p.a) s1 += a;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = p.y[i] - er.beta[0] - er.beta[1] * p.a[i];
        rss += e * e;
    }
    const double sigma2 = rss / (double)(n - 2);
    const double det = (double)n * s1 - s1 * s1;
    const double c00 = sigma2 * s1 / det;   // (X'X)^{-1} entries
    const double c01 = sigma2 * -s1 / det;  // times sigma^2
    const double c11 = sigma2 * (double)n / det;
    CHECK(std::abs(V(0, 0) - c00) <= 0.10 * c00);
    CHECK(std::abs(V(1, 1) - c11) <= 0.10 * c11);
    CHECK(std::abs(V(0, 1) - c01) <= 0.10 * std::abs(c01));
    CHECK(V(0, 1) == V(1, 0));
}

TEST_CASE("fits without score information are treated as fixed in the sandwich") {
    const SimOutput sim = simulate_linear({}, 800, 515002);
    const LongitudinalPanel& p = sim.panel;
    const CovariateSpec obs = default_alpha_covariates(p);
    const NuisanceFit tf = fit_probit_treatment(p, obs, obs);
    REQUIRE(tf.converged);

    EstimateOptions opt;
    opt.treatment_fit = &tf;
    const EstimateReport er = estimate(p, EstimatorKind::IV, opt);

    // asking for known nuisances collapses the stack to the beta block
    const SandwichParts reduced =
        sandwich_details(p, er.beta, EstimatorKind::IV, opt, true);
    CHECK(reduced.stacked_dim == reduced.beta_dim);

    // hand-computed reduced sandwich
    const WeightSet ws = build_weights(p, EstimatorKind::IV, opt);
    const std::vector<double> inv = ws.inverse_wbar();
    Matrix J(2, 2);
    Matrix s(p.n, 2);
    for (std::size_t i = 0; i < p.n; ++i) {
        const std::vector<double> path = p.treatment_path(i);
        const std::vector<double> x = mean_basis_row(opt.spec, path);
        const double resid = p.y_terminal(i) - mean_value(opt.spec, er.beta, path);
        for (std::size_t j = 0; j < 2; ++j) {
            s(i, j) = x[j] * resid * inv[i];
            for (std::size_t c = 0; c < 2; ++c) J(j, c) -= x[j] * x[c] * inv[i];
        }
    }
    for (double& v : J.a) v /= (double)p.n;
    const Matrix Ji = inverse(J);
    Matrix IF(p.n, 2);
    std::vector<double> mu(2, 0.0);
    for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t r = 0; r < 2; ++r) {
            IF(i, r) = -(Ji(r, 0) * s(i, 0) + Ji(r, 1) * s(i, 1));
            mu[r] += IF(i, r);
        }
    for (double& m : mu) m /= (double)p.n;
    Matrix V(2, 2);
    for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < 2; ++c)
                V(r, c) += (IF(i, r) - mu[r]) * (IF(i, c) - mu[c]);
    for (double& v : V.a) v /= (double)p.n * (double)p.n;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(std::abs(reduced.cov(r, c) - V(r, c)) <=
                  1e-12 * (1.0 + std::abs(V(r, c))));

    // a parameter-only fit (no scores) is treated the same way automatically
    const NuisanceFit bare = probit_params_only(tf);
    EstimateOptions opt2;
    opt2.treatment_fit = &bare;
    const SandwichParts reduced2 =
        sandwich_details(p, er.beta, EstimatorKind::IV, opt2, false);
    CHECK(reduced2.stacked_dim == 2);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(reduced2.cov(r, c) == reduced.cov(r, c));

    // the same fit with scores attached is stacked, and that changes the answer
    const SandwichParts stacked =
        sandwich_details(p, er.beta, EstimatorKind::IV, opt, false);
    CHECK(stacked.stacked_dim == 2 + tf.theta.size());
    CHECK(stacked.cov(1, 1) != reduced.cov(1, 1));
}

TEST_CASE("stacked jacobian columns match finite differences of the score") {
    SUBCASE("probit compliance and logistic instrument density") {
        const SimOutput sim = simulate_linear({}, 300, 515003);
        const LongitudinalPanel& p = sim.panel;
        const CovariateSpec obs = default_alpha_covariates(p);
        const NuisanceFit tf = fit_probit_treatment(p, obs, obs);
        const NuisanceFit df = fit_logistic_iv_density(p);
        REQUIRE(tf.converged);
        REQUIRE(df.converged);

        EstimateOptions opt;
        opt.treatment_fit = &tf;
        opt.iv_density_fit = &df;
        const EstimateReport er = estimate(p, EstimatorKind::IV, opt);
        const SandwichParts parts = sandwich_details(p, er.beta, EstimatorKind::IV, opt);
        const std::size_t dt = tf.theta.size(), dg = df.theta.size();
        REQUIRE(parts.stacked_dim == 2 + dt + dg);

        double amax = 0.0;
        check_jacobian_block(p, opt.spec, er.beta, EstimatorKind::IV, opt, tf, false,
                             parts.jacobian, 2, &amax);
        CHECK(amax > 1e-3);  // the compliance columns do real work
        amax = 0.0;
        check_jacobian_block(p, opt.spec, er.beta, EstimatorKind::IV, opt, df, true,
                             parts.jacobian, 2 + dt, &amax);
        CHECK(amax > 1e-3);
        check_influence_and_cov(parts, p.n);
    }

    SUBCASE("two-state treatment model, plain and stabilized") {
        const SimOutput sim = simulate_markov({}, 400, 515004);
        const LongitudinalPanel& p = sim.panel;
        const NuisanceFit mf = fit_markov_treatment(p, 0.5);
        REQUIRE(mf.converged);
        EstimateOptions opt;
        opt.treatment_fit = &mf;

        for (EstimatorKind kind : {EstimatorKind::IV, EstimatorKind::IV_STABILIZED}) {
            const EstimateReport er = estimate(p, kind, opt);
            const SandwichParts parts = sandwich_details(p, er.beta, kind, opt);
            REQUIRE(parts.stacked_dim == 2 + 3);
            double amax = 0.0;
            check_jacobian_block(p, opt.spec, er.beta, kind, opt, mf, false,
                                 parts.jacobian, 2, &amax);
            CHECK(amax > 1e-3);
            if (kind == EstimatorKind::IV) {
                // the mixing probability never enters plain weights
                CHECK(parts.jacobian(0, 4) == 0.0);
                CHECK(parts.jacobian(1, 4) == 0.0);
            } else {
                // ... but drives the default stabilizer
                CHECK(std::abs(parts.jacobian(1, 4)) > 1e-6);
            }
            check_influence_and_cov(parts, p.n);
        }
    }
}

TEST_CASE("sandwich standard errors track the sampling distribution") {
    const std::size_t R = 400, n = 6000;
    std::vector<double> b1s, ses;
    for (std::size_t rep = 0; rep < R; ++rep) {
        const SimOutput sim = simulate_linear({}, n, derive_seed(515005, rep + 1));
        EstimateOptions opt;
        const EstimateReport er = estimate(sim.panel, EstimatorKind::IV, opt);
        const Matrix V = sandwich_variance(sim.panel, er.beta, EstimatorKind::IV, opt);
        b1s.push_back(er.beta[1]);
        ses.push_back(std::sqrt(V(1, 1)));
    }
    double mean = 0.0;
    for (double v : b1s) mean += v;
    mean /= (double)R;
    double ss = 0.0;
    for (double v : b1s) ss += (v - mean) * (v - mean);
    const double mc_sd = std::sqrt(ss / (double)(R - 1));
    double se_mean = 0.0;
    for (double v : ses) se_mean += v;
    se_mean /= (double)R;
    CHECK(std::abs(se_mean / mc_sd - 1.0) < 0.15);
}

TEST_CASE("sandwich rejects designs it cannot support") {
    LongitudinalPanel p;
    p.n = 6;
    p.T = 1;
    p.a.assign(6, 1.0);  // constant treatment: the design has no second direction
    p.z.assign(6, 0.0);
    p.y = {1, 2, 3, 4, 5, 6};
    const std::vector<double> beta = {0.0, 0.0};
    CHECK_THROWS_AS(sandwich_variance(p, beta, EstimatorKind::ASSOCIATIONAL),
                    SingularInformation);
    CHECK_THROWS_AS(sandwich_variance(p, beta, EstimatorKind::WALD), InvalidParams);
    CHECK_THROWS_AS(sandwich_variance(p, beta, EstimatorKind::REPEATED_MEASURES_IV),
                    InvalidParams);
    CHECK_THROWS_AS(sandwich_variance(p, {1.0, 2.0, 3.0}, EstimatorKind::ASSOCIATIONAL),
                    InvalidParams);

    LongitudinalPanel single = p;
    single.n = 1;
    single.a = {1.0};
    single.z = {0.0};
    single.y = {1.0};
    CHECK_THROWS_AS(sandwich_variance(single, beta, EstimatorKind::ASSOCIATIONAL),
                    InvalidParams);

    LongitudinalPanel rep = p;
    rep.repeated_y = true;
    CHECK_THROWS_AS(sandwich_variance(rep, beta, EstimatorKind::ASSOCIATIONAL),
                    InvalidParams);
}

TEST_CASE("bootstrap of identical subjects has zero variance") {
    LongitudinalPanel p;
    p.n = 40;
    p.T = 1;
    p.a.assign(p.n, 1.0);
    p.z.assign(p.n, 1.0);
    p.y.assign(p.n, 3.0);

    EstimateOptions opt;
    opt.spec.mean_model = MeanModel::LINEAR_GENERAL;
    opt.spec.beta_dim = 1;
    opt.spec.basis = [](const std::vector<double>& path) {
        return std::vector<double>{path_sum(path)};
    };
    const BootstrapResult b =
        bootstrap_estimate(p, EstimatorKind::ASSOCIATIONAL, opt, 100, 0.95, 515006);
    CHECK(b.failures == 0);
    CHECK(b.cov(0, 0) == 0.0);
    CHECK(b.ci[0].first == 3.0);
    CHECK(b.ci[0].second == 3.0);
    for (std::size_t r = 0; r < b.replicates.rows; ++r)
        CHECK(b.replicates(r, 0) == 3.0);
}

TEST_CASE("bootstrap replication is reproducible from the seed") {
    const SimOutput sim = simulate_linear({}, 400, 515007);
    const EstimateOptions opt;
    const BootstrapResult b1 =
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.95, 9001);
    const BootstrapResult b2 =
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.95, 9001);
    REQUIRE(b1.replicates.rows == b2.replicates.rows);
    for (std::size_t r = 0; r < b1.replicates.rows; ++r)
        for (std::size_t c = 0; c < b1.replicates.cols; ++c)
            CHECK(b1.replicates(r, c) == b2.replicates(r, c));
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(b1.cov(c, c) == b2.cov(c, c));
        CHECK(b1.ci[c].first == b2.ci[c].first);
        CHECK(b1.ci[c].second == b2.ci[c].second);
    }

    const BootstrapResult b3 =
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.95, 9002);
    CHECK(b3.cov(1, 1) != b1.cov(1, 1));
}

TEST_CASE("percentile intervals nest as the level grows") {
    const SimOutput sim = simulate_linear({}, 400, 515008);
    const EstimateOptions opt;
    const BootstrapResult b90 =
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.90, 41);
    const BootstrapResult b99 =
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.99, 41);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(b99.ci[c].first <= b90.ci[c].first);
        CHECK(b90.ci[c].first < b90.ci[c].second);
        CHECK(b90.ci[c].second <= b99.ci[c].second);
    }

    CHECK_THROWS_AS(
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 99, 0.95, 41),
        InvalidParams);
    CHECK_THROWS_AS(
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 0.0, 41),
        InvalidParams);
    CHECK_THROWS_AS(
        bootstrap_estimate(sim.panel, EstimatorKind::IV, opt, 120, 1.0, 41),
        InvalidParams);
}

TEST_CASE("bootstrap reports failure when resampling breaks identification") {
    LongitudinalPanel p;
    p.n = 5;
    p.T = 1;
    p.a = {1.0, 0.0, 0.0, 0.0, 0.0};  // one treated subject carries the contrast
    p.z = {1.0, 0.0, 1.0, 0.0, 1.0};
    p.y = {2.0, 1.0, 1.1, 0.9, 1.2};
    const EstimateOptions opt;
    CHECK_THROWS_AS(
        bootstrap_estimate(p, EstimatorKind::ASSOCIATIONAL, opt, 100, 0.95, 515009),
        TooManyFailures);
}

TEST_CASE("wald and repeated-measures estimators bootstrap cleanly") {
    LinearDgpParams one;
    one.T = 1;
    const SimOutput sim = simulate_linear(one, 500, 515010);
    const EstimateOptions opt;
    const BootstrapResult bw =
        bootstrap_estimate(sim.panel, EstimatorKind::WALD, opt, 100, 0.95, 7);
    CHECK(bw.replicates.cols == 1);
    CHECK(bw.failures * 10 <= bw.B);
    CHECK(bw.ci[0].first < bw.ci[0].second);
    CHECK(std::isfinite(bw.cov(0, 0)));

    // instrument-driven repeated outcomes
    const std::size_t n = 600, T = 2;
    Rng rng(515011);
    LongitudinalPanel rp;
    rp.n = n;
    rp.T = T;
    rp.repeated_y = true;
    rp.a.resize(n * T);
    rp.z.resize(n * T);
    rp.y.resize(n * T);
    for (std::size_t i = 0; i < n; ++i) {
        double cum = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double zi = rng.bernoulli(0.5) ? 1.0 : 0.0;
            const double ai = rng.bernoulli(0.3 + 0.4 * zi) ? 1.0 : 0.0;
            rp.z[i * T + t] = zi;
            rp.a[i * T + t] = ai;
            cum += ai;
            rp.y[i * T + t] = 0.5 + 0.25 * cum + 0.05 * rng.normal();
        }
    }
    const BootstrapResult br = bootstrap_estimate(
        rp, EstimatorKind::REPEATED_MEASURES_IV, opt, 100, 0.95, 8);
    CHECK(br.replicates.cols == 2);
    CHECK(br.ci[1].first < 0.25);
    CHECK(br.ci[1].second > 0.25);
}

TEST_CASE("combined report wires estimates, sandwich, and bootstrap together") {
    const SimOutput sim = simulate_linear({}, 3000, 515012);
    InferOptions io;
    io.B = 200;
    io.seed = 515013;
    const InferenceReport r = infer(sim.panel, EstimatorKind::IV, io);

    REQUIRE(r.has_sandwich);
    REQUIRE(r.has_bootstrap);
    CHECK(r.B == 200);
    CHECK(r.level == 0.95);
    CHECK(r.est.se == r.sandwich_se);
    const double zq = normal_quantile(0.975);
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(r.sandwich_se[j] == std::sqrt(r.sandwich_cov(j, j)));
        CHECK(r.ci_sandwich[j].first ==
              doctest::Approx(r.est.beta[j] - zq * r.sandwich_se[j]).epsilon(1e-12));
        CHECK(r.ci_sandwich[j].second ==
              doctest::Approx(r.est.beta[j] + zq * r.sandwich_se[j]).epsilon(1e-12));
    }
    // the two interval machines agree on scale for a well-behaved design
    CHECK(std::abs(r.bootstrap_se[1] / r.sandwich_se[1] - 1.0) < 0.25);

    // same seed reproduces everything
    const InferenceReport r2 = infer(sim.panel, EstimatorKind::IV, io);
    CHECK(r2.est.beta[1] == r.est.beta[1]);
    CHECK(r2.sandwich_se[1] == r.sandwich_se[1]);
    CHECK(r2.ci_bootstrap[1].first == r.ci_bootstrap[1].first);
    CHECK(r2.ci_bootstrap[1].second == r.ci_bootstrap[1].second);
}

TEST_CASE("reduced sandwich for fitted regime weights is conservative") {
    // fitted-weight uncertainty is ignored by the reduced sandwich, which
    // should widen intervals relative to a bootstrap that refits per draw
    const SimOutput sim = simulate_markov({}, 1500, 515014);
    InferOptions io;
    io.B = 150;
    io.seed = 515015;
    const InferenceReport r = infer(sim.panel, EstimatorKind::SRA, io);
    REQUIRE(r.has_sandwich);
    REQUIRE(r.has_bootstrap);
    const double w_sw = r.ci_sandwich[1].second - r.ci_sandwich[1].first;
    const double w_bs = r.ci_bootstrap[1].second - r.ci_bootstrap[1].first;
    CHECK(w_sw > w_bs);
}

TEST_CASE("coverage experiment validates its configuration") {
    CoverageConfig cfg;
    cfg.R = 0;
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.R = 99;
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.R = 100;
    cfg.B = 50;
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.B = 0;
    cfg.kinds = {EstimatorKind::WALD};
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.kinds = {};
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.kinds = {EstimatorKind::IV};
    cfg.n_grid = {};
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
    cfg.n_grid = {200};
    cfg.dgp = DgpKind::CONTINUOUS;
    cfg.T_grid = {2};  // the continuous process is single-period
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
}

TEST_CASE("coverage experiment summarizes replications") {
    CoverageConfig cfg;
    cfg.kinds = {EstimatorKind::ORACLE, EstimatorKind::ASSOCIATIONAL};
    cfg.n_grid = {500};
    cfg.T_grid = {2};
    cfg.R = 100;
    cfg.seed = 515016;
    const std::vector<CoverageRow> rows = coverage_experiment(cfg);
    REQUIRE(rows.size() == 2);

    const CoverageRow& oracle = rows[0];
    CHECK(oracle.dgp == "linear");
    CHECK(oracle.kind == EstimatorKind::ORACLE);
    CHECK(oracle.n == 500);
    CHECK(oracle.T == 2);
    CHECK(oracle.R == 100);
    CHECK(oracle.seed == 515016);
    CHECK(!oracle.has_bootstrap);
    CHECK(oracle.mc_sd > 0.0);
    CHECK(oracle.sw_sd > 0.0);
    CHECK(std::abs(oracle.bias) < 0.5);
    CHECK(oracle.sw_cover >= 0.80);
    CHECK(oracle.sw_cover <= 1.0);

    // ignoring confounding misses the target almost always
    const CoverageRow& naive = rows[1];
    CHECK(naive.kind == EstimatorKind::ASSOCIATIONAL);
    CHECK(naive.sw_cover < 0.8);

    // reproducible end to end
    const std::vector<CoverageRow> again = coverage_experiment(cfg);
    CHECK(again[0].bias == oracle.bias);
    CHECK(again[0].sw_cover == oracle.sw_cover);

    // two-state process with a fitted treatment chain and a bootstrap
    CoverageConfig mk;
    mk.dgp = DgpKind::MARKOV;
    mk.kinds = {EstimatorKind::IV};
    mk.n_grid = {150};
    mk.T_grid = {2};
    mk.R = 100;
    mk.B = 100;
    mk.seed = 515017;
    const std::vector<CoverageRow> mrows = coverage_experiment(mk);
    REQUIRE(mrows.size() == 1);
    CHECK(mrows[0].dgp == "markov");
    CHECK(mrows[0].has_bootstrap);
    CHECK(mrows[0].bs_sd > 0.0);
    CHECK(mrows[0].bs_cover >= 0.0);
    CHECK(mrows[0].bs_cover <= 1.0);
    CHECK(mrows[0].sw_cover >= 0.0);
    CHECK(mrows[0].sw_cover <= 1.0);

    SUBCASE("csv round trip") {
        CHECK(coverage_csv_header() ==
              "dgp,kind,n,T,R,bias,mc_sd,sw_sd,bs_sd,sw_cover,bs_cover,seed");
        const std::string line = coverage_csv_row(oracle);
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) fields.push_back(item);
        if (line.back() == ',') fields.push_back("");
        REQUIRE(fields.size() == 12);
        CHECK(fields[0] == "linear");
        CHECK(fields[1] == "oracle");
        CHECK(fields[2] == "500");
        CHECK(fields[8].empty());   // no bootstrap columns without a bootstrap
        CHECK(fields[10].empty());
        CHECK(fields[11] == "515016");
        CHECK(std::strtod(fields[5].c_str(), nullptr) == oracle.bias);

        const std::string mline = coverage_csv_row(mrows[0]);
        std::vector<std::string> mfields;
        std::stringstream ms(mline);
        while (std::getline(ms, item, ',')) mfields.push_back(item);
        REQUIRE(mfields.size() == 12);
        CHECK(!mfields[8].empty());
        CHECK(!mfields[10].empty());

        const std::string path = "coverage_test_rows.csv";
        write_coverage_csv(path, rows);
        std::ifstream f(path);
        REQUIRE(f.good());
        std::string header;
        std::getline(f, header);
        CHECK(header == coverage_csv_header());
        std::size_t count = 0;
        std::string row;
        while (std::getline(f, row)) ++count;
        CHECK(count == rows.size());
        f.close();
        std::remove(path.c_str());
    }
}

TEST_CASE("coverage rows are identical for any worker count") {
    CoverageConfig cfg;
    cfg.dgp = DgpKind::LINEAR;
    cfg.kinds = {EstimatorKind::ASSOCIATIONAL};
    cfg.n_grid = {200};
    cfg.R = 100;
    cfg.seed = 91;
    const std::vector<CoverageRow> serial = coverage_experiment(cfg);
    cfg.jobs = 4;
    const std::vector<CoverageRow> threaded = coverage_experiment(cfg);
    REQUIRE(serial.size() == threaded.size());
    for (std::size_t i = 0; i < serial.size(); ++i)
        CHECK(coverage_csv_row(serial[i]) == coverage_csv_row(threaded[i]));
    cfg.jobs = 0;
    CHECK_THROWS_AS(coverage_experiment(cfg), InvalidParams);
}
