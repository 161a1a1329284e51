#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "ivmsm/estimators.hpp"
#include "ivmsm/numerics.hpp"
#include "ivmsm/rng.hpp"
#include "ivmsm/simulate.hpp"

using namespace ivmsm;

namespace {

// terminal-outcome panel from per-subject (a_1..a_T, z_1..z_T, y) rows
LongitudinalPanel panel_from_rows(const std::vector<std::vector<double>>& a_rows,
                                  const std::vector<std::vector<double>>& z_rows,
                                  const std::vector<double>& y) {
    LongitudinalPanel p;
    p.n = a_rows.size();
    p.T = a_rows[0].size();
    p.k = 0;
    for (const auto& r : a_rows) p.a.insert(p.a.end(), r.begin(), r.end());
    for (const auto& r : z_rows) p.z.insert(p.z.end(), r.begin(), r.end());
    p.y = y;
    for (double v : p.a)
        if (v != 0.0 && v != 1.0) p.binary_treatment = false;
    return p;
}

// sup-norm of P_n h (y - x'beta) / wbar, and the matching scale
double residual_sup(const LongitudinalPanel& p, const WeightSet& ws, const MsmmSpec& spec,
                    const std::vector<double>& beta, double* scale_out = nullptr) {
    const std::vector<double> inv = ws.inverse_wbar();
    std::vector<double> resid(beta.size(), 0.0), scale(beta.size(), 0.0);
    for (std::size_t i = 0; i < p.n; ++i) {
        const std::vector<double> path = p.treatment_path(i);
        const std::vector<double> h = design_row(spec, path);
        const double r = p.y_terminal(i) - mean_value(spec, beta, path);
        for (std::size_t j = 0; j < h.size(); ++j) {
            resid[j] += h[j] * r * inv[i];
            scale[j] += std::abs(h[j] * p.y_terminal(i) * inv[i]);
        }
    }
    double sup = 0.0, sc = 1.0;
    for (std::size_t j = 0; j < beta.size(); ++j) {
        sup = std::max(sup, std::abs(resid[j]) / (double)p.n);
        sc = std::max(sc, scale[j] / (double)p.n);
    }
    if (scale_out) *scale_out = sc;
    return sup;
}

// 2x2 Cramer solve used as the hand oracle for normal equations
std::vector<double> cramer2(double m00, double m01, double m10, double m11, double v0,
                            double v1) {
    const double det = m00 * m11 - m01 * m10;
    return {(v0 * m11 - v1 * m01) / det, (m00 * v1 - m10 * v0) / det};
}

struct MeanSe {
    double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
    MeanSe r;
    for (double v : x) r.mean += v;
    r.mean /= (double)x.size();
    double ss = 0.0;
    for (double v : x) ss += (v - r.mean) * (v - r.mean);
    r.se = std::sqrt(ss / ((double)x.size() - 1.0) / (double)x.size());
    return r;
}

}  // namespace

TEST_CASE("weighted least squares interpolates a noiseless cumulative outcome") {
    const std::size_t n = 48, T = 2;
    std::vector<std::vector<double>> a(n), z(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = {(double)(i & 1), (double)((i >> 1) & 1)};
        z[i] = {0.0, 1.0};
        y[i] = 1.0 + 2.0 * (a[i][0] + a[i][1]);
    }
    LongitudinalPanel p = panel_from_rows(a, z, y);
    MsmmSpec spec;
    const std::vector<double> beta = wls_estimate(p, unit_weights(p), spec);
    REQUIRE(beta.size() == 2);
    CHECK(std::abs(beta[0] - 1.0) < 1e-12);
    CHECK(std::abs(beta[1] - 2.0) < 1e-12);
    CHECK(residual_sup(p, unit_weights(p), spec, beta) < 1e-13);
}

TEST_CASE("three-subject system matches hand-solved normal equations") {
    LongitudinalPanel p = panel_from_rows({{0.0}, {1.0}, {1.0}}, {{0.0}, {1.0}, {0.0}},
                                          {1.0, 3.5, 2.5});
    const std::vector<double> pr = {0.4, 0.7, 0.25};  // P(A=1) per subject
    WeightSet ws = sra_weights(
        p, [&pr](const LongitudinalPanel&, std::size_t i, std::size_t) { return pr[i]; });
    // observed weights: subject 0 took a=0 so w0 = 1 - 0.4
    const double i0 = 1.0 / 0.6, i1 = 1.0 / 0.7, i2 = 1.0 / 0.25;
    const std::vector<double> hand =
        cramer2((i0 + i1 + i2) / 3.0, (i1 + i2) / 3.0, (i1 + i2) / 3.0, (i1 + i2) / 3.0,
                (i0 * 1.0 + i1 * 3.5 + i2 * 2.5) / 3.0, (i1 * 3.5 + i2 * 2.5) / 3.0);
    const std::vector<double> beta = wls_estimate(p, ws, MsmmSpec{});
    CHECK(std::abs(beta[0] - hand[0]) < 1e-12);
    CHECK(std::abs(beta[1] - hand[1]) < 1e-12);
}

TEST_CASE("unit weights reproduce ordinary least squares") {
    SimOutput sim = simulate_linear(LinearDgpParams{}, 3000, 91001);
    const LongitudinalPanel& p = sim.panel;
    double s1 = 0.0, sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < p.n; ++i) {
        const double x = p.a_at(i, 0) + p.a_at(i, 1), y = p.y_terminal(i);
        s1 += 1.0;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    const std::vector<double> ols = cramer2(s1, sx, sx, sxx, sy, sxy);
    const std::vector<double> beta = wls_estimate(p, unit_weights(p), MsmmSpec{});
    CHECK(std::abs(beta[0] - ols[0]) < 1e-9 * std::abs(ols[0]));
    CHECK(std::abs(beta[1] - ols[1]) < 1e-9 * std::abs(ols[1]));

    EstimateReport rep = estimate(p, EstimatorKind::ASSOCIATIONAL);
    CHECK(rep.beta[0] == beta[0]);
    CHECK(rep.beta[1] == beta[1]);
    CHECK(rep.weight_second_moment == 1.0);
    CHECK(rep.max_abs_inverse_weight == 1.0);
    CHECK(rep.design_condition > 1.0);
    CHECK(rep.n == p.n);
    CHECK(rep.T == p.T);
}

TEST_CASE("rescaling the index function leaves the solution unchanged") {
    SimOutput sim = simulate_linear(LinearDgpParams{}, 2000, 91002);
    const LongitudinalPanel& p = sim.panel;
    WeightSet ws = iv_weights(
        p, [](const LongitudinalPanel&, std::size_t, std::size_t) { return 0.5; },
        [](const LongitudinalPanel& q, std::size_t i, std::size_t t, double a) {
            const double d = normal_cdf(0.3 + 0.3 * q.l_at(i, t, 0));
            return a == 1.0 ? d : -d;
        });
    MsmmSpec base;
    const std::vector<double> b0 = wls_estimate(p, ws, base);

    auto scaled_spec = [](double c) {
        MsmmSpec s;
        s.index = [c](const std::vector<double>& path) {
            return std::vector<double>{c, c * path_sum(path)};
        };
        return s;
    };
    // power-of-two scalings commute exactly with every arithmetic step
    for (double c : {0.5, 2.0, 1024.0}) {
        const std::vector<double> b = wls_estimate(p, ws, scaled_spec(c));
        CHECK(b[0] == b0[0]);
        CHECK(b[1] == b0[1]);
    }
    const std::vector<double> b = wls_estimate(p, ws, scaled_spec(3.7));
    CHECK(std::abs(b[0] - b0[0]) <= 1e-12 * std::max(1.0, std::abs(b0[0])));
    CHECK(std::abs(b[1] - b0[1]) <= 1e-12 * std::max(1.0, std::abs(b0[1])));
}

TEST_CASE("estimating-equation residual vanishes at the solution for every kind") {
    SimOutput lin = simulate_linear(LinearDgpParams{}, 4000, 91003);
    EstimateOptions opt;
    opt.truth = &lin.truth;
    for (EstimatorKind kind :
         {EstimatorKind::ASSOCIATIONAL, EstimatorKind::SRA, EstimatorKind::SRA_STABILIZED,
          EstimatorKind::ORACLE, EstimatorKind::IV}) {
        WeightSet ws = build_weights(lin.panel, kind, opt);
        const std::vector<double> beta = wls_estimate(lin.panel, ws, opt.spec);
        double scale = 1.0;
        const double sup = residual_sup(lin.panel, ws, opt.spec, beta, &scale);
        CHECK(sup <= 1e-10 * scale);
    }

    SimOutput mk = simulate_markov(MarkovDgpParams{}, 4000, 91004);
    EstimateOptions mopt;
    mopt.markov_treatment = true;
    mopt.truth = &mk.truth;
    for (EstimatorKind kind : {EstimatorKind::IV, EstimatorKind::IV_STABILIZED}) {
        WeightSet ws = build_weights(mk.panel, kind, mopt);
        const std::vector<double> beta = wls_estimate(mk.panel, ws, mopt.spec);
        double scale = 1.0;
        const double sup = residual_sup(mk.panel, ws, mopt.spec, beta, &scale);
        CHECK(sup <= 1e-10 * scale);
    }
}

TEST_CASE("constant treatment paths raise SingularDesign") {
    const std::size_t n = 20;
    std::vector<std::vector<double>> a(n, {1.0, 1.0}), z(n, {0.0, 1.0});
    std::vector<double> y(n, 3.0);
    LongitudinalPanel p = panel_from_rows(a, z, y);
    CHECK_THROWS_AS((void)wls_estimate(p, unit_weights(p), MsmmSpec{}), SingularDesign);
    CHECK_THROWS_AS((void)estimate(p, EstimatorKind::ASSOCIATIONAL), SingularDesign);
}

TEST_CASE("beta_dim must match the basis rows actually produced") {
    std::vector<std::vector<double>> a{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
    std::vector<std::vector<double>> z(3, {0.0, 1.0});
    LongitudinalPanel p = panel_from_rows(a, z, {1.0, 2.0, 3.0});
    MsmmSpec spec;
    spec.beta_dim = 1;  // but the cumulative default produces (1, sum a)
    CHECK_THROWS_AS((void)wls_estimate(p, unit_weights(p), spec), InvalidParams);
    spec.mean_model = MeanModel::LINEAR_GENERAL;
    spec.basis = [](const std::vector<double>& path) {
        return std::vector<double>{path_sum(path)};
    };
    const std::vector<double> b = wls_estimate(p, unit_weights(p), spec);
    REQUIRE(b.size() == 1);
    // no-intercept least squares of y on sum(a): sum(xy)/sum(x^2)
    CHECK(b[0] == doctest::Approx((1.0 + 2.0 + 6.0) / (1.0 + 1.0 + 4.0)).epsilon(1e-13));
}

TEST_CASE("wald estimator matches hand-computed ratios") {
    LongitudinalPanel p1 = panel_from_rows({{1.0}, {1.0}, {0.0}, {0.0}},
                                           {{1.0}, {1.0}, {0.0}, {0.0}},
                                           {3.0, 3.0, 1.0, 1.0});
    CHECK(wald_estimate(p1) == doctest::Approx(2.0).epsilon(1e-14));
    EstimateReport rep = estimate(p1, EstimatorKind::WALD);
    CHECK(rep.beta.size() == 1);
    CHECK(rep.beta[0] == doctest::Approx(2.0).epsilon(1e-14));

    // perfect compliance with unbalanced groups
    LongitudinalPanel p2 = panel_from_rows({{1.0}, {1.0}, {1.0}, {0.0}, {0.0}},
                                           {{1.0}, {1.0}, {1.0}, {0.0}, {0.0}},
                                           {5.0, 5.0, 5.0, 0.0, 0.0});
    CHECK(wald_estimate(p2) == doctest::Approx(5.0).epsilon(1e-14));

    LongitudinalPanel p3 = panel_from_rows({{1.0}, {0.0}, {0.0}, {1.0}},
                                           {{1.0}, {1.0}, {0.0}, {0.0}},
                                           {3.0, 1.0, 1.0, 1.0});
    CHECK_THROWS_AS((void)wald_estimate(p3), ZeroDenominator);

    LongitudinalPanel p4 = panel_from_rows({{1.0}, {0.0}}, {{1.0}, {1.0}}, {1.0, 0.0});
    CHECK_THROWS_AS((void)wald_estimate(p4), InvalidParams);  // one group empty

    SimOutput lin = simulate_linear(LinearDgpParams{}, 50, 91005);
    CHECK_THROWS_AS((void)wald_estimate(lin.panel), InvalidParams);  // T != 1
}

TEST_CASE("wald ratio and signed-weight forms coincide on random data") {
    Rng rng(91006);
    std::size_t tested = 0;
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 20 + (std::size_t)(rng.uniform() * 180.0);
        std::vector<std::vector<double>> a(n), z(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double zi = rng.bernoulli(0.3 + 0.4 * rng.uniform()) ? 1.0 : 0.0;
            const double ai =
                rng.bernoulli(zi == 1.0 ? 0.75 : 0.25) ? 1.0 : 0.0;
            z[i] = {zi};
            a[i] = {ai};
            y[i] = 1.0 + 2.0 * ai + rng.normal();
        }
        LongitudinalPanel p = panel_from_rows(a, z, y);
        WaldForms f{};
        try {
            f = wald_forms(p);
        } catch (const ZeroDenominator&) {
            continue;
        }
        CHECK(std::abs(f.ratio - f.weighted) <= 1e-12 * std::max(1.0, std::abs(f.ratio)));
        ++tested;
    }
    CHECK(tested >= 25);
}

TEST_CASE("stacked repeated-measures estimator recovers its generating line") {
    // exact interpolation without noise
    {
        const std::size_t n = 64, T = 2;
        LongitudinalPanel p;
        p.n = n;
        p.T = T;
        p.repeated_y = true;
        p.a.resize(n * T);
        p.z.assign(n * T, 0.0);
        p.y.resize(n * T);
        for (std::size_t i = 0; i < n; ++i) {
            p.a[i * T] = (double)(i & 1);
            p.a[i * T + 1] = (double)((i >> 1) & 1);
            double cum = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                cum += p.a[i * T + t];
                p.y[i * T + t] = 0.01 + 0.0003 * cum;
            }
        }
        const std::vector<double> beta = repeated_measures_iv_estimate(p, unit_weights(p));
        CHECK(std::abs(beta[0] - 0.01) < 1e-13);
        CHECK(std::abs(beta[1] - 0.0003) < 1e-13);
    }

    // instrument-driven treatment, no confounding: replicated recovery
    {
        const std::size_t n = 20000, T = 2;
        const double delta = 0.4;
        std::vector<double> b0s, b1s;
        for (int rep = 0; rep < 12; ++rep) {
            Rng rng = Rng::substream(91007, (std::uint64_t)rep);
            LongitudinalPanel p;
            p.n = n;
            p.T = T;
            p.repeated_y = true;
            p.a.resize(n * T);
            p.z.resize(n * T);
            p.y.resize(n * T);
            for (std::size_t i = 0; i < n; ++i) {
                double cum = 0.0;
                for (std::size_t t = 0; t < T; ++t) {
                    const double zi = rng.bernoulli(0.5) ? 1.0 : 0.0;
                    const double ai =
                        rng.bernoulli(0.5 * (1.0 - delta) + zi * delta) ? 1.0 : 0.0;
                    p.z[i * T + t] = zi;
                    p.a[i * T + t] = ai;
                    cum += ai;
                    p.y[i * T + t] = 0.01 + 0.0003 * cum + 0.05 * rng.normal();
                }
            }
            WeightSet ws = iv_weights(
                p, [](const LongitudinalPanel&, std::size_t, std::size_t) { return 0.5; },
                [delta](const LongitudinalPanel&, std::size_t, std::size_t, double a) {
                    return a == 1.0 ? delta : -delta;
                });
            const std::vector<double> beta = repeated_measures_iv_estimate(p, ws);
            b0s.push_back(beta[0]);
            b1s.push_back(beta[1]);

            if (rep == 0) {
                // unit weights reduce to pooled least squares on stacked rows
                double s1 = 0.0, sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double cum = 0.0;
                    for (std::size_t t = 0; t < T; ++t) {
                        cum += p.a_at(i, t);
                        const double yv = p.y_at(i, t);
                        s1 += 1.0;
                        sx += cum;
                        sxx += cum * cum;
                        sy += yv;
                        sxy += cum * yv;
                    }
                }
                const std::vector<double> ols = cramer2(s1, sx, sx, sxx, sy, sxy);
                const std::vector<double> pooled =
                    repeated_measures_iv_estimate(p, unit_weights(p));
                CHECK(std::abs(pooled[0] - ols[0]) < 1e-9 * std::max(1.0, std::abs(ols[0])));
                CHECK(std::abs(pooled[1] - ols[1]) < 1e-9 * std::max(1.0, std::abs(ols[1])));
            }
        }
        const MeanSe m0 = mean_se(b0s), m1 = mean_se(b1s);
        CHECK(std::abs(m0.mean - 0.01) < 3.0 * m0.se);
        CHECK(std::abs(m1.mean - 0.0003) < 3.0 * m1.se);
    }

    // degenerate all-zero treatment
    {
        const std::size_t n = 10, T = 2;
        LongitudinalPanel p;
        p.n = n;
        p.T = T;
        p.repeated_y = true;
        p.a.assign(n * T, 0.0);
        p.z.assign(n * T, 0.0);
        p.y.assign(n * T, 1.0);
        CHECK_THROWS_AS((void)repeated_measures_iv_estimate(p, unit_weights(p)),
                        SingularDesign);
    }

    SimOutput lin = simulate_linear(LinearDgpParams{}, 100, 91008);
    CHECK_THROWS_AS((void)repeated_measures_iv_estimate(lin.panel, unit_weights(lin.panel)),
                    InvalidParams);  // terminal-outcome panel
}

TEST_CASE("estimator menu orders bias as expected on the confounded linear process") {
    const LinearDgpParams prm;
    const std::size_t n = 30000;
    SimOutput sim = simulate_linear(prm, n, 91009);
    EstimateOptions opt;
    opt.truth = &sim.truth;

    const double assoc = estimate(sim.panel, EstimatorKind::ASSOCIATIONAL, opt).beta[1];
    const double sra = estimate(sim.panel, EstimatorKind::SRA, opt).beta[1];
    const double oracle = estimate(sim.panel, EstimatorKind::ORACLE, opt).beta[1];
    const double iv = estimate(sim.panel, EstimatorKind::IV, opt).beta[1];

    const std::vector<double> th_assoc =
        theoretical_bias(EstimatorKind::ASSOCIATIONAL, prm, 200000, 91010);
    const std::vector<double> th_sra =
        theoretical_bias(EstimatorKind::SRA, prm, 200000, 91011);

    // material confounding in both naive kinds
    CHECK(std::abs(th_assoc[1]) > 0.05);
    CHECK(std::abs(th_sra[1]) > 0.05);
    // empirical estimates sit near their theoretical limits
    CHECK(std::abs(assoc - 1.0 - th_assoc[1]) < 0.05);
    CHECK(std::abs(sra - 1.0 - th_sra[1]) < 0.05);
    // consistent kinds sit near the truth
    CHECK(std::abs(oracle - 1.0) < 0.05);
    CHECK(std::abs(iv - 1.0) < 0.15);
    CHECK(std::abs(assoc - 1.0) > 2.0 * std::abs(iv - 1.0));
}

TEST_CASE("without latent confounding the SRA and oracle estimators agree") {
    LinearDgpParams prm;
    prm.nu2 = 0.0;
    SimOutput sim = simulate_linear(prm, 30000, 91012);
    EstimateOptions opt;
    opt.truth = &sim.truth;
    const double sra = estimate(sim.panel, EstimatorKind::SRA, opt).beta[1];
    const double stab = estimate(sim.panel, EstimatorKind::SRA_STABILIZED, opt).beta[1];
    const double oracle = estimate(sim.panel, EstimatorKind::ORACLE, opt).beta[1];
    CHECK(std::abs(sra - oracle) < 0.05);
    CHECK(std::abs(sra - 1.0) < 0.06);
    CHECK(std::abs(stab - 1.0) < 0.06);
    CHECK(std::abs(oracle - 1.0) < 0.05);
}

TEST_CASE("oracle weighting is consistent on the two-state process") {
    SimOutput sim = simulate_markov(MarkovDgpParams{}, 30000, 91013);
    EstimateOptions opt;
    opt.truth = &sim.truth;
    const double oracle = estimate(sim.panel, EstimatorKind::ORACLE, opt).beta[1];
    CHECK(std::abs(oracle - 1.0) < 0.06);

    opt.markov_treatment = true;
    EstimateReport rep = estimate(sim.panel, EstimatorKind::IV, opt);
    CHECK(std::abs(rep.beta[1] - 1.0) < 0.25);
    CHECK(rep.weight_second_moment > 1.0);
    CHECK(rep.max_abs_inverse_weight >= 1.0);

    const double stab = estimate(sim.panel, EstimatorKind::IV_STABILIZED, opt).beta[1];
    CHECK(std::abs(stab - 1.0) < 0.25);
}

TEST_CASE("continuous-treatment estimation uses the true density difference") {
    SimOutput sim = simulate_continuous(4000, 91014);
    EstimateOptions opt;
    opt.truth = &sim.truth;
    EstimateReport rep = estimate(sim.panel, EstimatorKind::IV, opt);
    // heavy-tailed sampling noise: a single fit only brackets the truth loosely
    CHECK(std::abs(rep.beta[1] - 2.0) < 1.5);

    EstimateOptions bare;
    CHECK_THROWS_AS((void)estimate(sim.panel, EstimatorKind::IV, bare), InvalidParams);
    CHECK_THROWS_AS((void)estimate(sim.panel, EstimatorKind::IV_STABILIZED, opt),
                    InvalidParams);
}

TEST_CASE("supplied nuisance fits reproduce the internal pipeline") {
    SimOutput sim = simulate_linear(LinearDgpParams{}, 5000, 91015);
    const LongitudinalPanel& p = sim.panel;
    NuisanceFit fit = fit_probit_treatment(p, default_alpha_covariates(p),
                                           default_alpha_covariates(p));
    EstimateOptions with;
    with.treatment_fit = &fit;
    EstimateReport a = estimate(p, EstimatorKind::IV, with);
    EstimateReport b = estimate(p, EstimatorKind::IV, EstimateOptions{});
    CHECK(a.beta[0] == b.beta[0]);
    CHECK(a.beta[1] == b.beta[1]);

    // fitted instrument density close to the known half
    NuisanceFit zfit = fit_logistic_iv_density(p, {});
    EstimateOptions withz = with;
    withz.iv_density_fit = &zfit;
    EstimateReport c = estimate(p, EstimatorKind::IV, withz);
    CHECK(std::abs(c.beta[1] - a.beta[1]) < 0.05);
}

TEST_CASE("nuisance-backed callables evaluate their fitted formulas") {
    LongitudinalPanel p;
    p.n = 1;
    p.T = 2;
    p.k = 1;
    p.a = {1.0, 0.0};
    p.z = {1.0, 0.0};
    p.l = {0.8, -0.4};
    p.y = {0.0};

    NuisanceFit probit;
    probit.kind = NuisanceFit::Kind::PROBIT_TREATMENT;
    probit.alpha = {0.3, 0.3};
    DeltaFn d = delta_fn_from_fit(probit);
    CHECK(d(p, 0, 0, 1.0) == doctest::Approx(normal_cdf(0.3 + 0.3 * 0.8)).epsilon(1e-14));
    CHECK(d(p, 0, 0, 0.0) ==
          doctest::Approx(-normal_cdf(0.3 + 0.3 * 0.8)).epsilon(1e-14));
    CHECK(d(p, 0, 1, 1.0) ==
          doctest::Approx(normal_cdf(0.3 - 0.3 * 0.4)).epsilon(1e-14));

    NuisanceFit markov;
    markov.kind = NuisanceFit::Kind::MARKOV_TREATMENT;
    markov.alpha = {0.2, 0.4};
    markov.nu = {0.7};
    LongitudinalPanel q = p;
    q.l = {1.0, 0.0};
    DeltaFn dm = delta_fn_from_fit(markov);
    CHECK(dm(q, 0, 0, 1.0) == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(dm(q, 0, 1, 0.0) == doctest::Approx(-0.2).epsilon(1e-14));

    GammaFn g = markov_default_gamma(markov);
    CHECK(g(q, 0, 0) == doctest::Approx(0.7 * 0.2 + 0.3 * 0.4).epsilon(1e-14));  // prev=0
    CHECK(g(q, 0, 1) == doctest::Approx(0.7 * 0.4 + 0.3 * 0.2).epsilon(1e-14));  // prev=1

    ProbabilityFn half = fz_fn_from_fit(nullptr);
    CHECK(half(p, 0, 0) == 0.5);
    NuisanceFit logi;
    logi.kind = NuisanceFit::Kind::LOGISTIC_IV;
    logi.gamma = {0.5, -1.0};
    logi.gamma_known_half = false;
    ProbabilityFn fz = fz_fn_from_fit(&logi);
    const double idx = 0.5 - 1.0 * 0.8;
    CHECK(fz(p, 0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-idx))).epsilon(1e-14));

    NuisanceFit wrong;
    wrong.kind = NuisanceFit::Kind::LOGISTIC_IV;
    CHECK_THROWS_AS((void)delta_fn_from_fit(wrong), InvalidParams);
    CHECK_THROWS_AS((void)markov_default_gamma(wrong), InvalidParams);
    NuisanceFit notz;
    notz.kind = NuisanceFit::Kind::PROBIT_TREATMENT;
    CHECK_THROWS_AS((void)fz_fn_from_fit(&notz), InvalidParams);
}

TEST_CASE("oracle weighting demands latent columns and a known process") {
    SimOutput sim = simulate_linear(LinearDgpParams{}, 200, 91016);
    EstimateOptions none;
    CHECK_THROWS_AS((void)estimate(sim.panel, EstimatorKind::ORACLE, none), InvalidParams);

    LongitudinalPanel observed = drop_latent(sim.panel);
    EstimateOptions opt;
    opt.truth = &sim.truth;
    CHECK_THROWS_AS((void)estimate(observed, EstimatorKind::ORACLE, opt), InvalidParams);

    SimOutput cont = simulate_continuous(200, 91017);
    EstimateOptions copt;
    copt.truth = &cont.truth;
    CHECK_THROWS_AS((void)estimate(cont.panel, EstimatorKind::ORACLE, copt),
                    InvalidParams);

    CHECK_THROWS_AS((void)build_weights(sim.panel, EstimatorKind::WALD, none),
                    InvalidParams);
}

TEST_CASE("theoretical bias calculator matches empirical bias") {
    const LinearDgpParams prm;
    // the weighted kinds are unbiased by construction
    const std::vector<double> iv = theoretical_bias(EstimatorKind::IV, prm, 10, 1);
    CHECK(iv[0] == 0.0);
    CHECK(iv[1] == 0.0);
    CHECK_THROWS_AS((void)theoretical_bias(EstimatorKind::ORACLE, prm, 10, 1),
                    InvalidParams);

    // fully exogenous treatment: zero bias up to simulation noise
    LinearDgpParams exo;
    exo.nu1 = 0.0;
    exo.nu2 = 0.0;
    exo.alpha1 = 0.0;
    const std::vector<double> bexo =
        theoretical_bias(EstimatorKind::ASSOCIATIONAL, exo, 200000, 91018);
    CHECK(std::abs(bexo[1]) < 0.02);
    // nu1 = nu2 = 0 alone leaves a residual instrument-compliance interaction,
    // small but nonzero
    LinearDgpParams semi;
    semi.nu1 = 0.0;
    semi.nu2 = 0.0;
    const std::vector<double> bsemi =
        theoretical_bias(EstimatorKind::ASSOCIATIONAL, semi, 200000, 91019);
    CHECK(std::abs(bsemi[1]) < 0.05);

    // two independent Monte Carlo routes to the associational bias agree
    std::vector<double> emp;
    for (int rep = 0; rep < 5; ++rep) {
        SimOutput sim = simulate_linear(prm, 100000, derive_seed(91020, (std::uint64_t)rep));
        emp.push_back(estimate(sim.panel, EstimatorKind::ASSOCIATIONAL).beta[1] - 1.0);
    }
    const MeanSe memp = mean_se(emp);
    const std::vector<double> tha =
        theoretical_bias(EstimatorKind::ASSOCIATIONAL, prm, 100000, 91021);
    const std::vector<double> thb =
        theoretical_bias(EstimatorKind::ASSOCIATIONAL, prm, 100000, 91022);
    const double th_se = std::abs(tha[1] - thb[1]) / std::sqrt(2.0);
    const double th = 0.5 * (tha[1] + thb[1]);
    CHECK(std::abs(memp.mean - th) <=
          3.0 * std::sqrt(memp.se * memp.se + 0.5 * th_se * th_se) + 1e-3);
}

TEST_CASE("estimator kinds and reports serialize round trip") {
    for (EstimatorKind k :
         {EstimatorKind::ASSOCIATIONAL, EstimatorKind::SRA, EstimatorKind::SRA_STABILIZED,
          EstimatorKind::ORACLE, EstimatorKind::IV, EstimatorKind::IV_STABILIZED,
          EstimatorKind::WALD, EstimatorKind::REPEATED_MEASURES_IV})
        CHECK(estimator_kind_from_name(estimator_kind_name(k)) == k);
    CHECK_THROWS_AS((void)estimator_kind_from_name("ridge"), InvalidParams);

    CHECK(report_csv_header() == "kind,beta0,beta1,se0,se1,n,T,seed");
    EstimateReport rep;
    rep.kind = EstimatorKind::IV;
    rep.beta = {0.25, -1.5};
    rep.se = {0.125, 0.5};
    rep.n = 100;
    rep.T = 2;
    rep.seed = 42;
    CHECK(report_csv_row(rep) == "iv,0.25,-1.5,0.125,0.5,100,2,42");

    EstimateReport wald;
    wald.kind = EstimatorKind::WALD;
    wald.beta = {2.0};
    wald.n = 4;
    wald.T = 1;
    wald.seed = 7;
    CHECK(report_csv_row(wald) == "wald,,2,,,4,1,7");
}
