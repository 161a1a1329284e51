#include "ivmsm/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ivmsm/errors.hpp"
#include "ivmsm/numerics.hpp"

namespace ivmsm {

const char* estimator_kind_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::ASSOCIATIONAL: return "associational";
        case EstimatorKind::SRA: return "sra";
        case EstimatorKind::SRA_STABILIZED: return "sra_stabilized";
        case EstimatorKind::ORACLE: return "oracle";
        case EstimatorKind::IV: return "iv";
        case EstimatorKind::IV_STABILIZED: return "iv_stabilized";
        case EstimatorKind::WALD: return "wald";
        case EstimatorKind::REPEATED_MEASURES_IV: return "repeated_measures_iv";
    }
    return "unknown";
}

EstimatorKind estimator_kind_from_name(const std::string& name) {
    for (EstimatorKind k :
         {EstimatorKind::ASSOCIATIONAL, EstimatorKind::SRA, EstimatorKind::SRA_STABILIZED,
          EstimatorKind::ORACLE, EstimatorKind::IV, EstimatorKind::IV_STABILIZED,
          EstimatorKind::WALD, EstimatorKind::REPEATED_MEASURES_IV})
        if (name == estimator_kind_name(k)) return k;
    throw InvalidParams("unknown estimator kind: " + name);
}

namespace {

std::vector<double> wls_core(const LongitudinalPanel& panel, const WeightSet& weights,
                             const MsmmSpec& spec, double* cond_out) {
    if (panel.repeated_y)
        throw InvalidParams("wls_estimate: terminal-outcome panels only");
    if (panel.n == 0) throw InvalidParams("wls_estimate: empty panel");
    if (weights.n != panel.n || weights.T != panel.T)
        throw InvalidParams("wls_estimate: weight set shape mismatch");
    const std::vector<double> inv = weights.inverse_wbar();
    std::size_t p = 0;
    Matrix M;
    std::vector<double> v;
    for (std::size_t i = 0; i < panel.n; ++i) {
        const std::vector<double> path = panel.treatment_path(i);
        const std::vector<double> h = design_row(spec, path);
        const std::vector<double> x = mean_basis_row(spec, path);
        if (i == 0) {
            p = h.size();
            if (x.size() != p)
                throw InvalidParams("wls_estimate: index and basis dimensions differ");
            if (p != spec.beta_dim)
                throw InvalidParams("wls_estimate: basis rows disagree with beta_dim");
            M = Matrix(p, p);
            v.assign(p, 0.0);
        }
        const double y = panel.y_terminal(i);
        for (std::size_t j = 0; j < p; ++j) {
            const double hj = h[j] * inv[i];
            for (std::size_t k = 0; k < p; ++k) M(j, k) += hj * x[k];
            v[j] += hj * y;
        }
    }
    const double ninv = 1.0 / (double)panel.n;
    for (double& m : M.a) m *= ninv;
    for (double& w : v) w *= ninv;
    const double cond = cond_1norm(M);
    if (cond_out) *cond_out = cond;
    if (!(cond < 1e12))
        throw SingularDesign("wls_estimate: weighted design is numerically singular");
    return solve_linear(M, v);
}

}  // namespace

std::vector<double> wls_estimate(const LongitudinalPanel& panel, const WeightSet& weights,
                                 const MsmmSpec& spec) {
    return wls_core(panel, weights, spec, nullptr);
}

namespace {

CovariateSpec observed_covariates(const LongitudinalPanel& panel) {
    // (1, l1..lk): estimation never touches latent columns
    return default_alpha_covariates(panel);
}

CovariateSpec previous_treatment_covariates() {
    CovariateSpec s;
    s.d = 2;
    s.fill = [](const LongitudinalPanel& p, std::size_t i, std::size_t t, double* out) {
        out[0] = 1.0;
        out[1] = t == 0 ? 0.0 : p.a_at(i, t - 1);
    };
    return s;
}

ProbabilityFn probability_fn_from_probit(const NuisanceFit& fit, CovariateSpec spec) {
    std::vector<double> nu = fit.nu;
    return [nu, spec](const LongitudinalPanel& p, std::size_t i, std::size_t t) {
        std::vector<double> x(spec.d);
        spec.fill(p, i, t, x.data());
        double idx = 0.0;
        for (std::size_t j = 0; j < spec.d; ++j) idx += nu[j] * x[j];
        return normal_cdf(idx);
    };
}

ProbabilityFn oracle_propensity(const DgpTruth& truth) {
    switch (truth.kind) {
        case DgpKind::LINEAR: {
            LinearDgpParams lp = truth.linear;
            return [lp](const LongitudinalPanel& p, std::size_t i, std::size_t t) {
                const double l = p.l_at(i, t, 0);
                const double u = p.u_at(i, t, 0);
                const double d = normal_cdf(lp.alpha0 + lp.alpha1 * l);
                const double base = normal_cdf(lp.nu0 + lp.nu1 * l + lp.nu2 * u);
                return base * (1.0 - d) + 0.5 * d;
            };
        }
        case DgpKind::MARKOV: {
            MarkovDgpParams mp = truth.markov;
            return [mp](const LongitudinalPanel& p, std::size_t i, std::size_t t) {
                return markov_base_prob(mp, 1, (int)p.l_at(i, t, 0),
                                        (int)p.u_at(i, t, 0));
            };
        }
        default:
            throw InvalidParams("oracle weights: binary-treatment processes only");
    }
}

}  // namespace

DeltaFn delta_fn_from_fit(const NuisanceFit& fit, const CovariateSpec& alpha_spec) {
    if (fit.kind == NuisanceFit::Kind::MARKOV_TREATMENT) {
        const double d0 = fit.alpha[0], d1 = fit.alpha[1];
        return [d0, d1](const LongitudinalPanel& p, std::size_t i, std::size_t t,
                        double a) {
            const double d = p.l_at(i, t, 0) == 1.0 ? d1 : d0;
            return a == 1.0 ? d : -d;
        };
    }
    if (fit.kind != NuisanceFit::Kind::PROBIT_TREATMENT)
        throw InvalidParams("delta_fn_from_fit: fit has no compliance model");
    std::vector<double> alpha = fit.alpha;
    CovariateSpec spec = alpha_spec;
    return [alpha, spec](const LongitudinalPanel& p, std::size_t i, std::size_t t,
                         double a) {
        CovariateSpec s = spec.d ? spec : default_alpha_covariates(p);
        std::vector<double> x(s.d);
        s.fill(p, i, t, x.data());
        double idx = 0.0;
        for (std::size_t j = 0; j < s.d; ++j) idx += alpha[j] * x[j];
        const double d = normal_cdf(idx);
        return a == 1.0 ? d : -d;
    };
}

ProbabilityFn fz_fn_from_fit(const NuisanceFit* iv_density_fit, const CovariateSpec& spec) {
    if (!iv_density_fit)
        return [](const LongitudinalPanel&, std::size_t, std::size_t) { return 0.5; };
    if (iv_density_fit->kind != NuisanceFit::Kind::LOGISTIC_IV)
        throw InvalidParams("fz_fn_from_fit: expected an instrument density fit");
    std::vector<double> gamma = iv_density_fit->gamma;
    CovariateSpec cs = spec;
    return [gamma, cs](const LongitudinalPanel& p, std::size_t i, std::size_t t) {
        CovariateSpec s = cs.d ? cs : default_alpha_covariates(p);
        std::vector<double> x(s.d);
        s.fill(p, i, t, x.data());
        double idx = 0.0;
        for (std::size_t j = 0; j < s.d; ++j) idx += gamma[j] * x[j];
        return idx >= 0.0 ? 1.0 / (1.0 + std::exp(-idx))
                          : std::exp(idx) / (1.0 + std::exp(idx));
    };
}

CovariateSpec sra_marginal_covariates(const LongitudinalPanel& panel) {
    if (panel.T == 1) {  // no previous treatment: intercept-only marginal
        CovariateSpec s;
        s.d = 1;
        s.fill = [](const LongitudinalPanel&, std::size_t, std::size_t, double* out) {
            out[0] = 1.0;
        };
        return s;
    }
    return previous_treatment_covariates();
}

GammaFn markov_default_gamma(const NuisanceFit& markov_fit) {
    if (markov_fit.kind != NuisanceFit::Kind::MARKOV_TREATMENT)
        throw InvalidParams("markov_default_gamma: two-state fit required");
    const double d0 = markov_fit.alpha[0], d1 = markov_fit.alpha[1];
    const double pl = markov_fit.nu[0];
    const double g0 = pl * d0 + (1.0 - pl) * d1;
    const double g1 = pl * d1 + (1.0 - pl) * d0;
    return [g0, g1](const LongitudinalPanel& p, std::size_t i, std::size_t t) {
        const double prev = t == 0 ? 0.0 : p.a_at(i, t - 1);
        return prev == 1.0 ? g1 : g0;
    };
}

WeightBuild build_weights_detailed(const LongitudinalPanel& panel, EstimatorKind kind,
                                   const EstimateOptions& opt) {
    WeightBuild out;
    switch (kind) {
        case EstimatorKind::ASSOCIATIONAL:
            out.weights = unit_weights(panel);
            return out;
        case EstimatorKind::SRA: {
            const NuisanceFit* fit = opt.treatment_fit;
            if (!fit) {
                FitOptions fo;
                fo.baseline_only = true;
                out.treatment =
                    fit_probit_treatment(panel, {}, observed_covariates(panel), fo);
                out.fitted_treatment = true;
                fit = &out.treatment;
            }
            out.weights = sra_weights(
                panel, probability_fn_from_probit(*fit, observed_covariates(panel)));
            return out;
        }
        case EstimatorKind::SRA_STABILIZED: {
            FitOptions fo;
            fo.baseline_only = true;
            const NuisanceFit* prop = opt.treatment_fit;
            if (!prop) {
                out.treatment =
                    fit_probit_treatment(panel, {}, observed_covariates(panel), fo);
                out.fitted_treatment = true;
                prop = &out.treatment;
            }
            const CovariateSpec mspec = sra_marginal_covariates(panel);
            const NuisanceFit* marg = opt.marginal_fit;
            if (!marg) {
                out.marginal = fit_probit_treatment(panel, {}, mspec, fo);
                out.fitted_marginal = true;
                marg = &out.marginal;
            }
            out.weights = sra_stabilized_weights(
                panel, probability_fn_from_probit(*marg, mspec),
                probability_fn_from_probit(*prop, observed_covariates(panel)));
            return out;
        }
        case EstimatorKind::ORACLE: {
            if (!opt.truth) throw InvalidParams("oracle weights: DGP truth required");
            if (panel.k_u == 0)
                throw InvalidParams("oracle weights: latent columns required");
            out.weights = sra_weights(panel, oracle_propensity(*opt.truth));
            out.weights.kind = WeightSet::Kind::ORACLE;
            return out;
        }
        case EstimatorKind::IV:
        case EstimatorKind::IV_STABILIZED:
        case EstimatorKind::REPEATED_MEASURES_IV: {
            if (!panel.binary_treatment) {
                // no compliance-model fitting for continuous treatments: the
                // true density difference must be supplied via the truth
                if (!opt.truth || opt.truth->kind != DgpKind::CONTINUOUS)
                    throw InvalidParams(
                        "iv weights: continuous treatment requires the true density");
                if (kind != EstimatorKind::IV)
                    throw InvalidParams(
                        "iv weights: continuous treatment supports the plain iv kind only");
                const DeltaFn delta = [](const LongitudinalPanel& p, std::size_t i,
                                         std::size_t t, double a) {
                    return continuous_delta(a, p.l_at(i, t, 0));
                };
                out.weights = iv_weights(panel, fz_fn_from_fit(nullptr), delta);
                return out;
            }
            const NuisanceFit* fit = opt.treatment_fit;
            if (!fit) {
                if (opt.markov_treatment) {
                    out.treatment = fit_markov_treatment(panel, opt.q_known);
                } else {
                    out.treatment = fit_probit_treatment(panel, observed_covariates(panel),
                                                         observed_covariates(panel));
                }
                out.fitted_treatment = true;
                fit = &out.treatment;
            }
            const DeltaFn delta = delta_fn_from_fit(*fit);
            const ProbabilityFn fz = fz_fn_from_fit(opt.iv_density_fit);
            if (kind == EstimatorKind::IV_STABILIZED) {
                GammaFn gamma;
                if (opt.gamma) {
                    gamma = *opt.gamma;
                } else if (fit->kind == NuisanceFit::Kind::MARKOV_TREATMENT) {
                    gamma = markov_default_gamma(*fit);
                } else {
                    throw InvalidParams(
                        "iv_stabilized: supply a stabilizer (no default for this model)");
                }
                out.weights = iv_stabilized_weights(panel, gamma, fz, delta);
                return out;
            }
            out.weights = iv_weights(panel, fz, delta);
            return out;
        }
        default:
            throw InvalidParams("build_weights: kind has no weight family");
    }
}

WeightSet build_weights(const LongitudinalPanel& panel, EstimatorKind kind,
                        const EstimateOptions& opt) {
    return build_weights_detailed(panel, kind, opt).weights;
}

EstimateReport estimate(const LongitudinalPanel& panel, EstimatorKind kind,
                        const EstimateOptions& opt) {
    EstimateReport rep;
    rep.kind = kind;
    rep.n = panel.n;
    rep.T = panel.T;
    rep.seed = opt.seed;
    if (kind == EstimatorKind::WALD) {
        rep.beta = {wald_estimate(panel)};
        return rep;
    }
    WeightSet ws = build_weights(panel, kind, opt);
    const std::vector<double> inv = ws.inverse_wbar();
    double m2 = 0.0, mx = 0.0;
    for (double v : inv) {
        m2 += v * v;
        mx = std::max(mx, std::abs(v));
    }
    rep.weight_second_moment = m2 / (double)inv.size();
    rep.max_abs_inverse_weight = mx;
    if (kind == EstimatorKind::REPEATED_MEASURES_IV) {
        rep.beta = repeated_measures_iv_estimate(panel, ws);
        return rep;
    }
    rep.beta = wls_core(panel, ws, opt.spec, &rep.design_condition);
    return rep;
}

WaldForms wald_forms(const LongitudinalPanel& panel) {
    if (panel.T != 1) throw InvalidParams("wald: single-period panels only");
    double n1 = 0.0, n0 = 0.0, sy1 = 0.0, sy0 = 0.0, sa1 = 0.0, sa0 = 0.0;
    for (std::size_t i = 0; i < panel.n; ++i) {
        const double z = panel.z_at(i, 0);
        if (z != 0.0 && z != 1.0) throw InvalidParams("wald: instrument must be binary");
        if (z == 1.0) {
            n1 += 1.0;
            sy1 += panel.y_terminal(i);
            sa1 += panel.a_at(i, 0);
        } else {
            n0 += 1.0;
            sy0 += panel.y_terminal(i);
            sa0 += panel.a_at(i, 0);
        }
    }
    if (n1 == 0.0 || n0 == 0.0)
        throw InvalidParams("wald: both instrument groups must be nonempty");
    const double den = sa1 * n0 - sa0 * n1;  // exact for integer-valued sums
    if (den == 0.0)
        throw ZeroDenominator("wald: group treatment means are equal");
    WaldForms f;
    f.ratio = (sy1 * n0 - sy0 * n1) / den;
    // signed weights 1/W = (-1)^{1-z} / fhat_Z(z) with the empirical density
    const double n = n1 + n0;
    const double num_w = sy1 * (n / n1) - sy0 * (n / n0);
    const double den_w = sa1 * (n / n1) - sa0 * (n / n0);
    f.weighted = num_w / den_w;
    return f;
}

double wald_estimate(const LongitudinalPanel& panel) {
    const WaldForms f = wald_forms(panel);
    const double scale = std::max(1.0, std::abs(f.ratio));
    if (!(std::abs(f.ratio - f.weighted) <= 1e-12 * scale))
        throw NoConvergence("wald: ratio and signed-weight forms disagree");
    return f.ratio;
}

std::vector<double> repeated_measures_iv_estimate(const LongitudinalPanel& panel,
                                                  const WeightSet& weights) {
    if (!panel.repeated_y)
        throw InvalidParams("repeated_measures: per-period outcomes required");
    if (weights.n != panel.n || weights.T != panel.T)
        throw InvalidParams("repeated_measures: weight set shape mismatch");
    Matrix M(2, 2);
    std::vector<double> v(2, 0.0);
    for (std::size_t i = 0; i < panel.n; ++i) {
        double cum = 0.0;
        for (std::size_t t = 0; t < panel.T; ++t) {
            cum += panel.a_at(i, t);
            const double inv = 1.0 / weights.wbar_through(i, t);
            const double y = panel.y_at(i, t);
            const double x[2] = {1.0, cum};
            for (std::size_t j = 0; j < 2; ++j) {
                M(j, 0) += x[j] * x[0] * inv;
                M(j, 1) += x[j] * x[1] * inv;
                v[j] += x[j] * y * inv;
            }
        }
    }
    const double ninv = 1.0 / (double)(panel.n * panel.T);
    for (double& m : M.a) m *= ninv;
    for (double& w : v) w *= ninv;
    if (!(cond_1norm(M) < 1e12))
        throw SingularDesign("repeated_measures: stacked design is numerically singular");
    return solve_linear(M, v);
}

std::vector<double> theoretical_bias(EstimatorKind kind, const LinearDgpParams& params,
                                     std::size_t n_mc, std::uint64_t seed) {
    if (kind == EstimatorKind::IV || kind == EstimatorKind::IV_STABILIZED)
        return {0.0, 0.0};
    if (kind != EstimatorKind::ASSOCIATIONAL && kind != EstimatorKind::SRA)
        throw InvalidParams("theoretical_bias: associational or sra kinds only");
    SimOutput sim = simulate_linear(params, n_mc, seed);
    const LongitudinalPanel& p = sim.panel;
    auto tau_at = [&params](std::size_t t) {
        return params.tau.empty() ? 1.0 : params.tau[t];
    };
    auto rho_at = [&params](std::size_t t) {
        return params.rho.empty() ? 1.0 : params.rho[t];
    };
    // true conditional-on-L treatment probability (U and Z integrated out)
    const double atten = 1.0 / std::sqrt(1.0 + params.nu2 * params.nu2);
    auto propensity = [&](double l) {
        const double d = normal_cdf(params.alpha0 + params.alpha1 * l);
        const double base = normal_cdf((params.nu0 + params.nu1 * l) * atten);
        return base * (1.0 - d) + 0.5 * d;
    };
    Matrix M(2, 2);
    std::vector<double> b(2, 0.0);
    for (std::size_t i = 0; i < p.n; ++i) {
        double confound = 0.0, suma = 0.0, logw = 0.0;
        for (std::size_t t = 0; t < p.T; ++t) {
            const double prev = t == 0 ? 0.0 : p.a_at(i, t - 1);
            const double l = p.l_at(i, t, 0);
            confound += tau_at(t) * (l - params.lambda0 - params.lambda1 * prev) +
                        rho_at(t) * p.u_at(i, t, 0);
            suma += p.a_at(i, t);
            if (kind == EstimatorKind::SRA) {
                const double pr = propensity(l);
                logw += std::log(p.a_at(i, t) == 1.0 ? pr : 1.0 - pr);
            }
        }
        const double inv = kind == EstimatorKind::SRA ? std::exp(-logw) : 1.0;
        const double h[2] = {1.0, suma};
        for (std::size_t j = 0; j < 2; ++j) {
            M(j, 0) += h[j] * 1.0 * inv;
            M(j, 1) += h[j] * suma * inv;
            b[j] += h[j] * confound * inv;
        }
    }
    const double ninv = 1.0 / (double)p.n;
    for (double& m : M.a) m *= ninv;
    for (double& w : b) w *= ninv;
    return solve_linear(M, b);
}

std::string report_csv_header() { return "kind,beta0,beta1,se0,se1,n,T,seed"; }

std::string report_csv_row(const EstimateReport& rep) {
    auto cell = [](const std::vector<double>& v, std::size_t j) {
        if (j >= v.size()) return std::string();
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v[j]);
        return std::string(buf);
    };
    std::ostringstream out;
    if (rep.kind == EstimatorKind::WALD) {
        // the Wald scalar estimates the treatment-effect slope
        out << estimator_kind_name(rep.kind) << "," << "" << "," << cell(rep.beta, 0);
    } else {
        out << estimator_kind_name(rep.kind) << "," << cell(rep.beta, 0) << ","
            << cell(rep.beta, 1);
    }
    out << "," << cell(rep.se, 0) << "," << cell(rep.se, 1) << "," << rep.n << ","
        << rep.T << "," << rep.seed;
    return out.str();
}

}  // namespace ivmsm
