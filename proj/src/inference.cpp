#include "ivmsm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "ivmsm/errors.hpp"
#include "ivmsm/nuisance.hpp"
#include "ivmsm/rng.hpp"
#include "ivmsm/weights.hpp"

namespace ivmsm {

namespace {

double stable_sigmoid(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

// A fit that carries per-subject scores for this panel was estimated on it;
// parameter-only fits are treated as known quantities.
bool estimated_on(const NuisanceFit& fit, std::size_t n) {
    const std::size_t d = fit.theta.size();
    return fit.converged && d > 0 && fit.per_obs_scores.rows == n &&
           fit.per_obs_scores.cols == d && fit.information.rows == d &&
           fit.information.cols == d;
}

double dot(const std::vector<double>& a, const double* x) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * x[j];
    return s;
}

// Per-subject sum over periods of (dDelta_t/dtheta)/Delta_t for the treatment
// model, minus the stabilizer chain terms when the stabilizer is the fitted
// two-state default (gamma_a = p_L delta_a + (1-p_L) delta_{1-a}).
void treatment_ratio_row(const LongitudinalPanel& panel, std::size_t i,
                         const NuisanceFit& fit, const CovariateSpec& aspec,
                         bool gamma_chain, std::vector<double>& xa, double* out) {
    const std::size_t d = fit.theta.size();
    std::fill(out, out + d, 0.0);
    if (fit.kind == NuisanceFit::Kind::PROBIT_TREATMENT) {
        for (std::size_t t = 0; t < panel.T; ++t) {
            aspec.fill(panel, i, t, xa.data());
            const double u = dot(fit.alpha, xa.data());
            double cdf, pdf;
            normal_cdf_pdf(u, cdf, pdf);
            const double ratio = pdf / cdf;
            for (std::size_t j = 0; j < fit.alpha.size(); ++j) out[j] += ratio * xa[j];
        }
        return;
    }
    // two-state model, theta = (delta0, delta1, p_L)
    const double d0 = fit.alpha[0], d1 = fit.alpha[1], pl = fit.nu[0];
    const double g0 = pl * d0 + (1.0 - pl) * d1;
    const double g1 = pl * d1 + (1.0 - pl) * d0;
    for (std::size_t t = 0; t < panel.T; ++t) {
        if (panel.l_at(i, t, 0) == 1.0)
            out[1] += 1.0 / d1;
        else
            out[0] += 1.0 / d0;
        if (gamma_chain) {
            const double prev = t == 0 ? 0.0 : panel.a_at(i, t - 1);
            if (prev == 1.0) {
                out[0] -= (1.0 - pl) / g1;
                out[1] -= pl / g1;
                out[2] -= (d1 - d0) / g1;
            } else {
                out[0] -= pl / g0;
                out[1] -= (1.0 - pl) / g0;
                out[2] -= (d0 - d1) / g0;
            }
        }
    }
}

// Per-subject sum over periods of (df_{Z_t}/dgamma)/f_{Z_t}: the logistic
// score increments (z_t - sigma_t) x_t.
void density_ratio_row(const LongitudinalPanel& panel, std::size_t i,
                       const NuisanceFit& fit, const CovariateSpec& spec,
                       std::vector<double>& xg, double* out) {
    const std::size_t d = fit.gamma.size();
    std::fill(out, out + d, 0.0);
    for (std::size_t t = 0; t < panel.T; ++t) {
        spec.fill(panel, i, t, xg.data());
        const double s = stable_sigmoid(dot(fit.gamma, xg.data()));
        const double coef = panel.z_at(i, t) - s;
        for (std::size_t j = 0; j < d; ++j) out[j] += coef * xg[j];
    }
}

}  // namespace

SandwichParts sandwich_details(const LongitudinalPanel& panel,
                               const std::vector<double>& beta_hat, EstimatorKind kind,
                               const EstimateOptions& opt, bool nuisances_known) {
    if (kind == EstimatorKind::WALD || kind == EstimatorKind::REPEATED_MEASURES_IV)
        throw InvalidParams("sandwich: estimator kind not covered by the stacked score");
    if (panel.repeated_y)
        throw InvalidParams("sandwich: terminal-outcome panels only");
    if (panel.n < 2) throw InvalidParams("sandwich: at least two subjects");

    WeightBuild wb = build_weights_detailed(panel, kind, opt);
    const NuisanceFit* tfit = wb.fitted_treatment ? &wb.treatment : opt.treatment_fit;
    const NuisanceFit* dfit = opt.iv_density_fit;

    const NuisanceFit* stack_t = nullptr;
    const NuisanceFit* stack_d = nullptr;
    bool gamma_chain = false;
    const bool iv_kind =
        kind == EstimatorKind::IV || kind == EstimatorKind::IV_STABILIZED;
    if (!nuisances_known && iv_kind && panel.binary_treatment) {
        if (tfit && estimated_on(*tfit, panel.n)) {
            if (tfit->kind == NuisanceFit::Kind::PROBIT_TREATMENT &&
                tfit->alpha.size() != 1 + panel.k)
                throw InvalidParams(
                    "sandwich: treatment fit uses a non-default covariate layout");
            stack_t = tfit;
            gamma_chain = kind == EstimatorKind::IV_STABILIZED && !opt.gamma &&
                          tfit->kind == NuisanceFit::Kind::MARKOV_TREATMENT;
        }
        if (dfit && estimated_on(*dfit, panel.n)) {
            if (dfit->gamma.size() != 1 + panel.k)
                throw InvalidParams(
                    "sandwich: density fit uses a non-default covariate layout");
            stack_d = dfit;
        }
    }

    const std::size_t n = panel.n;
    std::vector<double> path = panel.treatment_path(0);
    const std::size_t p = design_row(opt.spec, path).size();
    if (beta_hat.size() != p) throw InvalidParams("sandwich: beta dimension mismatch");
    const std::size_t dt = stack_t ? stack_t->theta.size() : 0;
    const std::size_t dg = stack_d ? stack_d->theta.size() : 0;
    const std::size_t q = p + dt + dg;

    const std::vector<double> inv = wb.weights.inverse_wbar();
    const CovariateSpec aspec = default_alpha_covariates(panel);
    std::vector<double> xa(aspec.d), xg(aspec.d), rt(dt), rg(dg);

    Matrix J(q, q);
    Matrix sb(n, p);
    Matrix rts(dt ? n : 0, dt), rgs(dg ? n : 0, dg);
    for (std::size_t i = 0; i < n; ++i) {
        path = panel.treatment_path(i);
        const std::vector<double> h = design_row(opt.spec, path);
        const std::vector<double> x = mean_basis_row(opt.spec, path);
        if (h.size() != p || x.size() != p)
            throw InvalidParams("sandwich: ragged basis rows");
        const double resid = panel.y_terminal(i) - mean_value(opt.spec, beta_hat, path);
        const double wi = inv[i];
        if (dt) {
            treatment_ratio_row(panel, i, *stack_t, aspec, gamma_chain, xa, rt.data());
            for (std::size_t c = 0; c < dt; ++c) rts(i, c) = rt[c];
        }
        if (dg) {
            density_ratio_row(panel, i, *stack_d, aspec, xg, rg.data());
            for (std::size_t c = 0; c < dg; ++c) rgs(i, c) = rg[c];
        }
        for (std::size_t j = 0; j < p; ++j) {
            const double hw = h[j] * wi;
            sb(i, j) = hw * resid;
            for (std::size_t c = 0; c < p; ++c) J(j, c) -= hw * x[c];
            for (std::size_t c = 0; c < dt; ++c) J(j, p + c) -= hw * resid * rt[c];
            for (std::size_t c = 0; c < dg; ++c) J(j, p + dt + c) -= hw * resid * rg[c];
        }
    }
    const double ninv = 1.0 / (double)n;
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t c = 0; c < q; ++c) J(j, c) *= ninv;
    for (std::size_t j = 0; j < dt; ++j)
        for (std::size_t c = 0; c < dt; ++c)
            J(p + j, p + c) = -stack_t->information(j, c);
    for (std::size_t j = 0; j < dg; ++j)
        for (std::size_t c = 0; c < dg; ++c)
            J(p + dt + j, p + dt + c) = -stack_d->information(j, c);

    Matrix Ji;
    try {
        Ji = inverse(J);
    } catch (const SingularMatrix&) {
        throw SingularInformation("sandwich: stacked Jacobian is singular");
    }

    SandwichParts parts;
    parts.beta_dim = p;
    parts.stacked_dim = q;
    parts.jacobian = J;
    parts.influence = Matrix(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < p; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < q; ++c) {
                const double s = c < p          ? sb(i, c)
                                 : c < p + dt   ? stack_t->per_obs_scores(i, c - p)
                                                : stack_d->per_obs_scores(i, c - p - dt);
                acc += Ji(r, c) * s;
            }
            parts.influence(i, r) = -acc;
        }
    }

    std::vector<double> mu(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < p; ++r) mu[r] += parts.influence(i, r);
    for (double& m : mu) m *= ninv;
    parts.cov = Matrix(p, p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = r; c < p; ++c)
                parts.cov(r, c) += (parts.influence(i, r) - mu[r]) *
                                   (parts.influence(i, c) - mu[c]);
    for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = r; c < p; ++c) {
            const double v = parts.cov(r, c) * ninv * ninv;
            parts.cov(r, c) = v;
            parts.cov(c, r) = v;
        }
    return parts;
}

Matrix sandwich_variance(const LongitudinalPanel& panel,
                         const std::vector<double>& beta_hat, EstimatorKind kind,
                         const EstimateOptions& opt, bool nuisances_known) {
    return sandwich_details(panel, beta_hat, kind, opt, nuisances_known).cov;
}

namespace {

// Count-weighted variants of the point estimators: a resample is held as
// per-subject multiplicities, so nothing is ever copied.

double counted_wald(const LongitudinalPanel& panel, const std::vector<double>& counts) {
    if (panel.T != 1) throw InvalidParams("wald: single-period panels only");
    double n1 = 0.0, n0 = 0.0, sy1 = 0.0, sy0 = 0.0, sa1 = 0.0, sa0 = 0.0;
    for (std::size_t i = 0; i < panel.n; ++i) {
        const double c = counts[i];
        if (c == 0.0) continue;
        const double z = panel.z_at(i, 0);
        if (z != 0.0 && z != 1.0) throw InvalidParams("wald: instrument must be binary");
        if (z == 1.0) {
            n1 += c;
            sy1 += c * panel.y_terminal(i);
            sa1 += c * panel.a_at(i, 0);
        } else {
            n0 += c;
            sy0 += c * panel.y_terminal(i);
            sa0 += c * panel.a_at(i, 0);
        }
    }
    if (n1 == 0.0 || n0 == 0.0)
        throw InvalidParams("wald: both instrument groups must be nonempty");
    const double den = sa1 * n0 - sa0 * n1;
    if (den == 0.0) throw ZeroDenominator("wald: group treatment means are equal");
    return (sy1 * n0 - sy0 * n1) / den;
}

std::vector<double> counted_wls(const LongitudinalPanel& panel, const WeightSet& ws,
                                const MsmmSpec& spec, const std::vector<double>& counts,
                                const std::vector<double>* cum) {
    const std::vector<double> inv = ws.inverse_wbar();
    double total = 0.0;
    Matrix M;
    std::vector<double> v;
    if (cum) {  // default (1, sum a) layout: allocation-free accumulation
        double m00 = 0.0, m01 = 0.0, m11 = 0.0, v0 = 0.0, v1 = 0.0;
        for (std::size_t i = 0; i < panel.n; ++i) {
            const double c = counts[i];
            if (c == 0.0) continue;
            total += c;
            const double w = c * inv[i];
            const double s = (*cum)[i];
            const double y = panel.y_terminal(i);
            m00 += w;
            m01 += w * s;
            m11 += w * s * s;
            v0 += w * y;
            v1 += w * s * y;
        }
        M = Matrix(2, 2);
        M(0, 0) = m00;
        M(0, 1) = M(1, 0) = m01;
        M(1, 1) = m11;
        v = {v0, v1};
    } else {
        std::size_t p = 0;
        for (std::size_t i = 0; i < panel.n; ++i) {
            const double c = counts[i];
            if (c == 0.0) continue;
            const std::vector<double> path = panel.treatment_path(i);
            const std::vector<double> h = design_row(spec, path);
            const std::vector<double> x = mean_basis_row(spec, path);
            if (p == 0) {
                p = h.size();
                if (x.size() != p || p != spec.beta_dim)
                    throw InvalidParams("wls_estimate: basis rows disagree with beta_dim");
                M = Matrix(p, p);
                v.assign(p, 0.0);
            }
            total += c;
            const double w = c * inv[i];
            const double y = panel.y_terminal(i);
            for (std::size_t j = 0; j < p; ++j) {
                const double hw = h[j] * w;
                for (std::size_t k = 0; k < p; ++k) M(j, k) += hw * x[k];
                v[j] += hw * y;
            }
        }
        if (p == 0) throw InvalidParams("wls_estimate: empty resample");
    }
    const double tinv = 1.0 / total;
    for (double& m : M.a) m *= tinv;
    for (double& w : v) w *= tinv;
    if (!(cond_1norm(M) < 1e12))
        throw SingularDesign("wls_estimate: weighted design is numerically singular");
    return solve_linear(M, v);
}

std::vector<double> counted_repeated(const LongitudinalPanel& panel, const WeightSet& ws,
                                     const std::vector<double>& counts) {
    if (!panel.repeated_y)
        throw InvalidParams("repeated_measures: per-period outcomes required");
    Matrix M(2, 2);
    std::vector<double> v(2, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < panel.n; ++i) {
        const double c = counts[i];
        if (c == 0.0) continue;
        total += c;
        double cum = 0.0;
        for (std::size_t t = 0; t < panel.T; ++t) {
            cum += panel.a_at(i, t);
            const double w = c / ws.wbar_through(i, t);
            const double y = panel.y_at(i, t);
            M(0, 0) += w;
            M(0, 1) += w * cum;
            M(1, 0) += w * cum;
            M(1, 1) += w * cum * cum;
            v[0] += w * y;
            v[1] += w * cum * y;
        }
    }
    const double tinv = 1.0 / (total * (double)panel.T);
    for (double& m : M.a) m *= tinv;
    for (double& w : v) w *= tinv;
    if (!(cond_1norm(M) < 1e12))
        throw SingularDesign("repeated_measures: weighted design is numerically singular");
    return solve_linear(M, v);
}

// sorted order statistics, linearly interpolated
double percentile_sorted(const std::vector<double>& v, double q) {
    const double h = (double)(v.size() - 1) * q;
    const std::size_t lo = (std::size_t)h;
    const std::size_t hi = lo + 1 < v.size() ? lo + 1 : lo;
    return v[lo] + (h - (double)lo) * (v[hi] - v[lo]);
}

}  // namespace

BootstrapResult bootstrap_estimate(const LongitudinalPanel& panel, EstimatorKind kind,
                                   const EstimateOptions& opt, std::size_t B,
                                   double level, std::uint64_t seed) {
    if (B < 100) throw InvalidParams("bootstrap: at least 100 replicates");
    if (!(level > 0.0 && level < 1.0)) throw InvalidParams("bootstrap: level in (0,1)");
    if (panel.n < 2) throw InvalidParams("bootstrap: at least two subjects");

    const bool wald = kind == EstimatorKind::WALD;
    const bool repeated = kind == EstimatorKind::REPEATED_MEASURES_IV;
    WeightBuild full;
    if (!wald) full = build_weights_detailed(panel, kind, opt);
    const NuisanceFit* t0 = full.fitted_treatment ? &full.treatment : opt.treatment_fit;
    const NuisanceFit* m0 = full.fitted_marginal ? &full.marginal : opt.marginal_fit;
    const NuisanceFit* d0 = opt.iv_density_fit;
    const bool refit_t =
        !wald && t0 && (full.fitted_treatment || estimated_on(*t0, panel.n));
    const bool refit_m =
        !wald && m0 && (full.fitted_marginal || estimated_on(*m0, panel.n));
    const bool refit_d = !wald && d0 && estimated_on(*d0, panel.n);
    const bool sra_kind =
        kind == EstimatorKind::SRA || kind == EstimatorKind::SRA_STABILIZED;
    const bool markov_t =
        refit_t && t0->kind == NuisanceFit::Kind::MARKOV_TREATMENT;

    const bool default_spec = !opt.spec.basis && !opt.spec.index &&
                              opt.spec.mean_model == MeanModel::LINEAR_CUMULATIVE &&
                              opt.spec.beta_dim == 2;
    std::vector<double> cum;
    if (!wald && !repeated && default_spec) cum = cumulative_treatment(panel);

    std::vector<std::vector<double>> kept;
    kept.reserve(B);
    std::size_t failures = 0;
    std::vector<double> counts(panel.n);
    for (std::size_t rep = 0; rep < B; ++rep) {
        Rng rng = Rng::substream(seed, rep + 1);
        std::fill(counts.begin(), counts.end(), 0.0);
        for (std::size_t k = 0; k < panel.n; ++k) counts[rng.below(panel.n)] += 1.0;
        try {
            if (wald) {
                kept.push_back({counted_wald(panel, counts)});
                continue;
            }
            EstimateOptions o2 = opt;
            NuisanceFit tr, mr, dr;
            if (refit_t) {
                if (markov_t) {
                    FitOptions fo;
                    fo.subject_weights = &counts;
                    if (t0->theta.size() == 3) fo.init = &t0->theta;
                    tr = fit_markov_treatment(panel, t0->q, fo);
                } else {
                    FitOptions fo;
                    fo.subject_weights = &counts;
                    fo.baseline_only = sra_kind;
                    const std::size_t want =
                        sra_kind ? 1 + panel.k : 2 * (1 + panel.k);
                    if (t0->theta.size() == want) fo.init = &t0->theta;
                    tr = sra_kind ? fit_probit_treatment(
                                        panel, {}, default_alpha_covariates(panel), fo)
                                  : fit_probit_treatment(
                                        panel, default_alpha_covariates(panel),
                                        default_alpha_covariates(panel), fo);
                }
                o2.treatment_fit = &tr;
            }
            if (refit_m) {
                FitOptions fo;
                fo.subject_weights = &counts;
                fo.baseline_only = true;
                const CovariateSpec mspec = sra_marginal_covariates(panel);
                if (m0->theta.size() == mspec.d) fo.init = &m0->theta;
                mr = fit_probit_treatment(panel, {}, mspec, fo);
                o2.marginal_fit = &mr;
            }
            if (refit_d) {
                FitOptions fo;
                fo.subject_weights = &counts;
                if (d0->theta.size() == 1 + panel.k) fo.init = &d0->theta;
                dr = fit_logistic_iv_density(panel, {}, fo);
                o2.iv_density_fit = &dr;
            }
            WeightSet local;
            const WeightSet* ws = &full.weights;
            if (refit_t || refit_m || refit_d) {
                local = build_weights(panel, kind, o2);
                ws = &local;
            }
            if (repeated)
                kept.push_back(counted_repeated(panel, *ws, counts));
            else
                kept.push_back(counted_wls(panel, *ws, opt.spec, counts,
                                           default_spec ? &cum : nullptr));
        } catch (const Error&) {
            ++failures;
        }
    }
    if (failures * 10 > B) {
        std::ostringstream msg;
        msg << "bootstrap: " << failures << " of " << B << " replicates failed";
        throw TooManyFailures(msg.str());
    }

    BootstrapResult out;
    out.B = B;
    out.failures = failures;
    const std::size_t m = kept.size();
    const std::size_t p = kept.front().size();
    out.replicates = Matrix(m, p);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < p; ++c) out.replicates(r, c) = kept[r][c];

    std::vector<double> mu(p, 0.0);
    for (const auto& b : kept)
        for (std::size_t c = 0; c < p; ++c) mu[c] += b[c];
    for (double& x : mu) x /= (double)m;
    out.cov = Matrix(p, p);
    for (const auto& b : kept)
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = r; c < p; ++c)
                out.cov(r, c) += (b[r] - mu[r]) * (b[c] - mu[c]);
    for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = r; c < p; ++c) {
            const double v = out.cov(r, c) / (double)(m - 1);
            out.cov(r, c) = v;
            out.cov(c, r) = v;
        }

    out.ci.resize(p);
    std::vector<double> col(m);
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t r = 0; r < m; ++r) col[r] = kept[r][c];
        std::sort(col.begin(), col.end());
        out.ci[c] = {percentile_sorted(col, (1.0 - level) / 2.0),
                     percentile_sorted(col, (1.0 + level) / 2.0)};
    }
    return out;
}

InferenceReport infer(const LongitudinalPanel& panel, EstimatorKind kind,
                      const InferOptions& opt) {
    InferenceReport out;
    out.level = opt.level;
    out.B = opt.B;

    EstimateOptions o2 = opt.est;
    o2.seed = opt.seed;
    NuisanceFit density_local;
    const bool iv_kind = kind == EstimatorKind::IV ||
                         kind == EstimatorKind::IV_STABILIZED ||
                         kind == EstimatorKind::REPEATED_MEASURES_IV;
    if (opt.fit_iv_density && !o2.iv_density_fit && iv_kind && panel.binary_treatment) {
        density_local = fit_logistic_iv_density(panel);
        o2.iv_density_fit = &density_local;
    }

    WeightBuild wb;
    if (kind != EstimatorKind::WALD) {
        // fit nuisances once; everything downstream reuses them
        wb = build_weights_detailed(panel, kind, o2);
        if (wb.fitted_treatment) o2.treatment_fit = &wb.treatment;
        if (wb.fitted_marginal) o2.marginal_fit = &wb.marginal;
    }
    out.est = estimate(panel, kind, o2);

    if (kind != EstimatorKind::WALD && kind != EstimatorKind::REPEATED_MEASURES_IV) {
        SandwichParts parts =
            sandwich_details(panel, out.est.beta, kind, o2, opt.nuisances_known);
        out.has_sandwich = true;
        out.sandwich_cov = parts.cov;
        const std::size_t p = parts.beta_dim;
        out.sandwich_se.resize(p);
        out.ci_sandwich.resize(p);
        const double zq = normal_quantile((1.0 + opt.level) / 2.0);
        for (std::size_t j = 0; j < p; ++j) {
            out.sandwich_se[j] = std::sqrt(std::max(0.0, parts.cov(j, j)));
            out.ci_sandwich[j] = {out.est.beta[j] - zq * out.sandwich_se[j],
                                  out.est.beta[j] + zq * out.sandwich_se[j]};
        }
        out.est.se = out.sandwich_se;
    }

    if (opt.B > 0) {
        BootstrapResult br =
            bootstrap_estimate(panel, kind, o2, opt.B, opt.level, opt.seed);
        out.has_bootstrap = true;
        out.bootstrap_cov = br.cov;
        out.ci_bootstrap = br.ci;
        out.bootstrap_failures = br.failures;
        out.bootstrap_se.resize(br.cov.rows);
        for (std::size_t j = 0; j < br.cov.rows; ++j)
            out.bootstrap_se[j] = std::sqrt(std::max(0.0, br.cov(j, j)));
    }
    return out;
}

std::vector<CoverageRow> coverage_experiment(const CoverageConfig& cfg) {
    if (cfg.R < 100) throw InvalidParams("coverage: at least 100 replications");
    if (cfg.B != 0 && cfg.B < 100)
        throw InvalidParams("coverage: bootstrap needs at least 100 replicates");
    if (cfg.kinds.empty() || cfg.n_grid.empty() || cfg.T_grid.empty())
        throw InvalidParams("coverage: empty grid");
    if (cfg.jobs == 0) throw InvalidParams("coverage: jobs must be at least 1");
    for (EstimatorKind k : cfg.kinds)
        if (k == EstimatorKind::WALD || k == EstimatorKind::REPEATED_MEASURES_IV)
            throw InvalidParams("coverage: estimator kind has no interval support");

    // one slot per replication so workers never share state and aggregation
    // happens in replication order, independent of completion order
    struct RepOutcome {
        double est = 0.0, sw_se = 0.0, bs_se = 0.0, truth = 0.0;
        bool sw_covered = false, bs_covered = false, has_bs = false;
        std::exception_ptr error;
    };

    std::vector<CoverageRow> rows;
    std::size_t cell = 0;
    for (std::size_t n : cfg.n_grid)
        for (std::size_t T : cfg.T_grid)
            for (EstimatorKind kind : cfg.kinds) {
                const std::uint64_t cell_seed = derive_seed(cfg.seed, ++cell);
                CoverageRow row;
                row.dgp = cfg.dgp == DgpKind::LINEAR
                              ? "linear"
                              : (cfg.dgp == DgpKind::MARKOV ? "markov" : "continuous");
                row.kind = kind;
                row.n = n;
                row.T = T;
                row.R = cfg.R;
                row.seed = cfg.seed;
                row.has_bootstrap = cfg.B > 0;

                std::vector<RepOutcome> outcomes(cfg.R);
                const auto run_rep = [&](std::size_t rep) {
                    RepOutcome& out = outcomes[rep];
                    try {
                        const std::uint64_t rs = derive_seed(cell_seed, rep + 1);
                        SimOutput sim;
                        if (cfg.dgp == DgpKind::LINEAR) {
                            LinearDgpParams pr = cfg.linear;
                            pr.T = T;
                            sim = simulate_linear(pr, n, rs);
                        } else if (cfg.dgp == DgpKind::MARKOV) {
                            MarkovDgpParams pr = cfg.markov;
                            pr.T = T;
                            sim = simulate_markov(pr, n, rs);
                        } else {
                            if (T != 1)
                                throw InvalidParams(
                                    "coverage: the continuous process is single-period");
                            sim = simulate_continuous(n, rs, cfg.continuous_beta);
                        }
                        if (cfg.target >= sim.truth.beta.size())
                            throw InvalidParams(
                                "coverage: target coefficient out of range");
                        out.truth = sim.truth.beta[cfg.target];

                        InferOptions io;
                        io.B = cfg.B;
                        io.level = cfg.level;
                        io.seed = rs;
                        if (cfg.dgp == DgpKind::MARKOV &&
                            (kind == EstimatorKind::IV ||
                             kind == EstimatorKind::IV_STABILIZED)) {
                            io.est.markov_treatment = true;
                            io.est.q_known = cfg.markov.q;
                        }
                        if (kind == EstimatorKind::ORACLE ||
                            cfg.dgp == DgpKind::CONTINUOUS)
                            io.est.truth = &sim.truth;
                        InferenceReport r = infer(sim.panel, kind, io);
                        if (cfg.target >= r.est.beta.size())
                            throw InvalidParams(
                                "coverage: target coefficient out of range");

                        out.est = r.est.beta[cfg.target];
                        out.sw_se = r.sandwich_se[cfg.target];
                        out.sw_covered = r.ci_sandwich[cfg.target].first <= out.truth &&
                                         out.truth <= r.ci_sandwich[cfg.target].second;
                        if (r.has_bootstrap) {
                            out.has_bs = true;
                            out.bs_se = r.bootstrap_se[cfg.target];
                            out.bs_covered =
                                r.ci_bootstrap[cfg.target].first <= out.truth &&
                                out.truth <= r.ci_bootstrap[cfg.target].second;
                        }
                    } catch (...) {
                        out.error = std::current_exception();
                    }
                };

                const std::size_t workers = std::min(cfg.jobs, cfg.R);
                if (workers <= 1) {
                    for (std::size_t rep = 0; rep < cfg.R; ++rep) run_rep(rep);
                } else {
                    std::vector<std::thread> pool;
                    pool.reserve(workers);
                    for (std::size_t w = 0; w < workers; ++w)
                        pool.emplace_back([&, w]() {
                            for (std::size_t rep = w; rep < cfg.R; rep += workers)
                                run_rep(rep);
                        });
                    for (std::thread& th : pool) th.join();
                }
                for (const RepOutcome& out : outcomes)
                    if (out.error) std::rethrow_exception(out.error);

                double mean = 0.0, sw_mean = 0.0, bs_mean = 0.0;
                double sw_cover = 0.0, bs_cover = 0.0;
                for (const RepOutcome& out : outcomes) {
                    mean += out.est;
                    sw_mean += out.sw_se;
                    sw_cover += out.sw_covered ? 1.0 : 0.0;
                    if (out.has_bs) {
                        bs_mean += out.bs_se;
                        bs_cover += out.bs_covered ? 1.0 : 0.0;
                    }
                }
                mean /= (double)cfg.R;
                double ss = 0.0;
                for (const RepOutcome& out : outcomes)
                    ss += (out.est - mean) * (out.est - mean);
                const double truth_val = outcomes.back().truth;
                row.bias = mean - truth_val;
                row.mc_sd = std::sqrt(ss / (double)(cfg.R - 1));
                row.sw_sd = sw_mean / (double)cfg.R;
                row.sw_cover = sw_cover / (double)cfg.R;
                if (row.has_bootstrap) {
                    row.bs_sd = bs_mean / (double)cfg.R;
                    row.bs_cover = bs_cover / (double)cfg.R;
                }
                rows.push_back(row);
            }
    return rows;
}

std::string coverage_csv_header() {
    return "dgp,kind,n,T,R,bias,mc_sd,sw_sd,bs_sd,sw_cover,bs_cover,seed";
}

std::string coverage_csv_row(const CoverageRow& row) {
    char buf[64];
    std::ostringstream os;
    os << row.dgp << ',' << estimator_kind_name(row.kind) << ',' << row.n << ','
       << row.T << ',' << row.R << ',';
    const auto cell = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    cell(row.bias);
    os << ',';
    cell(row.mc_sd);
    os << ',';
    cell(row.sw_sd);
    os << ',';
    if (row.has_bootstrap) cell(row.bs_sd);
    os << ',';
    cell(row.sw_cover);
    os << ',';
    if (row.has_bootstrap) cell(row.bs_cover);
    os << ',' << row.seed;
    return os.str();
}

void write_coverage_csv(const std::string& path, const std::vector<CoverageRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("coverage csv: cannot open " + path);
    f << coverage_csv_header() << '\n';
    for (const CoverageRow& row : rows) f << coverage_csv_row(row) << '\n';
    if (!f.good()) throw IoError("coverage csv: write failed for " + path);
}

}  // namespace ivmsm
