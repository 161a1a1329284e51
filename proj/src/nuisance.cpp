#include "ivmsm/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>

namespace ivmsm {

Matrix unpack_symmetric(const double* packed, std::size_t p) {
    Matrix m(p, p);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = j; k < p; ++k)
            m(j, k) = m(k, j) = packed[packed_index(p, j, k)];
    return m;
}

CovariateSpec default_alpha_covariates(const LongitudinalPanel& panel) {
    CovariateSpec s;
    s.d = 1 + panel.k;
    s.fill = [](const LongitudinalPanel& p, std::size_t i, std::size_t t, double* out) {
        out[0] = 1.0;
        for (std::size_t j = 0; j < p.k; ++j) out[1 + j] = p.l_at(i, t, j);
    };
    return s;
}

CovariateSpec default_nu_covariates(const LongitudinalPanel& panel) {
    CovariateSpec s;
    s.d = 1 + panel.k + panel.k_u;
    s.fill = [](const LongitudinalPanel& p, std::size_t i, std::size_t t, double* out) {
        out[0] = 1.0;
        for (std::size_t j = 0; j < p.k; ++j) out[1 + j] = p.l_at(i, t, j);
        for (std::size_t j = 0; j < p.k_u; ++j) out[1 + p.k + j] = p.u_at(i, t, j);
    };
    return s;
}

namespace {

struct NewtonResult {
    std::vector<double> theta;
    double ll = 0.0;
    std::vector<double> score;        // mean per weighted subject
    std::vector<double> hess_packed;  // mean per weighted subject
    bool converged = false;
};

// Damped Newton ascent over a fused (loglik, score, hessian) evaluator. The
// evaluator returns -inf outside the parameter domain.
template <class Eval>
NewtonResult newton_fit(Eval&& eval, std::vector<double> theta, const NewtonConfig& cfg) {
    const std::size_t p = theta.size();
    NewtonResult r;
    r.score.resize(p);
    r.hess_packed.resize(packed_size(p));
    double ll = eval(theta.data(), r.score.data(), r.hess_packed.data());
    if (!std::isfinite(ll)) throw InvalidParams("fit: starting point outside domain");

    std::vector<double> s2(p), h2(packed_size(p)), cand(p), step;
    for (int it = 0;; ++it) {
        double sup = 0.0;
        for (double v : r.score) sup = std::max(sup, std::abs(v));
        if (sup <= cfg.tolerance) break;
        if (it >= cfg.max_iterations) throw NoConvergence("fit: max iterations reached");

        // ascent direction from the information matrix, with a ridge fallback
        // when it is indefinite far from the optimum
        Matrix info = unpack_symmetric(r.hess_packed.data(), p);
        for (double& v : info.a) v = -v;
        double dscale = 0.0;
        for (std::size_t j = 0; j < p; ++j) dscale = std::max(dscale, std::abs(info(j, j)));
        if (dscale == 0.0) dscale = 1.0;
        double mu = 0.0;
        for (int tries = 0;; ++tries) {
            Matrix m = info;
            for (std::size_t j = 0; j < p; ++j) m(j, j) += mu;
            bool ok = true;
            try {
                step = solve_linear(m, r.score);
            } catch (const SingularMatrix&) {
                ok = false;
            }
            if (ok) {
                double dot = 0.0;
                for (std::size_t j = 0; j < p; ++j) dot += step[j] * r.score[j];
                if (dot > 0.0) break;
            }
            if (tries >= 14) throw SingularInformation("fit: no ascent direction");
            mu = mu == 0.0 ? 1e-8 * dscale : mu * 100.0;
        }

        double lambda = 1.0;
        bool moved = false;
        for (int h = 0; h <= cfg.step_halvings; ++h, lambda *= 0.5) {
            for (std::size_t j = 0; j < p; ++j) cand[j] = theta[j] + lambda * step[j];
            const double llc = eval(cand.data(), s2.data(), h2.data());
            if (std::isfinite(llc) && llc >= ll - 1e-12 * (1.0 + std::abs(ll))) {
                theta.swap(cand);
                ll = llc;
                r.score.swap(s2);
                r.hess_packed.swap(h2);
                moved = true;
                break;
            }
        }
        if (!moved) throw NoConvergence("fit: step halving exhausted");
    }
    r.theta = std::move(theta);
    r.ll = ll;
    r.converged = true;
    return r;
}

std::size_t count_rows(const LongitudinalPanel& p, int only_period) {
    if (only_period < 0) return p.n * p.T;
    if ((std::size_t)only_period >= p.T) throw InvalidParams("only_period out of range");
    return p.n;
}

}  // namespace

ProbitTreatmentModel::ProbitTreatmentModel(const LongitudinalPanel& panel,
                                           const CovariateSpec& alpha_spec,
                                           const CovariateSpec& nu_spec, int only_period,
                                           bool baseline_only)
    : baseline_only_(baseline_only) {
    if (panel.n == 0 || panel.T == 0) throw InvalidParams("probit fit: empty panel");
    if (!panel.binary_treatment) throw InvalidParams("probit fit: treatment must be binary");
    const CovariateSpec aspec = alpha_spec.d ? alpha_spec : default_alpha_covariates(panel);
    const CovariateSpec nspec = nu_spec.d ? nu_spec : default_nu_covariates(panel);
    n_ = panel.n;
    nrows_ = count_rows(panel, only_period);
    da_ = baseline_only_ ? 0 : aspec.d;
    dn_ = nspec.d;
    xa_.resize(nrows_ * da_);
    xn_.resize(nrows_ * dn_);
    a_.resize(nrows_);
    z_.resize(nrows_);
    subject_.resize(nrows_);
    std::size_t r = 0;
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            if (only_period >= 0 && t != (std::size_t)only_period) continue;
            if (!baseline_only_) aspec.fill(panel, i, t, &xa_[r * da_]);
            nspec.fill(panel, i, t, &xn_[r * dn_]);
            a_[r] = panel.a_at(i, t);
            z_[r] = panel.z_at(i, t);
            subject_[r] = (std::uint32_t)i;
            ++r;
        }
}

double ProbitTreatmentModel::eval(const double* th, const double* counts, double* score,
                                  double* hess, double* pi_out, double* delta_out,
                                  double* pi_range) const {
    const std::size_t p = dim(), hp = packed_size(p);
    std::fill(score, score + p, 0.0);
    std::fill(hess, hess + hp, 0.0);
    const double* alpha = th;
    const double* nu = th + da_;
    double ll = 0.0, pmin = 1.0, pmax = 0.0;
    std::vector<double> u(p), g(p);
    for (std::size_t r = 0; r < nrows_; ++r) {
        const double w = counts ? counts[subject_[r]] : 1.0;
        if (w == 0.0) continue;
        const double* xa = &xa_[r * da_];
        const double* xn = &xn_[r * dn_];
        double Fa = 0.0, fa = 0.0, ia = 0.0;
        if (!baseline_only_) {
            for (std::size_t j = 0; j < da_; ++j) ia += alpha[j] * xa[j];
            normal_cdf_pdf(ia, Fa, fa);
        }
        double in = 0.0;
        for (std::size_t j = 0; j < dn_; ++j) in += nu[j] * xn[j];
        double Fn, fn;
        normal_cdf_pdf(in, Fn, fn);
        const double z = z_[r];
        const double pi = baseline_only_ ? Fn : Fn * (1.0 - Fa) + z * Fa;
        if (pi_out) pi_out[r] = pi;
        if (delta_out) delta_out[r] = Fa;
        pmin = std::min(pmin, pi);
        pmax = std::max(pmax, pi);
        const double one = a_[r];
        ll += w * (one == 1.0 ? std::log(pi) : std::log1p(-pi));
        const double c = one == 1.0 ? 1.0 / pi : -1.0 / (1.0 - pi);
        const double q = one == 1.0 ? 1.0 / (pi * pi) : 1.0 / ((1.0 - pi) * (1.0 - pi));
        const double ka = (z - Fn) * fa;       // d pi / d(alpha'xa)
        const double kn = (1.0 - Fa) * fn;     // d pi / d(nu'xn)
        const double s1 = -(z - Fn) * fa * ia;  // second-derivative coefficients
        const double s2 = -fa * fn;
        const double s3 = -(1.0 - Fa) * fn * in;
        for (std::size_t j = 0; j < da_; ++j) u[j] = ka * xa[j];
        for (std::size_t j = 0; j < dn_; ++j) u[da_ + j] = baseline_only_ ? fn * xn[j] : kn * xn[j];
        for (std::size_t j = 0; j < p; ++j) score[j] += w * c * u[j];
        std::size_t idx = 0;
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = j; k < p; ++k, ++idx) {
                double sblk;
                if (baseline_only_) {
                    sblk = -fn * in * xn[j] * xn[k];
                } else if (k < da_) {
                    sblk = s1 * xa[j] * xa[k];
                } else if (j < da_) {
                    sblk = s2 * xa[j] * xn[k - da_];
                } else {
                    sblk = s3 * xn[j - da_] * xn[k - da_];
                }
                hess[idx] += w * (-q * u[j] * u[k] + c * sblk);
            }
    }
    double W = (double)n_;
    if (counts) {
        W = 0.0;
        for (std::size_t i = 0; i < n_; ++i) W += counts[i];
    }
    const double inv = 1.0 / W;
    for (std::size_t j = 0; j < p; ++j) score[j] *= inv;
    for (std::size_t j = 0; j < hp; ++j) hess[j] *= inv;
    if (pi_range) {
        pi_range[0] = pmin;
        pi_range[1] = pmax;
    }
    return ll * inv;
}

void ProbitTreatmentModel::per_subject_terms(const double* th, std::vector<double>& ll,
                                             Matrix& scores,
                                             std::vector<double>& hess_rows) const {
    const std::size_t p = dim(), hp = packed_size(p);
    ll.assign(n_, 0.0);
    scores = Matrix(n_, p);
    hess_rows.assign(n_ * hp, 0.0);
    const double* alpha = th;
    const double* nu = th + da_;
    std::vector<double> u(p);
    for (std::size_t r = 0; r < nrows_; ++r) {
        const std::size_t i = subject_[r];
        const double* xa = &xa_[r * da_];
        const double* xn = &xn_[r * dn_];
        double Fa = 0.0, fa = 0.0, ia = 0.0;
        if (!baseline_only_) {
            for (std::size_t j = 0; j < da_; ++j) ia += alpha[j] * xa[j];
            normal_cdf_pdf(ia, Fa, fa);
        }
        double in = 0.0;
        for (std::size_t j = 0; j < dn_; ++j) in += nu[j] * xn[j];
        double Fn, fn;
        normal_cdf_pdf(in, Fn, fn);
        const double z = z_[r];
        const double pi = baseline_only_ ? Fn : Fn * (1.0 - Fa) + z * Fa;
        const double one = a_[r];
        ll[i] += one == 1.0 ? std::log(pi) : std::log1p(-pi);
        const double c = one == 1.0 ? 1.0 / pi : -1.0 / (1.0 - pi);
        const double q = one == 1.0 ? 1.0 / (pi * pi) : 1.0 / ((1.0 - pi) * (1.0 - pi));
        const double ka = (z - Fn) * fa;
        const double kn = (1.0 - Fa) * fn;
        const double s1 = -(z - Fn) * fa * ia;
        const double s2 = -fa * fn;
        const double s3 = -(1.0 - Fa) * fn * in;
        for (std::size_t j = 0; j < da_; ++j) u[j] = ka * xa[j];
        for (std::size_t j = 0; j < dn_; ++j) u[da_ + j] = baseline_only_ ? fn * xn[j] : kn * xn[j];
        for (std::size_t j = 0; j < p; ++j) scores(i, j) += c * u[j];
        double* hrow = &hess_rows[i * hp];
        std::size_t idx = 0;
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = j; k < p; ++k, ++idx) {
                double sblk;
                if (baseline_only_) {
                    sblk = -fn * in * xn[j] * xn[k];
                } else if (k < da_) {
                    sblk = s1 * xa[j] * xa[k];
                } else if (j < da_) {
                    sblk = s2 * xa[j] * xn[k - da_];
                } else {
                    sblk = s3 * xn[j - da_] * xn[k - da_];
                }
                hrow[idx] += -q * u[j] * u[k] + c * sblk;
            }
    }
}

namespace {

template <class Model>
NuisanceFit package_fit(const Model& model, const NewtonResult& r) {
    NuisanceFit fit;
    fit.theta = r.theta;
    fit.converged = r.converged;
    const std::size_t p = r.theta.size();
    fit.information = unpack_symmetric(r.hess_packed.data(), p);
    for (double& v : fit.information.a) v = -v;
    std::vector<double> ll;
    std::vector<double> hrows;
    model.per_subject_terms(r.theta.data(), ll, fit.per_obs_scores, hrows);
    return fit;
}

}  // namespace

NuisanceFit ProbitTreatmentModel::fit(const FitOptions& opt) const {
    const std::size_t p = dim();
    std::vector<double> init(p, 0.0);
    if (opt.init) {
        if (opt.init->size() != p) throw InvalidParams("probit fit: init size mismatch");
        init = *opt.init;
    }
    const double* counts = nullptr;
    if (opt.subject_weights) {
        if (opt.subject_weights->size() != n_)
            throw InvalidParams("probit fit: subject weight length mismatch");
        counts = opt.subject_weights->data();
    }
    auto ev = [&](const double* th, double* s, double* h) {
        return eval(th, counts, s, h);
    };
    NewtonResult r = newton_fit(ev, init, opt.newton);

    std::vector<double> s(p), h(packed_size(p));
    double range[2];
    eval(r.theta.data(), counts, s.data(), h.data(), nullptr, nullptr, range);
    if (range[0] <= 1e-10 || range[1] >= 1.0 - 1e-10)
        throw SeparationDetected("probit fit: fitted probability at the boundary");

    NuisanceFit fit = package_fit(*this, r);
    fit.kind = NuisanceFit::Kind::PROBIT_TREATMENT;
    fit.alpha.assign(r.theta.begin(), r.theta.begin() + da_);
    fit.nu.assign(r.theta.begin() + da_, r.theta.end());
    fit.gamma_known_half = true;
    return fit;
}

LogisticIvModel::LogisticIvModel(const LongitudinalPanel& panel, const CovariateSpec& spec,
                                 int only_period) {
    if (panel.n == 0 || panel.T == 0) throw InvalidParams("logistic fit: empty panel");
    const CovariateSpec cs = spec.d ? spec : default_alpha_covariates(panel);
    n_ = panel.n;
    nrows_ = count_rows(panel, only_period);
    d_ = cs.d;
    x_.resize(nrows_ * d_);
    z_.resize(nrows_);
    subject_.resize(nrows_);
    std::size_t r = 0;
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            if (only_period >= 0 && t != (std::size_t)only_period) continue;
            cs.fill(panel, i, t, &x_[r * d_]);
            const double z = panel.z_at(i, t);
            if (z != 0.0 && z != 1.0) throw InvalidParams("logistic fit: instrument not binary");
            z_[r] = z;
            subject_[r] = (std::uint32_t)i;
            ++r;
        }
}

namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

double LogisticIvModel::eval(const double* th, const double* counts, double* score,
                             double* hess, double* p_out, double* p_range) const {
    const std::size_t p = d_, hp = packed_size(p);
    std::fill(score, score + p, 0.0);
    std::fill(hess, hess + hp, 0.0);
    double ll = 0.0, pmin = 1.0, pmax = 0.0;
    for (std::size_t r = 0; r < nrows_; ++r) {
        const double w = counts ? counts[subject_[r]] : 1.0;
        if (w == 0.0) continue;
        const double* x = &x_[r * p];
        double idx = 0.0;
        for (std::size_t j = 0; j < p; ++j) idx += th[j] * x[j];
        const double pi = logistic(idx);
        if (p_out) p_out[r] = pi;
        pmin = std::min(pmin, pi);
        pmax = std::max(pmax, pi);
        ll += w * (z_[r] * idx - softplus(idx));
        const double res = z_[r] - pi;
        const double v = pi * (1.0 - pi);
        for (std::size_t j = 0; j < p; ++j) score[j] += w * res * x[j];
        std::size_t id2 = 0;
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = j; k < p; ++k, ++id2) hess[id2] -= w * v * x[j] * x[k];
    }
    double W = (double)n_;
    if (counts) {
        W = 0.0;
        for (std::size_t i = 0; i < n_; ++i) W += counts[i];
    }
    const double inv = 1.0 / W;
    for (std::size_t j = 0; j < p; ++j) score[j] *= inv;
    for (std::size_t j = 0; j < hp; ++j) hess[j] *= inv;
    if (p_range) {
        p_range[0] = pmin;
        p_range[1] = pmax;
    }
    return ll * inv;
}

void LogisticIvModel::per_subject_terms(const double* th, std::vector<double>& ll,
                                        Matrix& scores, std::vector<double>& hess_rows) const {
    const std::size_t p = d_, hp = packed_size(p);
    ll.assign(n_, 0.0);
    scores = Matrix(n_, p);
    hess_rows.assign(n_ * hp, 0.0);
    for (std::size_t r = 0; r < nrows_; ++r) {
        const std::size_t i = subject_[r];
        const double* x = &x_[r * p];
        double idx = 0.0;
        for (std::size_t j = 0; j < p; ++j) idx += th[j] * x[j];
        const double pi = logistic(idx);
        ll[i] += z_[r] * idx - softplus(idx);
        const double res = z_[r] - pi;
        const double v = pi * (1.0 - pi);
        for (std::size_t j = 0; j < p; ++j) scores(i, j) += res * x[j];
        double* hrow = &hess_rows[i * hp];
        std::size_t id2 = 0;
        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = j; k < p; ++k, ++id2) hrow[id2] -= v * x[j] * x[k];
    }
}

NuisanceFit LogisticIvModel::fit(const FitOptions& opt) const {
    const std::size_t p = d_;
    std::vector<double> init(p, 0.0);
    if (opt.init) {
        if (opt.init->size() != p) throw InvalidParams("logistic fit: init size mismatch");
        init = *opt.init;
    }
    const double* counts = nullptr;
    if (opt.subject_weights) {
        if (opt.subject_weights->size() != n_)
            throw InvalidParams("logistic fit: subject weight length mismatch");
        counts = opt.subject_weights->data();
    }
    auto ev = [&](const double* th, double* s, double* h) {
        return eval(th, counts, s, h);
    };
    NewtonResult r = newton_fit(ev, init, opt.newton);

    std::vector<double> s(p), h(packed_size(p));
    double range[2];
    eval(r.theta.data(), counts, s.data(), h.data(), nullptr, range);
    if (range[0] <= 1e-10 || range[1] >= 1.0 - 1e-10)
        throw SeparationDetected("logistic fit: fitted probability at the boundary");

    NuisanceFit fit = package_fit(*this, r);
    fit.kind = NuisanceFit::Kind::LOGISTIC_IV;
    fit.gamma = r.theta;
    fit.gamma_known_half = false;
    return fit;
}

MarkovTreatmentModel::MarkovTreatmentModel(const LongitudinalPanel& panel, double q)
    : q_(q) {
    if (!(q > 0.0 && q < 1.0)) throw InvalidParams("markov fit: q must lie in (0,1)");
    if (panel.n == 0 || panel.T == 0) throw InvalidParams("markov fit: empty panel");
    if (panel.k < 1) throw InvalidParams("markov fit: panel has no covariate column");
    n_ = panel.n;
    subject_cells_.assign(n_ * 8, 0.0);
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            const double l = panel.l_at(i, t, 0);
            const double z = panel.z_at(i, t);
            const double a = panel.a_at(i, t);
            if ((l != 0.0 && l != 1.0) || (a != 0.0 && a != 1.0))
                throw InvalidParams("markov fit: L and A must be binary");
            subject_cells_[i * 8 + 4 * (int)l + 2 * (int)z + (int)a] += 1.0;
        }
}

double MarkovTreatmentModel::pi_cell(const double* th, double q, int l, int z) {
    const double pl = l == 1 ? th[2] : 1.0 - th[2];
    const double dl = l == 1 ? th[1] : th[0];
    return q / 2.0 + (1.0 - q) * pl + (z == 1 ? 1.0 : -1.0) * dl / 2.0;
}

void MarkovTreatmentModel::aggregate(const double* counts, double* cells) const {
    std::fill(cells, cells + 8, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        const double w = counts ? counts[i] : 1.0;
        if (w == 0.0) continue;
        const double* c = &subject_cells_[i * 8];
        for (int j = 0; j < 8; ++j) cells[j] += w * c[j];
    }
}

double MarkovTreatmentModel::eval_cells(const double* th, double q, const double* cells,
                                        double* score, double* hess) {
    std::fill(score, score + 3, 0.0);
    std::fill(hess, hess + 6, 0.0);
    double ll = 0.0;
    for (int l = 0; l < 2; ++l)
        for (int z = 0; z < 2; ++z) {
            const double pi = pi_cell(th, q, l, z);
            if (!(pi > 0.0 && pi < 1.0)) return -std::numeric_limits<double>::infinity();
            const double sz = z == 1 ? 0.5 : -0.5;
            const double g[3] = {l == 0 ? sz : 0.0, l == 1 ? sz : 0.0,
                                 (1.0 - q) * (l == 1 ? 1.0 : -1.0)};
            for (int a = 0; a < 2; ++a) {
                const double m = cells[4 * l + 2 * z + a];
                if (m == 0.0) continue;
                const double pa = a == 1 ? pi : 1.0 - pi;
                ll += m * std::log(pa);
                const double c = a == 1 ? 1.0 / pi : -1.0 / (1.0 - pi);
                const double q2 = 1.0 / (pa * pa);
                for (int j = 0; j < 3; ++j) score[j] += m * c * g[j];
                int idx = 0;
                for (int j = 0; j < 3; ++j)
                    for (int k = j; k < 3; ++k, ++idx) hess[idx] -= m * q2 * g[j] * g[k];
            }
        }
    return ll;
}

double MarkovTreatmentModel::eval(const double* th, const double* counts, double* score,
                                  double* hess) const {
    double cells[8];
    aggregate(counts, cells);
    const double ll = eval_cells(th, q_, cells, score, hess);
    double W = (double)n_;
    if (counts) {
        W = 0.0;
        for (std::size_t i = 0; i < n_; ++i) W += counts[i];
    }
    const double inv = 1.0 / W;
    for (int j = 0; j < 3; ++j) score[j] *= inv;
    for (int j = 0; j < 6; ++j) hess[j] *= inv;
    return ll * inv;
}

void MarkovTreatmentModel::per_subject_terms(const double* th, std::vector<double>& ll,
                                             Matrix& scores,
                                             std::vector<double>& hess_rows) const {
    ll.assign(n_, 0.0);
    scores = Matrix(n_, 3);
    hess_rows.assign(n_ * 6, 0.0);
    // 8 distinct per-row contributions; precompute and combine with the cell
    // counts of each subject
    double cl[8], cs[8][3], ch[8][6];
    for (int l = 0; l < 2; ++l)
        for (int z = 0; z < 2; ++z) {
            const double pi = pi_cell(th, q_, l, z);
            const double sz = z == 1 ? 0.5 : -0.5;
            const double g[3] = {l == 0 ? sz : 0.0, l == 1 ? sz : 0.0,
                                 (1.0 - q_) * (l == 1 ? 1.0 : -1.0)};
            for (int a = 0; a < 2; ++a) {
                const int cell = 4 * l + 2 * z + a;
                const double pa = a == 1 ? pi : 1.0 - pi;
                cl[cell] = std::log(pa);
                const double c = a == 1 ? 1.0 / pi : -1.0 / (1.0 - pi);
                const double q2 = 1.0 / (pa * pa);
                for (int j = 0; j < 3; ++j) cs[cell][j] = c * g[j];
                int idx = 0;
                for (int j = 0; j < 3; ++j)
                    for (int k = j; k < 3; ++k, ++idx) ch[cell][idx] = -q2 * g[j] * g[k];
            }
        }
    for (std::size_t i = 0; i < n_; ++i) {
        const double* m = &subject_cells_[i * 8];
        for (int cell = 0; cell < 8; ++cell) {
            if (m[cell] == 0.0) continue;
            ll[i] += m[cell] * cl[cell];
            for (int j = 0; j < 3; ++j) scores(i, j) += m[cell] * cs[cell][j];
            for (int j = 0; j < 6; ++j) hess_rows[i * 6 + j] += m[cell] * ch[cell][j];
        }
    }
}

NuisanceFit MarkovTreatmentModel::fit(const FitOptions& opt) const {
    std::vector<double> init{0.1, 0.1, 0.5};
    if (opt.init) {
        if (opt.init->size() != 3) throw InvalidParams("markov fit: init size mismatch");
        init = *opt.init;
    }
    const double* counts = nullptr;
    if (opt.subject_weights) {
        if (opt.subject_weights->size() != n_)
            throw InvalidParams("markov fit: subject weight length mismatch");
        counts = opt.subject_weights->data();
    }
    auto ev = [&](const double* th, double* s, double* h) {
        return eval(th, counts, s, h);
    };
    NewtonResult r = newton_fit(ev, init, opt.newton);
    if (!(r.theta[0] > -1.0 && r.theta[0] < 1.0 && r.theta[1] > -1.0 && r.theta[1] < 1.0 &&
          r.theta[2] > 0.0 && r.theta[2] < 1.0))
        throw InvalidParams("markov fit: estimates outside their ranges");
    NuisanceFit fit = package_fit(*this, r);
    fit.kind = NuisanceFit::Kind::MARKOV_TREATMENT;
    fit.alpha = {r.theta[0], r.theta[1]};
    fit.nu = {r.theta[2]};
    fit.q = q_;
    fit.gamma_known_half = true;
    return fit;
}

NuisanceFit fit_probit_treatment(const LongitudinalPanel& panel,
                                 const CovariateSpec& alpha_spec,
                                 const CovariateSpec& nu_spec, const FitOptions& opt) {
    ProbitTreatmentModel model(panel, alpha_spec, nu_spec, opt.only_period,
                               opt.baseline_only);
    return model.fit(opt);
}

NuisanceFit fit_logistic_iv_density(const LongitudinalPanel& panel,
                                    const CovariateSpec& spec, const FitOptions& opt) {
    LogisticIvModel model(panel, spec, opt.only_period);
    return model.fit(opt);
}

NuisanceFit fit_markov_treatment(const LongitudinalPanel& panel, double q_known,
                                 const FitOptions& opt) {
    MarkovTreatmentModel model(panel, q_known);
    return model.fit(opt);
}

double delta_from_fit(const NuisanceFit& fit, const std::vector<double>& x) {
    switch (fit.kind) {
        case NuisanceFit::Kind::PROBIT_TREATMENT: {
            if (x.size() != fit.alpha.size())
                throw InvalidParams("delta_from_fit: covariate row size mismatch");
            double idx = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) idx += fit.alpha[j] * x[j];
            return normal_cdf(idx);
        }
        case NuisanceFit::Kind::MARKOV_TREATMENT: {
            if (x.size() != 2) throw InvalidParams("delta_from_fit: expected row (1, l)");
            return x[1] == 1.0 ? fit.alpha[1] : fit.alpha[0];
        }
        default:
            throw InvalidParams("delta_from_fit: fit has no compliance model");
    }
}

double fz_from_fit(const NuisanceFit& fit, const std::vector<double>& x) {
    if (fit.gamma_known_half) return 0.5;
    if (x.size() != fit.gamma.size())
        throw InvalidParams("fz_from_fit: covariate row size mismatch");
    double idx = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) idx += fit.gamma[j] * x[j];
    return logistic(idx);
}

namespace {

void write_vector(std::ofstream& f, const char* name, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v[j]);
        f << name << j << "=" << buf << "\n";
    }
}

}  // namespace

void write_nuisance_fit(const NuisanceFit& fit, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    const char* kind = fit.kind == NuisanceFit::Kind::PROBIT_TREATMENT  ? "probit_treatment"
                       : fit.kind == NuisanceFit::Kind::LOGISTIC_IV    ? "logistic_iv"
                                                                        : "markov_treatment";
    f << "model=" << kind << "\nconverged=" << (fit.converged ? 1 : 0)
      << "\ngamma_known_half=" << (fit.gamma_known_half ? 1 : 0) << "\n";
    if (fit.kind == NuisanceFit::Kind::MARKOV_TREATMENT) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", fit.q);
        f << "q=" << buf << "\n";
    }
    write_vector(f, "alpha", fit.alpha);
    write_vector(f, "nu", fit.nu);
    write_vector(f, "gamma", fit.gamma);
    if (!f) throw IoError("write failed: " + path);
}

NuisanceFit read_nuisance_fit(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path);
    NuisanceFit fit;
    std::string line;
    auto grow = [](std::vector<double>& v, std::size_t j, double val) {
        if (v.size() <= j) v.resize(j + 1, 0.0);
        v[j] = val;
    };
    while (std::getline(f, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "model") {
            if (val == "probit_treatment")
                fit.kind = NuisanceFit::Kind::PROBIT_TREATMENT;
            else if (val == "logistic_iv")
                fit.kind = NuisanceFit::Kind::LOGISTIC_IV;
            else if (val == "markov_treatment")
                fit.kind = NuisanceFit::Kind::MARKOV_TREATMENT;
            else
                throw IoError("unknown model kind: " + val);
        } else if (key == "converged") {
            fit.converged = val == "1";
        } else if (key == "gamma_known_half") {
            fit.gamma_known_half = val == "1";
        } else if (key == "q") {
            fit.q = std::strtod(val.c_str(), nullptr);
        } else if (key.rfind("alpha", 0) == 0) {
            grow(fit.alpha, std::strtoul(key.c_str() + 5, nullptr, 10),
                 std::strtod(val.c_str(), nullptr));
        } else if (key.rfind("nu", 0) == 0) {
            grow(fit.nu, std::strtoul(key.c_str() + 2, nullptr, 10),
                 std::strtod(val.c_str(), nullptr));
        } else if (key.rfind("gamma", 0) == 0) {
            grow(fit.gamma, std::strtoul(key.c_str() + 5, nullptr, 10),
                 std::strtod(val.c_str(), nullptr));
        }
    }
    fit.theta.clear();
    fit.theta.insert(fit.theta.end(), fit.alpha.begin(), fit.alpha.end());
    fit.theta.insert(fit.theta.end(), fit.nu.begin(), fit.nu.end());
    fit.theta.insert(fit.theta.end(), fit.gamma.begin(), fit.gamma.end());
    return fit;
}

}  // namespace ivmsm
