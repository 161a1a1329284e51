#include "ivmsm/simulate.hpp"

#include <cmath>
#include <fstream>

#include "ivmsm/numerics.hpp"
#include "ivmsm/rng.hpp"

namespace ivmsm {

namespace {

void require_finite(std::initializer_list<double> vs, const char* who) {
    for (double v : vs)
        if (!std::isfinite(v)) throw InvalidParams(std::string(who) + ": non-finite parameter");
}

double loading(const std::vector<double>& v, std::size_t t) {
    if (v.empty()) return 1.0;
    if (t >= v.size()) throw InvalidParams("loading vector shorter than T");
    return v[t];
}

}  // namespace

SimOutput simulate_linear(const LinearDgpParams& prm, std::size_t n, std::uint64_t seed,
                          const std::vector<double>* forced_path) {
    require_finite({prm.lambda0, prm.lambda1, prm.alpha0, prm.alpha1, prm.nu0, prm.nu1,
                    prm.nu2, prm.beta0, prm.beta1},
                   "simulate_linear");
    if (n < 1 || prm.T < 1) throw InvalidParams("simulate_linear: need n>=1, T>=1");
    if (forced_path && forced_path->size() != prm.T)
        throw InvalidParams("simulate_linear: forced path length != T");

    LongitudinalPanel p;
    p.n = n;
    p.T = prm.T;
    p.k = 1;
    p.k_u = 1;
    p.a.resize(n * prm.T);
    p.z.resize(n * prm.T);
    p.l.resize(n * prm.T);
    p.u.resize(n * prm.T);
    p.y.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, i);
        double prev_a = 0.0;  // A_0 = 0
        double y = prm.beta0;
        for (std::size_t t = 0; t < prm.T; ++t) {
            const double ut = rng.normal();
            const double lt = prm.lambda0 + prm.lambda1 * prev_a + rng.normal();
            const double zt = rng.bernoulli(0.5) ? 1.0 : 0.0;
            const double delta = normal_cdf(prm.alpha0 + prm.alpha1 * lt);
            const double base = normal_cdf(prm.nu0 + prm.nu1 * lt + prm.nu2 * ut);
            const double prob = base * (1.0 - delta) + zt * delta;
            if (!(prob > 0.0 && prob < 1.0))
                throw InvalidParams("simulate_linear: treatment probability outside (0,1)");
            const double ua = rng.uniform();  // consumed in forced mode too
            const double at = forced_path ? (*forced_path)[t] : (ua < prob ? 1.0 : 0.0);
            const std::size_t idx = i * prm.T + t;
            p.u[idx] = ut;
            p.l[idx] = lt;
            p.z[idx] = zt;
            p.a[idx] = at;
            y += loading(prm.tau, t) * (lt - (prm.lambda0 + prm.lambda1 * prev_a)) +
                 loading(prm.rho, t) * ut + prm.beta1 * at;
            prev_a = at;
        }
        p.y[i] = y + rng.normal();
    }
    if (forced_path)
        for (double v : *forced_path)
            if (v != 0.0 && v != 1.0) p.binary_treatment = false;

    SimOutput out;
    out.panel = std::move(p);
    out.truth.kind = DgpKind::LINEAR;
    out.truth.beta = {prm.beta0, prm.beta1};
    out.truth.linear = prm;
    return out;
}

double markov_base_prob(const MarkovDgpParams& p, int a, int l, int u) {
    const double cl = l == a ? p.p_L : 1.0 - p.p_L;
    const double cu = u == a ? p.p_U : 1.0 - p.p_U;
    return (1.0 - p.q) * cl + p.q * cu;
}

double markov_treatment_prob(const MarkovDgpParams& p, int a, int l, int u, int z) {
    const double sz = z == 1 ? 1.0 : -1.0;
    const double sa = a == 1 ? 1.0 : -1.0;
    const double dl = l == 1 ? p.delta1 : p.delta0;
    return markov_base_prob(p, a, l, u) + sz * sa * dl / 2.0;
}

namespace {

void validate_markov_params(const MarkovDgpParams& p) {
    require_finite({p.q, p.p_L, p.p_U, p.delta0, p.delta1, p.beta}, "simulate_markov");
    if (!(p.q > 0.0 && p.q < 1.0) || !(p.p_L > 0.0 && p.p_L < 1.0) ||
        !(p.p_U > 0.0 && p.p_U < 1.0))
        throw InvalidParams("simulate_markov: q, p_L, p_U must lie in (0,1)");
    if (p.delta0 == 0.0 || p.delta1 == 0.0)
        throw InvalidParams("simulate_markov: instrument effect delta must be nonzero");
    for (int a = 0; a < 2; ++a)
        for (int l = 0; l < 2; ++l)
            for (int u = 0; u < 2; ++u)
                for (int z = 0; z < 2; ++z) {
                    const double c = markov_treatment_prob(p, a, l, u, z);
                    if (!(c > 0.0 && c < 1.0))
                        throw InvalidParams(
                            "simulate_markov: treatment cell probability outside (0,1)");
                }
}

// E(L_{t+1} | A_t=a) and E(U_{t+1} | A_t=a) under the joint next-state table
// P(L',U' | A=a) = base(a | l',u')/2.
double markov_center_l(const MarkovDgpParams& p, double a) {
    const double pl = a == 1.0 ? p.p_L : 1.0 - p.p_L;
    return (1.0 - p.q) * pl + p.q / 2.0;
}

double markov_center_u(const MarkovDgpParams& p, double a) {
    const double pu = a == 1.0 ? p.p_U : 1.0 - p.p_U;
    return p.q * pu + (1.0 - p.q) / 2.0;
}

}  // namespace

SimOutput simulate_markov(const MarkovDgpParams& prm, std::size_t n, std::uint64_t seed,
                          const std::vector<double>* forced_path) {
    validate_markov_params(prm);
    if (n < 1 || prm.T < 1) throw InvalidParams("simulate_markov: need n>=1, T>=1");
    if (forced_path) {
        if (forced_path->size() != prm.T)
            throw InvalidParams("simulate_markov: forced path length != T");
        for (double v : *forced_path)
            if (v != 0.0 && v != 1.0)
                throw InvalidParams("simulate_markov: forced path must be binary");
    }

    LongitudinalPanel p;
    p.n = n;
    p.T = prm.T;
    p.k = 1;
    p.k_u = 1;
    p.a.resize(n * prm.T);
    p.z.resize(n * prm.T);
    p.l.resize(n * prm.T);
    p.u.resize(n * prm.T);
    p.y.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, i);
        int l = rng.bernoulli(0.5) ? 1 : 0;
        int u = rng.bernoulli(0.5) ? 1 : 0;
        int z = rng.bernoulli(0.5) ? 1 : 0;
        double y = 0.0;
        for (std::size_t t = 0; t < prm.T; ++t) {
            const double prob = markov_treatment_prob(prm, 1, l, u, z);
            const double ua = rng.uniform();
            const int at = forced_path ? (int)(*forced_path)[t] : (ua < prob ? 1 : 0);
            const std::size_t idx = i * prm.T + t;
            p.l[idx] = l;
            p.u[idx] = u;
            p.z[idx] = z;
            p.a[idx] = at;
            const double cl = t == 0 ? 0.5 : markov_center_l(prm, p.a[idx - 1]);
            const double cu = t == 0 ? 0.5 : markov_center_u(prm, p.a[idx - 1]);
            y += (l - cl) + (u - cu) + prm.beta * at;
            if (t + 1 < prm.T) {
                // joint (L',U') table: P(l',u' | A=a) = base(a | l',u')/2
                const double un = rng.uniform();
                double acc = 0.0;
                int nl = 1, nu = 1;
                for (int cl2 = 0; cl2 < 2 && acc <= un; ++cl2)
                    for (int cu2 = 0; cu2 < 2 && acc <= un; ++cu2) {
                        acc += 0.5 * markov_base_prob(prm, at, cl2, cu2);
                        nl = cl2;
                        nu = cu2;
                    }
                l = nl;
                u = nu;
                z = rng.bernoulli(0.5) ? 1 : 0;
            }
        }
        p.y[i] = y + rng.normal();
    }

    SimOutput out;
    out.panel = std::move(p);
    out.truth.kind = DgpKind::MARKOV;
    out.truth.beta = {0.0, prm.beta};
    out.truth.markov = prm;
    return out;
}

double continuous_delta(double a, double l) {
    return normal_pdf(a) - normal_pdf(a / l) / l;
}

double continuous_density(double a, double l, double u, int z) {
    const double base = normal_pdf(a / u) / u;
    return z == 1 ? base + continuous_delta(a, l) : base;
}

SimOutput simulate_continuous(std::size_t n, std::uint64_t seed, double beta,
                              const double* forced_a) {
    require_finite({beta}, "simulate_continuous");
    if (n < 1) throw InvalidParams("simulate_continuous: need n>=1");

    LongitudinalPanel p;
    p.n = n;
    p.T = 1;
    p.k = 1;
    p.k_u = 1;
    p.binary_treatment = false;
    p.a.resize(n);
    p.z.resize(n);
    p.l.resize(n);
    p.u.resize(n);
    p.y.resize(n);

    constexpr int kBudget = 1000000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, i);
        const double l = rng.uniform();
        const double u = rng.uniform();
        const int z = rng.bernoulli(0.5) ? 1 : 0;
        double a;
        if (forced_a) {
            a = *forced_a;
        } else if (z == 0) {
            a = u * rng.normal();
        } else {
            // rejection from mixture proposal g = (N(0,u^2)+N(0,1))/2 with
            // envelope f <= 2g; negative parts of the signed density are
            // clipped to zero.
            int attempt = 0;
            for (;; ++attempt) {
                if (attempt >= kBudget)
                    throw RejectionFailure("simulate_continuous: attempt budget exhausted");
                const bool wide = rng.bernoulli(0.5);
                const double x = wide ? rng.normal() : u * rng.normal();
                const double g = 0.5 * (normal_pdf(x / u) / u + normal_pdf(x));
                const double f = continuous_density(x, l, u, 1);
                if (f > 0.0 && rng.uniform() * 2.0 * g < f) {
                    a = x;
                    break;
                }
            }
        }
        p.a[i] = a;
        p.z[i] = z;
        p.l[i] = l;
        p.u[i] = u;
        p.y[i] = (l - 0.5) + (u - 0.5) + beta * a + rng.normal();
    }

    SimOutput out;
    out.panel = std::move(p);
    out.truth.kind = DgpKind::CONTINUOUS;
    out.truth.beta = {0.0, beta};
    out.truth.continuous_beta = beta;
    return out;
}

double counterfactual_mean(const DgpTruth& truth, const std::vector<double>& path) {
    return truth.beta[0] + truth.beta[1] * path_sum(path);
}

void write_truth_sidecar(const DgpTruth& truth, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(17);
    switch (truth.kind) {
        case DgpKind::LINEAR: {
            const LinearDgpParams& q = truth.linear;
            f << "dgp=linear\nbeta0=" << q.beta0 << "\nbeta1=" << q.beta1
              << "\nlambda0=" << q.lambda0 << "\nlambda1=" << q.lambda1
              << "\nalpha0=" << q.alpha0 << "\nalpha1=" << q.alpha1 << "\nnu0=" << q.nu0
              << "\nnu1=" << q.nu1 << "\nnu2=" << q.nu2 << "\nT=" << q.T << "\n";
            break;
        }
        case DgpKind::MARKOV: {
            const MarkovDgpParams& q = truth.markov;
            f << "dgp=markov\nbeta0=0\nbeta1=" << q.beta << "\nq=" << q.q
              << "\np_L=" << q.p_L << "\np_U=" << q.p_U << "\ndelta0=" << q.delta0
              << "\ndelta1=" << q.delta1 << "\nT=" << q.T << "\n";
            break;
        }
        case DgpKind::CONTINUOUS:
            f << "dgp=continuous\nbeta0=0\nbeta1=" << truth.continuous_beta << "\nT=1\n";
            break;
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace ivmsm
