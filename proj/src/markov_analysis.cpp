#include "ivmsm/markov_analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ivmsm/errors.hpp"
#include "ivmsm/rng.hpp"

namespace ivmsm {

namespace {

constexpr double kProbEps = 1e-12;

void check_prob(double p, const char* name) {
    if (!(p > kProbEps && p < 1.0 - kProbEps))
        throw InvalidParams(std::string(name) + " must lie strictly inside (0,1)");
}

void check_delta(double d, const char* name) {
    if (!(std::isfinite(d)) || d == 0.0)
        throw InvalidParams(std::string(name) + " must be nonzero");
}

double rho(double p) { return p * (1.0 - p); }

std::string label(std::initializer_list<std::pair<const char*, double>> kv) {
    std::string out;
    char buf[64];
    for (const auto& [k, v] : kv) {
        if (!out.empty()) out += ';';
        std::snprintf(buf, sizeof buf, "%s=%.17g", k, v);
        out += buf;
    }
    return out;
}

// phi_2 = M^{T-1} (1,1)
std::pair<double, double> iterate_recurrence(const Matrix& M, std::size_t T) {
    double p0 = 1.0, p1 = 1.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
        const double q0 = M(0, 0) * p0 + M(0, 1) * p1;
        const double q1 = M(1, 0) * p0 + M(1, 1) * p1;
        p0 = q0;
        p1 = q1;
    }
    return {p0, p1};
}

Matrix stab_recurrence_matrix(double p_la, double p_al, double d0, double d1, double g0,
                              double g1) {
    const double id0 = 1.0 / (d0 * d0), id1 = 1.0 / (d1 * d1);
    const double pp = p_la * p_al, qq = (1.0 - p_la) * (1.0 - p_al);
    const double pq = p_la * (1.0 - p_al), qp = (1.0 - p_la) * p_al;
    Matrix P(2, 2);
    P(0, 0) = (pp * g0 * g0 + qq * g1 * g1) * id0;
    P(0, 1) = (pq * g0 * g0 + qp * g1 * g1) * id1;
    P(1, 0) = (pq * g1 * g1 + qp * g0 * g0) * id0;
    P(1, 1) = (pp * g1 * g1 + qq * g0 * g0) * id1;
    return P;
}

}  // namespace

const char* growth_model_name(GrowthModel model) {
    switch (model) {
        case GrowthModel::SRA_UNSTAB: return "sra_unstab";
        case GrowthModel::SRA_STAB: return "sra_stab";
        case GrowthModel::IV_UNSTAB: return "iv_unstab";
        case GrowthModel::IV_STAB: return "iv_stab";
    }
    return "unknown";
}

double sra_unstab_second_moment(double p_la, std::size_t T) {
    check_prob(p_la, "p_la");
    return std::pow(rho(p_la), -(double)T);
}

double sra_stab_second_moment(double p_la, double p_al, std::size_t T) {
    check_prob(p_la, "p_la");
    check_prob(p_al, "p_al");
    const double base =
        1.0 + 4.0 * (rho(p_al) / rho(p_la)) * (p_la - 0.5) * (p_la - 0.5);
    return std::pow(base, (double)T);
}

double sra_variance_approx(double p_la, std::size_t T, double lambda, double sigma2) {
    check_prob(p_la, "p_la");
    if (T == 0) throw InvalidParams("horizon must be at least 1");
    const double r = rho(p_la);
    return lambda * lambda * (1.0 + sigma2 / ((double)T * r)) /
           ((double)(T + 1) * std::pow(4.0 * r, (double)T - 1.0));
}

OmegaKappa omega_kappa(double delta0, double delta1) {
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    OmegaKappa ok;
    ok.omega = 1.0 / (delta0 * delta1);
    ok.kappa = 1.0 / (delta0 * delta0) - 1.0 / (delta1 * delta1);
    return ok;
}

GrowthReport sra_unstab_growth(double p_la) {
    check_prob(p_la, "p_la");
    GrowthReport rep;
    rep.model = GrowthModel::SRA_UNSTAB;
    rep.lambda1 = 1.0 / rho(p_la);
    rep.recurrence_matrix = Matrix(1, 1);
    rep.recurrence_matrix(0, 0) = rep.lambda1;
    rep.second_moment = [p_la](std::size_t T) { return sra_unstab_second_moment(p_la, T); };
    rep.params_label = label({{"p_la", p_la}});
    return rep;
}

GrowthReport sra_stab_growth(double p_la, double p_al) {
    check_prob(p_la, "p_la");
    check_prob(p_al, "p_al");
    GrowthReport rep;
    rep.model = GrowthModel::SRA_STAB;
    rep.lambda1 = 1.0 + 4.0 * (rho(p_al) / rho(p_la)) * (p_la - 0.5) * (p_la - 0.5);
    rep.recurrence_matrix = Matrix(1, 1);
    rep.recurrence_matrix(0, 0) = rep.lambda1;
    rep.second_moment = [p_la, p_al](std::size_t T) {
        return sra_stab_second_moment(p_la, p_al, T);
    };
    rep.params_label = label({{"p_la", p_la}, {"p_al", p_al}});
    return rep;
}

GrowthReport iv_unstab_growth(double p, double delta0, double delta1) {
    check_prob(p, "p");
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    const double id0 = 1.0 / (delta0 * delta0), id1 = 1.0 / (delta1 * delta1);
    GrowthReport rep;
    rep.model = GrowthModel::IV_UNSTAB;
    const OmegaKappa ok = omega_kappa(delta0, delta1);
    rep.omega = ok.omega;
    rep.kappa = ok.kappa;
    Matrix M(2, 2);
    M(0, 0) = p * id0;
    M(0, 1) = (1.0 - p) * id1;
    M(1, 0) = (1.0 - p) * id0;
    M(1, 1) = p * id1;
    rep.recurrence_matrix = M;
    const double s = id0 + id1;
    rep.lambda1 = 0.5 * p * s + std::sqrt(0.25 * p * p * s * s -
                                          (2.0 * p - 1.0) * ok.omega * ok.omega);
    // persistence p >= 1/2 caps the growth at p * sqrt(kappa^2 + 4 omega^2)
    if (p >= 0.5) {
        const double bound = p * std::sqrt(ok.kappa * ok.kappa + 4.0 * ok.omega * ok.omega);
        if (!(rep.lambda1 <= bound * (1.0 + 1e-12)))
            throw NoConvergence("iv_unstab_growth: growth bound violated");
    }
    rep.second_moment = [p, delta0, delta1](std::size_t T) {
        return iv_exact_second_moment(p, delta0, delta1, T);
    };
    rep.params_label = label({{"p", p}, {"delta0", delta0}, {"delta1", delta1}});
    return rep;
}

double iv_exact_second_moment(double p, double delta0, double delta1, std::size_t T) {
    check_prob(p, "p");
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    if (T == 0) throw InvalidParams("horizon must be at least 1");
    const double id0 = 1.0 / (delta0 * delta0), id1 = 1.0 / (delta1 * delta1);
    Matrix M(2, 2);
    M(0, 0) = p * id0;
    M(0, 1) = (1.0 - p) * id1;
    M(1, 0) = (1.0 - p) * id0;
    M(1, 1) = p * id1;
    const auto [f0, f1] = iterate_recurrence(M, T);
    return 0.5 * (id0 * f0 + id1 * f1);
}

GrowthReport iv_stab_growth(double p_la, double p_al, double delta0, double delta1,
                            double gamma0, double gamma1) {
    check_prob(p_la, "p_la");
    check_prob(p_al, "p_al");
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    check_delta(gamma0, "gamma0");
    check_delta(gamma1, "gamma1");
    const double gsum = gamma0 + gamma1;
    if (gsum == 0.0) throw InvalidParams("gamma0 + gamma1 must be nonzero");
    GrowthReport rep;
    rep.model = GrowthModel::IV_STAB;
    rep.gamma_raw = {gamma0, gamma1};
    rep.gamma = {gamma0 / gsum, gamma1 / gsum};
    const OmegaKappa ok = omega_kappa(delta0, delta1);
    rep.omega = ok.omega;
    rep.kappa = ok.kappa;
    rep.recurrence_matrix =
        stab_recurrence_matrix(p_la, p_al, delta0, delta1, rep.gamma[0], rep.gamma[1]);
    rep.lambda1 = eig2x2(rep.recurrence_matrix).lambda1;
    const double g0 = rep.gamma[0], g1 = rep.gamma[1];
    rep.second_moment = [p_la, p_al, delta0, delta1, g0, g1](std::size_t T) {
        return iv_stab_second_moment(p_la, p_al, delta0, delta1, g0, g1, T);
    };
    rep.params_label = label({{"p_la", p_la},
                              {"p_al", p_al},
                              {"delta0", delta0},
                              {"delta1", delta1},
                              {"gamma0", gamma0},
                              {"gamma1", gamma1}});
    return rep;
}

double iv_stab_second_moment(double p_la, double p_al, double delta0, double delta1,
                             double gamma0, double gamma1, std::size_t T) {
    check_prob(p_la, "p_la");
    check_prob(p_al, "p_al");
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    if (T == 0) throw InvalidParams("horizon must be at least 1");
    const Matrix P = stab_recurrence_matrix(p_la, p_al, delta0, delta1, gamma0, gamma1);
    const auto [f0, f1] = iterate_recurrence(P, T);
    const double id0 = 1.0 / (delta0 * delta0), id1 = 1.0 / (delta1 * delta1);
    // A_0 ~ Bern(1/2), L_1 | A_0 matches with probability p_al
    const double w0 = p_al * id0 * f0 + (1.0 - p_al) * id1 * f1;      // A_0 = 0
    const double w1 = (1.0 - p_al) * id0 * f0 + p_al * id1 * f1;      // A_0 = 1
    return 0.5 * (gamma0 * gamma0 * w0 + gamma1 * gamma1 * w1);
}

std::vector<double> default_gamma(double p_l, double delta0, double delta1) {
    if (!(p_l >= 0.0 && p_l <= 1.0)) throw InvalidParams("p_l must lie in [0,1]");
    check_delta(delta0, "delta0");
    check_delta(delta1, "delta1");
    const double g0 = p_l * delta0 + (1.0 - p_l) * delta1;
    const double g1 = p_l * delta1 + (1.0 - p_l) * delta0;
    const double s = g0 + g1;
    if (s == 0.0) throw InvalidParams("degenerate stabilizer: gamma sums to zero");
    return {g0 / s, g1 / s};
}

double back_transition_mc(const MarkovDgpParams& params, std::size_t n,
                          std::uint64_t seed) {
    if (params.T < 2) throw InvalidParams("back transition needs at least two periods");
    SimOutput sim = simulate_markov(params, n, seed);
    const LongitudinalPanel& p = sim.panel;
    double both = 0.0, cur = 0.0;
    for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t t = 1; t < p.T; ++t)
            if (p.l_at(i, t, 0) == 1.0) {
                cur += 1.0;
                if (p.l_at(i, t - 1, 0) == 1.0) both += 1.0;
            }
    if (cur == 0.0) throw InvalidParams("no transitions into state one observed");
    return both / cur;
}

MomentMc chain_second_moment_mc(GrowthModel model, double p_la, double p_al,
                                double delta0, double delta1, double gamma0,
                                double gamma1, std::size_t T, std::size_t n_paths,
                                std::uint64_t seed) {
    if (T == 0) throw InvalidParams("chain moment: horizon must be at least 1");
    if (n_paths < 2) throw InvalidParams("chain moment: need at least 2 paths");
    check_prob(p_la, "p_la");
    const bool iv = model == GrowthModel::IV_UNSTAB || model == GrowthModel::IV_STAB;
    const bool stab = model == GrowthModel::SRA_STAB || model == GrowthModel::IV_STAB;
    if (model != GrowthModel::IV_UNSTAB) check_prob(p_al, "p_al");
    if (iv) {
        check_delta(delta0, "delta0");
        check_delta(delta1, "delta1");
    }
    if (model == GrowthModel::IV_STAB) {
        check_delta(gamma0, "gamma0");
        check_delta(gamma1, "gamma1");
    }
    const double m_same = p_la * p_al + (1.0 - p_la) * (1.0 - p_al);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) {
        Rng rng = Rng::substream(seed, i);
        double val = 1.0;
        if (model == GrowthModel::IV_UNSTAB) {
            int l = rng.bernoulli(0.5) ? 1 : 0;
            for (std::size_t t = 0; t < T; ++t) {
                const double d = l ? delta1 : delta0;
                val /= d * d;
                if (!rng.bernoulli(p_la)) l = 1 - l;
            }
        } else {
            int a = rng.bernoulli(0.5) ? 1 : 0;
            for (std::size_t t = 0; t < T; ++t) {
                const int l = rng.bernoulli(p_al) ? a : 1 - a;
                if (model == GrowthModel::IV_STAB) {
                    const double g = a ? gamma1 : gamma0;
                    const double d = l ? delta1 : delta0;
                    val *= (g / d) * (g / d);
                    a = rng.bernoulli(p_la) ? l : 1 - l;
                } else {
                    const int a_next = rng.bernoulli(p_la) ? l : 1 - l;
                    const double f = a_next == l ? p_la : 1.0 - p_la;
                    const double num = stab ? (a_next == a ? m_same : 1.0 - m_same) : 1.0;
                    val *= (num / f) * (num / f);
                    a = a_next;
                }
            }
        }
        sum += val;
        sumsq += val * val;
    }
    const double mean = sum / static_cast<double>(n_paths);
    const double var =
        (sumsq / static_cast<double>(n_paths) - mean * mean) *
        (static_cast<double>(n_paths) / static_cast<double>(n_paths - 1));
    MomentMc out;
    out.value = mean;
    out.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_paths));
    return out;
}

void write_growth_csv(const std::string& path, const std::vector<GrowthReport>& reports,
                      const std::vector<std::size_t>& horizons) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path);
    out << "model,params,T,second_moment,lambda1\n";
    char buf[64];
    for (const GrowthReport& rep : reports)
        for (std::size_t T : horizons) {
            out << growth_model_name(rep.model) << ',' << rep.params_label << ',' << T;
            std::snprintf(buf, sizeof buf, ",%.17g", rep.second_moment(T));
            out << buf;
            std::snprintf(buf, sizeof buf, ",%.17g", rep.lambda1);
            out << buf << '\n';
        }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace ivmsm
