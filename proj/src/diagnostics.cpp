#include "ivmsm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "ivmsm/errors.hpp"
#include "ivmsm/estimators.hpp"
#include "ivmsm/numerics.hpp"
#include "ivmsm/rng.hpp"
#include "ivmsm/weights.hpp"

namespace ivmsm {

namespace {

constexpr double kTol = 1e-10;       // deviation tolerance for the table checks
constexpr double kNormTol = 1e-9;    // normalization slack for probability columns

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void validate_table(const ConditionalTable& tbl, const char* who) {
    if (tbl.n_a < 2 || tbl.n_cell == 0 || tbl.n_u == 0)
        throw InvalidParams(std::string(who) + ": empty table dimension");
    if (tbl.p.size() != tbl.n_a * tbl.n_cell * tbl.n_u * 2)
        throw InvalidParams(std::string(who) + ": table storage does not match dimensions");
    for (std::size_t cell = 0; cell < tbl.n_cell; ++cell)
        for (std::size_t u = 0; u < tbl.n_u; ++u)
            for (int z = 0; z < 2; ++z) {
                double s = 0.0;
                for (std::size_t a = 0; a < tbl.n_a; ++a) {
                    const double v = tbl.at(a, cell, u, z);
                    if (!std::isfinite(v) || v < -kNormTol || v > 1.0 + kNormTol)
                        throw UnnormalizedTable(std::string(who) +
                                                ": entry outside [0,1]");
                    s += v;
                }
                if (std::fabs(s - 1.0) > kNormTol)
                    throw UnnormalizedTable(std::string(who) +
                                            ": probabilities do not sum to one");
            }
}

}  // namespace

ConditionalTable ConditionalTable::zeros(std::size_t n_a, std::size_t n_cell,
                                         std::size_t n_u) {
    ConditionalTable t;
    t.n_a = n_a;
    t.n_cell = n_cell;
    t.n_u = n_u;
    t.p.assign(n_a * n_cell * n_u * 2, 0.0);
    return t;
}

double& ConditionalTable::at(std::size_t a, std::size_t cell, std::size_t u, int z) {
    return p[((a * n_cell + cell) * n_u + u) * 2 + (std::size_t)z];
}

double ConditionalTable::at(std::size_t a, std::size_t cell, std::size_t u, int z) const {
    return p[((a * n_cell + cell) * n_u + u) * 2 + (std::size_t)z];
}

ConditionalTable markov_kernel_table(const MarkovDgpParams& params) {
    ConditionalTable t = ConditionalTable::zeros(2, 2, 2);
    for (int a = 0; a < 2; ++a)
        for (int l = 0; l < 2; ++l)
            for (int u = 0; u < 2; ++u)
                for (int z = 0; z < 2; ++z)
                    t.at(a, l, u, z) = markov_treatment_prob(params, a, l, u, z);
    return t;
}

ConditionalTable linear_kernel_table(const LinearDgpParams& params,
                                     const std::vector<double>& l_grid,
                                     const std::vector<double>& u_grid) {
    if (l_grid.empty() || u_grid.empty())
        throw InvalidParams("linear_kernel_table: empty grid");
    ConditionalTable t = ConditionalTable::zeros(2, l_grid.size(), u_grid.size());
    for (std::size_t li = 0; li < l_grid.size(); ++li) {
        const double delta = normal_cdf(params.alpha0 + params.alpha1 * l_grid[li]);
        for (std::size_t ui = 0; ui < u_grid.size(); ++ui) {
            const double base =
                normal_cdf(params.nu0 + params.nu1 * l_grid[li] + params.nu2 * u_grid[ui]);
            for (int z = 0; z < 2; ++z) {
                const double p1 = base * (1.0 - delta) + z * delta;
                t.at(1, li, ui, z) = p1;
                t.at(0, li, ui, z) = 1.0 - p1;
            }
        }
    }
    return t;
}

IctReport check_ict(const std::vector<ConditionalTable>& model) {
    if (model.empty()) throw InvalidParams("check_ict: no tables");
    IctReport rep;
    double max_abs_contrast = 0.0;
    for (std::size_t t = 0; t < model.size(); ++t) {
        const ConditionalTable& tbl = model[t];
        validate_table(tbl, "check_ict");
        for (std::size_t a = 0; a < tbl.n_a; ++a)
            for (std::size_t cell = 0; cell < tbl.n_cell; ++cell) {
                double lo = std::numeric_limits<double>::infinity();
                double hi = -lo;
                for (std::size_t u = 0; u < tbl.n_u; ++u) {
                    const double d = tbl.at(a, cell, u, 1) - tbl.at(a, cell, u, 0);
                    lo = std::min(lo, d);
                    hi = std::max(hi, d);
                    max_abs_contrast = std::max(max_abs_contrast, std::fabs(d));
                }
                const double dev = hi - lo;
                if (dev > rep.max_deviation) {
                    rep.max_deviation = dev;
                    rep.worst_t = t;
                    rep.worst_a = a;
                    rep.worst_cell = cell;
                }
            }
    }
    rep.pass = rep.max_deviation <= kTol;
    rep.iv_irrelevant = rep.pass && max_abs_contrast <= kTol;
    return rep;
}

OmegaTable OmegaTable::zeros(std::size_t n_l) {
    OmegaTable t;
    t.n_l = n_l;
    t.w.assign(4 * n_l, 0.0);
    return t;
}

double& OmegaTable::at(std::size_t a, std::size_t z, std::size_t l) {
    return w[(a * 2 + z) * n_l + l];
}

double OmegaTable::at(std::size_t a, std::size_t z, std::size_t l) const {
    return w[(a * 2 + z) * n_l + l];
}

ConverseReport check_point_exposure_converse(const OmegaTable& omega,
                                             const ConditionalTable& pA) {
    if (pA.n_a != 2)
        throw InvalidParams("point-exposure check: binary treatment required");
    if (omega.n_l == 0 || omega.n_l != pA.n_cell)
        throw InvalidParams(
            "point-exposure check: weight and treatment tables disagree on the grid");
    if (omega.w.size() != 4 * omega.n_l)
        throw InvalidParams("point-exposure check: weight storage does not match n_l");
    validate_table(pA, "point-exposure check");

    ConverseReport rep;

    // (i) each weighted column combination must be free of the latent level
    for (std::size_t l = 0; l < omega.n_l; ++l)
        for (std::size_t a = 0; a < 2; ++a) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (std::size_t u = 0; u < pA.n_u; ++u) {
                const double c = omega.at(a, 0, l) * pA.at(a, l, u, 0) +
                                 omega.at(a, 1, l) * pA.at(a, l, u, 1);
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            rep.max_combo_deviation = std::max(rep.max_combo_deviation, hi - lo);
        }
    rep.combos_constant = rep.max_combo_deviation <= kTol;

    // degenerate case: treatment law never depends on the latent level
    double udev = 0.0;
    for (std::size_t a = 0; a < 2; ++a)
        for (int z = 0; z < 2; ++z)
            for (std::size_t l = 0; l < omega.n_l; ++l) {
                double lo = std::numeric_limits<double>::infinity();
                double hi = -lo;
                for (std::size_t u = 0; u < pA.n_u; ++u) {
                    lo = std::min(lo, pA.at(a, l, u, z));
                    hi = std::max(hi, pA.at(a, l, u, z));
                }
                udev = std::max(udev, hi - lo);
            }
    rep.pa_constant_in_u = udev <= kTol;

    // (ii) internal consistency of the weight table itself
    for (std::size_t l = 0; l < omega.n_l; ++l) {
        const double w00 = omega.at(0, 0, l), w01 = omega.at(0, 1, l);
        const double w10 = omega.at(1, 0, l), w11 = omega.at(1, 1, l);
        if (w00 == 0.0 || w10 == 0.0) {
            rep.max_ratio_deviation = std::numeric_limits<double>::infinity();
            continue;
        }
        const double r0 = w01 / w00, r1 = w11 / w10;
        const double d1 =
            std::fabs(r0 - r1) / std::max({1.0, std::fabs(r0), std::fabs(r1)});
        const double lhs2 = w10 / w00, rhs2 = w11 + w10 - 1.0;
        const double d2 =
            std::fabs(lhs2 - rhs2) / std::max({1.0, std::fabs(lhs2), std::fabs(rhs2)});
        rep.max_ratio_deviation = std::max({rep.max_ratio_deviation, d1, d2});
    }
    rep.ratios_hold = rep.max_ratio_deviation <= kTol;

    rep.pass = rep.combos_constant && (rep.ratios_hold || rep.pa_constant_in_u);
    return rep;
}

const char* dgp_kind_name(DgpKind kind) {
    switch (kind) {
        case DgpKind::LINEAR: return "linear";
        case DgpKind::MARKOV: return "markov";
        case DgpKind::CONTINUOUS: return "continuous";
    }
    throw InvalidParams("dgp_kind_name: unknown kind");
}

namespace {

SimOutput draw(const DgpSpec& dgp, std::size_t n, std::uint64_t seed,
               const std::vector<double>* forced_path, const double* forced_a) {
    switch (dgp.kind) {
        case DgpKind::LINEAR:
            return simulate_linear(dgp.linear, n, seed, forced_path);
        case DgpKind::MARKOV:
            return simulate_markov(dgp.markov, n, seed, forced_path);
        case DgpKind::CONTINUOUS:
            return simulate_continuous(n, seed, dgp.continuous_beta, forced_a);
    }
    throw InvalidParams("verify_theorem1_mc: unknown process");
}

WeightSet true_iv_weights(const DgpSpec& dgp, const LongitudinalPanel& panel) {
    const ProbabilityFn fz = fz_fn_from_fit(nullptr);
    switch (dgp.kind) {
        case DgpKind::LINEAR: {
            NuisanceFit f;
            f.kind = NuisanceFit::Kind::PROBIT_TREATMENT;
            f.alpha = {dgp.linear.alpha0, dgp.linear.alpha1};
            return iv_weights(panel, fz, delta_fn_from_fit(f));
        }
        case DgpKind::MARKOV: {
            NuisanceFit f;
            f.kind = NuisanceFit::Kind::MARKOV_TREATMENT;
            f.alpha = {dgp.markov.delta0, dgp.markov.delta1};
            return iv_weights(panel, fz, delta_fn_from_fit(f));
        }
        case DgpKind::CONTINUOUS: {
            const DeltaFn d = [](const LongitudinalPanel& p, std::size_t i,
                                 std::size_t t, double a) {
                return continuous_delta(a, p.l_at(i, t, 0));
            };
            return iv_weights(panel, fz, d);
        }
    }
    throw InvalidParams("verify_theorem1_mc: unknown process");
}

// nodes and weights for m-point Gauss-Legendre on [a, b]
void gauss_legendre(std::size_t m, double a, double b, std::vector<double>& x,
                    std::vector<double>& w) {
    x.assign(m, 0.0);
    w.assign(m, 0.0);
    const double mid = 0.5 * (b + a), half = 0.5 * (b - a);
    for (std::size_t i = 0; i < (m + 1) / 2; ++i) {
        double t = std::cos(3.14159265358979323846 * ((double)i + 0.75) /
                            ((double)m + 0.5));
        double deriv = 0.0;
        for (int it = 0; it < 100; ++it) {
            double pj = 1.0, pjm1 = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const double pjp1 =
                    ((2.0 * j + 1.0) * t * pj - (double)j * pjm1) / ((double)j + 1.0);
                pjm1 = pj;
                pj = pjp1;
            }
            deriv = (double)m * (t * pj - pjm1) / (t * t - 1.0);
            const double dt = -pj / deriv;
            t += dt;
            if (std::fabs(dt) < 1e-15) break;
        }
        x[i] = mid - half * t;
        x[m - 1 - i] = mid + half * t;
        w[i] = 2.0 * half / ((1.0 - t * t) * deriv * deriv);
        w[m - 1 - i] = w[i];
    }
}

struct McMoments {
    double mean = 0.0, var = 0.0;  // sample mean and variance
};

McMoments moments(const std::vector<double>& v) {
    McMoments m;
    const std::size_t n = v.size();
    for (double x : v) m.mean += x;
    m.mean /= (double)n;
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.var = n > 1 ? ss / (double)(n - 1) : 0.0;
    return m;
}

}  // namespace

Theorem1Report verify_theorem1_mc(const DgpSpec& dgp, const PathFunctional& g,
                                  std::size_t n, std::uint64_t seed,
                                  const std::string& g_name,
                                  const DgpSpec* weight_params) {
    if (!g) throw InvalidParams("verify_theorem1_mc: functional required");
    if (n < 2) throw InvalidParams("verify_theorem1_mc: need n >= 2");
    if (weight_params && weight_params->kind != dgp.kind)
        throw InvalidParams("verify_theorem1_mc: weight parameters for a different process");

    Theorem1Report rep;
    rep.dgp = dgp_kind_name(dgp.kind);
    rep.g_name = g_name;
    rep.n = n;
    rep.seed = seed;

    // observational side, weighted with the generating parameters
    SimOutput obs = draw(dgp, n, derive_seed(seed, 0), nullptr, nullptr);
    const WeightSet ws = true_iv_weights(weight_params ? *weight_params : dgp, obs.panel);
    const std::vector<double> inv = ws.inverse_wbar();
    const std::size_t T = obs.panel.T;
    std::vector<double> path(T), vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < T; ++t) path[t] = obs.panel.a_at(i, t);
        vals[i] = g(obs.panel.y[i], path) * inv[i];
    }
    McMoments lhs = moments(vals);
    rep.lhs = lhs.mean;
    rep.se_lhs = std::sqrt(lhs.var / (double)n);

    // interventional side on its own substreams
    double rhs = 0.0, var_rhs = 0.0;
    if (dgp.kind == DgpKind::CONTINUOUS) {
        const std::size_t m = 48;
        std::vector<double> nodes, wq;
        gauss_legendre(m, -6.0, 6.0, nodes, wq);
        std::vector<double> gv(n);
        for (std::size_t j = 0; j < m; ++j) {
            SimOutput iv = draw(dgp, n, derive_seed(seed, 1 + j), nullptr, &nodes[j]);
            const std::vector<double> fp = {nodes[j]};
            for (std::size_t i = 0; i < n; ++i) gv[i] = g(iv.panel.y[i], fp);
            const McMoments mj = moments(gv);
            rhs += wq[j] * mj.mean;
            var_rhs += wq[j] * wq[j] * mj.var / (double)n;
        }
    } else {
        if (T > 16)
            throw InvalidParams("verify_theorem1_mc: too many treatment paths");
        std::vector<double> gv(n);
        for (std::size_t mask = 0; mask < ((std::size_t)1 << T); ++mask) {
            std::vector<double> fp(T);
            for (std::size_t t = 0; t < T; ++t) fp[t] = (double)((mask >> t) & 1u);
            SimOutput iv = draw(dgp, n, derive_seed(seed, 1 + mask), &fp, nullptr);
            for (std::size_t i = 0; i < n; ++i) gv[i] = g(iv.panel.y[i], fp);
            const McMoments mj = moments(gv);
            rhs += mj.mean;
            var_rhs += mj.var / (double)n;
        }
    }
    rep.rhs = rhs;
    rep.se_rhs = std::sqrt(var_rhs);

    const double pooled = std::sqrt(rep.se_lhs * rep.se_lhs + rep.se_rhs * rep.se_rhs);
    if (pooled > 0.0)
        rep.z = (rep.lhs - rep.rhs) / pooled;
    else
        rep.z = rep.lhs == rep.rhs ? 0.0 : std::numeric_limits<double>::infinity();
    return rep;
}

std::vector<Theorem1Report> theorem1_battery(const DgpSpec& dgp, std::size_t n,
                                             std::uint64_t seed) {
    double b0 = 0.0, b1 = 0.0;
    switch (dgp.kind) {
        case DgpKind::LINEAR:
            b0 = dgp.linear.beta0;
            b1 = dgp.linear.beta1;
            break;
        case DgpKind::MARKOV:
            b1 = dgp.markov.beta;
            break;
        case DgpKind::CONTINUOUS:
            b1 = dgp.continuous_beta;
            break;
    }
    const auto damp = [](const std::vector<double>& p) {
        const double s = path_sum(p);
        return std::exp(-0.5 * s * s);
    };
    const std::vector<std::pair<std::string, PathFunctional>> battery = {
        {"damped_mass",
         [damp](double, const std::vector<double>& p) { return damp(p); }},
        {"damped_path_sum",
         [damp](double, const std::vector<double>& p) {
             return path_sum(p) * damp(p);
         }},
        {"damped_outcome",
         [damp](double y, const std::vector<double>& p) { return y * damp(p); }},
        {"damped_residual",
         [damp, b0, b1](double y, const std::vector<double>& p) {
             return (y - b0 - b1 * path_sum(p)) * damp(p);
         }},
        {"damped_cosine",
         [damp](double y, const std::vector<double>& p) {
             return std::cos(y) * damp(p);
         }},
    };
    std::vector<Theorem1Report> out;
    out.reserve(battery.size());
    for (std::size_t k = 0; k < battery.size(); ++k)
        out.push_back(verify_theorem1_mc(dgp, battery[k].second, n,
                                         derive_seed(seed, 101 + k),
                                         battery[k].first));
    return out;
}

std::string ict_text(const IctReport& r) {
    std::string s = "independent-compliance table check: ";
    s += r.pass ? "PASS" : "FAIL";
    s += "\n  max latent-level deviation of the instrument contrast: " +
         fmt_short(r.max_deviation) + " (tolerance " + fmt_short(kTol) + ")\n";
    if (!r.pass)
        s += "  worst cell: period " + std::to_string(r.worst_t) + ", treatment level " +
             std::to_string(r.worst_a) + ", history cell " +
             std::to_string(r.worst_cell) + "\n";
    if (r.iv_irrelevant)
        s += "  instrument contrast is identically zero: the instrument carries no "
             "information\n";
    return s;
}

std::string ict_csv_header() {
    return "check,pass,max_deviation,iv_irrelevant,worst_t,worst_a,worst_cell";
}

std::string ict_csv_row(const IctReport& r) {
    return std::string("ict,") + (r.pass ? "1" : "0") + "," + fmt(r.max_deviation) + "," +
           (r.iv_irrelevant ? "1" : "0") + "," + std::to_string(r.worst_t) + "," +
           std::to_string(r.worst_a) + "," + std::to_string(r.worst_cell);
}

std::string converse_text(const ConverseReport& r) {
    std::string s = "point-exposure weight-admissibility check: ";
    s += r.pass ? "PASS" : "FAIL";
    s += "\n  weighted combinations constant in the latent level: ";
    s += r.combos_constant ? "yes" : "no";
    s += " (max deviation " + fmt_short(r.max_combo_deviation) + ")\n";
    s += "  weight-ratio consistency: ";
    s += r.ratios_hold ? "yes" : "no";
    s += " (max deviation " + fmt_short(r.max_ratio_deviation) + ")\n";
    if (r.pa_constant_in_u)
        s += "  treatment law is free of the latent level: any weight table is "
             "admissible\n";
    else if (!r.combos_constant)
        s += "  failed: the combinations vary with the latent level\n";
    else if (!r.ratios_hold)
        s += "  failed: the weight ratios are internally inconsistent\n";
    return s;
}

std::string converse_csv_header() {
    return "check,pass,combos_constant,ratios_hold,pa_constant_in_u,"
           "max_combo_deviation,max_ratio_deviation";
}

std::string converse_csv_row(const ConverseReport& r) {
    return std::string("point_exposure,") + (r.pass ? "1" : "0") + "," +
           (r.combos_constant ? "1" : "0") + "," + (r.ratios_hold ? "1" : "0") + "," +
           (r.pa_constant_in_u ? "1" : "0") + "," + fmt(r.max_combo_deviation) + "," +
           fmt(r.max_ratio_deviation);
}

std::string theorem1_text(const Theorem1Report& r) {
    std::string s = "weighting-identity check (" + r.dgp + ", " + r.g_name + "): ";
    s += std::fabs(r.z) <= 3.0 ? "PASS" : "FAIL";
    s += "\n  observational weighted mean: " + fmt_short(r.lhs) + " (se " +
         fmt_short(r.se_lhs) + ")\n";
    s += "  interventional aggregate:     " + fmt_short(r.rhs) + " (se " +
         fmt_short(r.se_rhs) + ")\n";
    s += "  z = " + fmt_short(r.z) + ", n = " + std::to_string(r.n) + "\n";
    return s;
}

std::string theorem1_csv_header() {
    return "check,dgp,g,n,lhs,rhs,se_lhs,se_rhs,z,seed";
}

std::string theorem1_csv_row(const Theorem1Report& r) {
    return "theorem1," + r.dgp + "," + r.g_name + "," + std::to_string(r.n) + "," +
           fmt(r.lhs) + "," + fmt(r.rhs) + "," + fmt(r.se_lhs) + "," + fmt(r.se_rhs) +
           "," + fmt(r.z) + "," + std::to_string(r.seed);
}

}  // namespace ivmsm
