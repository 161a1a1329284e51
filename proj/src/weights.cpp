#include "ivmsm/weights.hpp"

#include <cstdio>
#include <fstream>

#include "ivmsm/errors.hpp"

namespace ivmsm {

namespace {

constexpr double kEps = 1e-10;

WeightSet blank(const LongitudinalPanel& panel, WeightSet::Kind kind) {
    WeightSet ws;
    ws.kind = kind;
    ws.n = panel.n;
    ws.T = panel.T;
    ws.log_w.assign(panel.n * panel.T, 0.0);
    ws.sign_w.assign(panel.n * panel.T, 1);
    return ws;
}

double checked_probability(double p, const char* what) {
    if (!(p > kEps && p < 1.0 - kEps))
        throw PositivityViolation(std::string(what) + " outside (0,1)");
    return p;
}

double observed_binary_prob(double p1, double a) {
    return a == 1.0 ? p1 : 1.0 - p1;
}

}  // namespace

WeightSet unit_weights(const LongitudinalPanel& panel) {
    return blank(panel, WeightSet::Kind::UNIT);
}

WeightSet sra_weights(const LongitudinalPanel& panel, const ProbabilityFn& propensity) {
    if (!panel.binary_treatment)
        throw InvalidParams("sra_weights: treatment must be binary");
    WeightSet ws = blank(panel, WeightSet::Kind::SRA);
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            const double p1 = checked_probability(propensity(panel, i, t), "propensity");
            ws.log_w[i * panel.T + t] =
                std::log(observed_binary_prob(p1, panel.a_at(i, t)));
        }
    return ws;
}

WeightSet sra_stabilized_weights(const LongitudinalPanel& panel,
                                 const ProbabilityFn& marginal,
                                 const ProbabilityFn& propensity) {
    if (!panel.binary_treatment)
        throw InvalidParams("sra_stabilized_weights: treatment must be binary");
    WeightSet ws = blank(panel, WeightSet::Kind::SRA_STABILIZED);
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            const double a = panel.a_at(i, t);
            const double p =
                observed_binary_prob(checked_probability(propensity(panel, i, t), "propensity"), a);
            const double m =
                observed_binary_prob(checked_probability(marginal(panel, i, t), "marginal"), a);
            ws.log_w[i * panel.T + t] = std::log(p) - std::log(m);
        }
    return ws;
}

namespace {

void fill_iv(WeightSet& ws, const LongitudinalPanel& panel, const GammaFn* gamma,
             const ProbabilityFn& fz, const DeltaFn& delta) {
    for (std::size_t i = 0; i < panel.n; ++i)
        for (std::size_t t = 0; t < panel.T; ++t) {
            const double z = panel.z_at(i, t);
            if (z != 0.0 && z != 1.0)
                throw InvalidParams("iv weights: instrument must be binary");
            const double p1 = fz(panel, i, t);
            if (!(p1 > kEps && p1 < 1.0 - kEps))
                throw InvalidFz("iv weights: instrument density outside (0,1)");
            const double fobs = z == 1.0 ? p1 : 1.0 - p1;
            const double d = delta(panel, i, t, panel.a_at(i, t));
            if (!(std::abs(d) >= kEps))
                throw ZeroDelta("iv weights: compliance difference vanishes");
            double lw = std::log(fobs) + std::log(std::abs(d));
            int sg = (z == 1.0 ? 1 : -1) * (d > 0.0 ? 1 : -1);
            if (gamma) {
                const double g = (*gamma)(panel, i, t);
                if (!(std::isfinite(g) && std::abs(g) >= kEps))
                    throw ZeroGamma("iv weights: stabilizing factor vanishes");
                lw -= std::log(std::abs(g));
                if (g < 0.0) sg = -sg;
            }
            ws.log_w[i * panel.T + t] = lw;
            ws.sign_w[i * panel.T + t] = (std::int8_t)sg;
        }
}

}  // namespace

WeightSet iv_weights(const LongitudinalPanel& panel, const ProbabilityFn& fz,
                     const DeltaFn& delta) {
    WeightSet ws = blank(panel, WeightSet::Kind::IV);
    fill_iv(ws, panel, nullptr, fz, delta);
    return ws;
}

WeightSet iv_stabilized_weights(const LongitudinalPanel& panel, const GammaFn& gamma,
                                const ProbabilityFn& fz, const DeltaFn& delta) {
    WeightSet ws = blank(panel, WeightSet::Kind::IV_STABILIZED);
    fill_iv(ws, panel, &gamma, fz, delta);
    return ws;
}

void write_weights_csv(const WeightSet& ws, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "subject,t,w,wbar\n";
    char buf[90];
    for (std::size_t i = 0; i < ws.n; ++i)
        for (std::size_t t = 0; t < ws.T; ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", i, t + 1, ws.w(i, t),
                          ws.wbar_through(i, t));
            f << buf;
        }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace ivmsm
