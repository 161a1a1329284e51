#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivmsm/panel.hpp"

namespace ivmsm {

// P(A_t=1 | history) or P(Z_t=1 | history); callables read what they need
// from the panel row (i, t).
using ProbabilityFn =
    std::function<double(const LongitudinalPanel&, std::size_t, std::size_t)>;
// Compliance difference at treatment level a given the history at (i, t).
using DeltaFn =
    std::function<double(const LongitudinalPanel&, std::size_t, std::size_t, double)>;
// Stabilizing factor gamma for period t (typically a function of A_{t-1}).
using GammaFn =
    std::function<double(const LongitudinalPanel&, std::size_t, std::size_t)>;

struct WeightSet {
    enum class Kind { UNIT, SRA, SRA_STABILIZED, IV, IV_STABILIZED, ORACLE };
    Kind kind = Kind::UNIT;
    std::size_t n = 0, T = 0;
    // factors live as log-magnitude plus sign so long products cannot
    // under/overflow; cumulative products are reconstructed on demand
    std::vector<double> log_w;        // n*T
    std::vector<std::int8_t> sign_w;  // n*T, each -1 or +1

    double w(std::size_t i, std::size_t t) const {
        return (double)sign_w[i * T + t] * std::exp(log_w[i * T + t]);
    }
    // prod_{tau <= t} w_tau
    double wbar_through(std::size_t i, std::size_t t) const {
        double s = 0.0;
        int sg = 1;
        for (std::size_t tau = 0; tau <= t; ++tau) {
            s += log_w[i * T + tau];
            sg *= sign_w[i * T + tau];
        }
        return (double)sg * std::exp(s);
    }
    double wbar(std::size_t i) const { return wbar_through(i, T - 1); }
    std::vector<double> inverse_wbar() const {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            int sg = 1;
            for (std::size_t t = 0; t < T; ++t) {
                s += log_w[i * T + t];
                sg *= sign_w[i * T + t];
            }
            out[i] = (double)sg * std::exp(-s);
        }
        return out;
    }
};

WeightSet unit_weights(const LongitudinalPanel& panel);

// w_t = f(A_t | history) at the observed A_t: propensity if A_t=1, its
// complement otherwise. PositivityViolation outside (1e-10, 1-1e-10).
WeightSet sra_weights(const LongitudinalPanel& panel, const ProbabilityFn& propensity);

// w_t = f(A_t | history with L) / f(A_t | treatment history only), so the
// inverted cumulative weight is the usual stabilized product.
WeightSet sra_stabilized_weights(const LongitudinalPanel& panel,
                                 const ProbabilityFn& marginal,
                                 const ProbabilityFn& propensity);

// w_t = (-1)^{1-Z_t} f_{Z_t}(Z_t | history) Delta_t(A_t, history): signed by
// design. ZeroDelta below 1e-10 in magnitude; InvalidFz outside (1e-10, 1-1e-10).
WeightSet iv_weights(const LongitudinalPanel& panel, const ProbabilityFn& fz,
                     const DeltaFn& delta);

// IV factors divided by gamma_t; ZeroGamma below 1e-10 in magnitude.
WeightSet iv_stabilized_weights(const LongitudinalPanel& panel, const GammaFn& gamma,
                                const ProbabilityFn& fz, const DeltaFn& delta);

// Binary treatment: Delta at level 0 is the negative of Delta at level 1.
inline double binary_delta_symmetry(double delta_at_1) { return -delta_at_1; }

// Audit export, one row per (subject, period): subject,t,w,wbar.
void write_weights_csv(const WeightSet& ws, const std::string& path);

}  // namespace ivmsm
