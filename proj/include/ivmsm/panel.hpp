#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ivmsm/errors.hpp"

namespace ivmsm {

// Rectangular longitudinal data: n subjects x T periods, flat row-major
// storage indexed (subject, period). Periods are 1..T externally, 0-based
// internally; all time-0 quantities are the constant 0 by convention.
struct LongitudinalPanel {
    std::size_t n = 0;    // subjects
    std::size_t T = 0;    // periods per subject
    std::size_t k = 0;    // observed covariate width
    std::size_t k_u = 0;  // latent covariate width (simulation output only)
    bool binary_treatment = true;
    bool repeated_y = false;  // per-period y_t instead of one terminal y

    std::vector<double> a;  // n*T treatments
    std::vector<double> z;  // n*T instruments, 0/1
    std::vector<double> l;  // n*T*k covariates
    std::vector<double> u;  // n*T*k_u latent covariates
    std::vector<double> y;  // n (terminal) or n*T (repeated)

    double a_at(std::size_t i, std::size_t t) const { return a[i * T + t]; }
    double z_at(std::size_t i, std::size_t t) const { return z[i * T + t]; }
    double l_at(std::size_t i, std::size_t t, std::size_t j) const {
        return l[(i * T + t) * k + j];
    }
    double u_at(std::size_t i, std::size_t t, std::size_t j) const {
        return u[(i * T + t) * k_u + j];
    }
    double y_terminal(std::size_t i) const { return y[i]; }
    double y_at(std::size_t i, std::size_t t) const { return y[i * T + t]; }

    std::vector<double> treatment_path(std::size_t i) const {
        return {a.begin() + i * T, a.begin() + (i + 1) * T};
    }
};

enum class MeanModel { LINEAR_CUMULATIVE, LINEAR_GENERAL };

// Marginal mean model E(Y_abar) = beta' g(abar) and the index function h used
// by the estimating equation. Defaults: g = (1, sum_t a_t) and h = g.
struct MsmmSpec {
    MeanModel mean_model = MeanModel::LINEAR_CUMULATIVE;
    std::size_t beta_dim = 2;
    std::function<std::vector<double>(const std::vector<double>&)> basis;  // g
    std::function<std::vector<double>(const std::vector<double>&)> index;  // h
};

// Every invariant violation as a message; empty means the panel is well formed.
std::vector<std::string> validate(const LongitudinalPanel& panel);

// Per-subject sum of treatments over all T periods.
std::vector<double> cumulative_treatment(const LongitudinalPanel& panel);

double path_sum(const std::vector<double>& path);

// g(abar): regressor row of the mean model.
std::vector<double> mean_basis_row(const MsmmSpec& spec, const std::vector<double>& path);
// h(abar): index-function row; defaults to the gradient basis g.
std::vector<double> design_row(const MsmmSpec& spec, const std::vector<double>& path);
// beta' g(abar)
double mean_value(const MsmmSpec& spec, const std::vector<double>& beta,
                  const std::vector<double>& path);

// Copy without latent U columns (observed-data view of a simulated panel).
LongitudinalPanel drop_latent(const LongitudinalPanel& panel);

// CSV long format, header subject,t,a,z,l1..lk[,u1..uk][,y|y_t]. Terminal
// outcome occupies a `y` column filled only on each subject's last period row;
// repeated outcomes use a `y_t` column on every row. 17 significant digits,
// bit-exact round trip. Rows must be grouped by subject with t ascending.
void write_panel_csv(const LongitudinalPanel& panel, const std::string& path);
LongitudinalPanel read_panel_csv(const std::string& path);

}  // namespace ivmsm
