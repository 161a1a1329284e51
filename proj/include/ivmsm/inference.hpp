#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ivmsm/estimators.hpp"
#include "ivmsm/numerics.hpp"
#include "ivmsm/panel.hpp"
#include "ivmsm/simulate.hpp"

namespace ivmsm {

// Sandwich variance of the weighted least-squares estimator from the stacked
// estimating equations (outcome equation plus the nuisance model scores).
//
// The beta rows of the mean Jacobian are analytic:
//   d s_beta / d beta  = -h(abar) x(abar)' / wbar
//   d s_beta / d alpha = -h (y - m) (1/wbar) sum_t (dDelta_t/dalpha) / Delta_t
//   d s_beta / d gamma = -h (y - m) (1/wbar) sum_t (df_{Z_t}/dgamma) / f_{Z_t}
// and the baseline treatment parameters never enter the weights, so their
// column block is zero. Nuisance rows are block-diagonal with minus the mean
// observed information of each fit.
//
// A nuisance block is stacked only when its fit carries per-subject scores for
// this panel (every fit_* function fills them); hand-built parameter-only fits
// are treated as known, as is everything when nuisances_known is set. Only the
// IV kinds have weight Jacobians stacked; the SRA kinds treat their fitted
// weights as known, which errs on the wide side for their intervals.
struct SandwichParts {
    Matrix cov;        // beta-block covariance estimate
    Matrix influence;  // n x dim(beta) influence rows (mean ~ 0 at the solution)
    Matrix jacobian;   // stacked mean Jacobian actually inverted
    std::size_t beta_dim = 0;
    std::size_t stacked_dim = 0;
};

SandwichParts sandwich_details(const LongitudinalPanel& panel,
                               const std::vector<double>& beta_hat, EstimatorKind kind,
                               const EstimateOptions& opt = {},
                               bool nuisances_known = false);

Matrix sandwich_variance(const LongitudinalPanel& panel,
                         const std::vector<double>& beta_hat, EstimatorKind kind,
                         const EstimateOptions& opt = {}, bool nuisances_known = false);

// Subject-level nonparametric bootstrap: resample n whole trajectories with
// replacement (held as multiplicity counts), refit every estimated nuisance
// per replicate (warm-started from the full-data fit), re-estimate beta.
// Replicates where any stage throws are recorded and excluded. Percentile
// intervals use linear interpolation between order statistics.
struct BootstrapResult {
    Matrix cov;  // covariance of the replicate estimates
    std::vector<std::pair<double, double>> ci;
    std::size_t B = 0;
    std::size_t failures = 0;
    Matrix replicates;  // (B - failures) x dim(beta): kept replicate estimates
};

BootstrapResult bootstrap_estimate(const LongitudinalPanel& panel, EstimatorKind kind,
                                   const EstimateOptions& opt, std::size_t B,
                                   double level, std::uint64_t seed);

struct InferOptions {
    EstimateOptions est;
    // fit f_Z(1 | x) on the panel by logistic regression and stack/refit it
    // (ignored when est.iv_density_fit is already supplied)
    bool fit_iv_density = false;
    bool nuisances_known = false;  // sandwich: treat all nuisances as fixed
    std::size_t B = 0;             // bootstrap replicates; 0 disables
    double level = 0.95;
    std::uint64_t seed = 0;  // governs the report echo and the resampling
};

struct InferenceReport {
    EstimateReport est;  // se filled from the sandwich when available
    bool has_sandwich = false;
    Matrix sandwich_cov;
    std::vector<double> sandwich_se;
    std::vector<std::pair<double, double>> ci_sandwich;
    bool has_bootstrap = false;
    Matrix bootstrap_cov;
    std::vector<double> bootstrap_se;
    std::vector<std::pair<double, double>> ci_bootstrap;
    std::size_t B = 0;
    std::size_t bootstrap_failures = 0;
    double level = 0.95;
};

// One-stop estimation: nuisance fits are shared across the point estimate,
// the sandwich, and the bootstrap warm starts. Sandwich intervals are normal;
// bootstrap intervals are percentile.
InferenceReport infer(const LongitudinalPanel& panel, EstimatorKind kind,
                      const InferOptions& opt = {});

// Repeated simulate/estimate/inference sweep tabulating bias and interval
// coverage of one coefficient against the generating truth.
struct CoverageConfig {
    DgpKind dgp = DgpKind::LINEAR;
    LinearDgpParams linear;  // T overridden by the grid
    MarkovDgpParams markov;
    double continuous_beta = 2.0;
    std::vector<EstimatorKind> kinds = {EstimatorKind::IV};
    std::vector<std::size_t> n_grid = {1000};
    std::vector<std::size_t> T_grid = {2};
    std::size_t R = 100;  // replications per cell, at least 100
    std::size_t B = 0;    // bootstrap replicates per replication; 0 disables
    double level = 0.95;
    std::size_t target = 1;  // coefficient tabulated (cumulative-dose slope)
    std::uint64_t seed = 0;
    std::size_t jobs = 1;  // worker threads over replications; results are
                           // aggregated in replication order, so the output
                           // is identical for any worker count
};

struct CoverageRow {
    std::string dgp;
    EstimatorKind kind = EstimatorKind::IV;
    std::size_t n = 0, T = 0, R = 0;
    double bias = 0.0;
    double mc_sd = 0.0;
    double sw_sd = 0.0;  // mean sandwich SE
    double bs_sd = 0.0;  // mean bootstrap SE
    double sw_cover = 0.0;
    double bs_cover = 0.0;
    bool has_bootstrap = false;
    std::uint64_t seed = 0;
};

std::vector<CoverageRow> coverage_experiment(const CoverageConfig& cfg);

// dgp,kind,n,T,R,bias,mc_sd,sw_sd,bs_sd,sw_cover,bs_cover,seed; bootstrap
// cells are empty when the sweep ran without one.
std::string coverage_csv_header();
std::string coverage_csv_row(const CoverageRow& row);
void write_coverage_csv(const std::string& path, const std::vector<CoverageRow>& rows);

}  // namespace ivmsm
