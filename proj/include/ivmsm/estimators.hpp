#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivmsm/nuisance.hpp"
#include "ivmsm/panel.hpp"
#include "ivmsm/simulate.hpp"
#include "ivmsm/weights.hpp"

namespace ivmsm {

enum class EstimatorKind {
    ASSOCIATIONAL,
    SRA,
    SRA_STABILIZED,
    ORACLE,
    IV,
    IV_STABILIZED,
    WALD,
    REPEATED_MEASURES_IV,
};

const char* estimator_kind_name(EstimatorKind kind);
EstimatorKind estimator_kind_from_name(const std::string& name);

// Closed-form weighted least squares: beta = (P_n h x' / wbar)^{-1} P_n h y / wbar
// with h the index rows and x the mean-model basis rows. SingularDesign when
// the weighted cross-product matrix has 1-norm condition above 1e12.
std::vector<double> wls_estimate(const LongitudinalPanel& panel, const WeightSet& weights,
                                 const MsmmSpec& spec);

struct EstimateReport {
    EstimatorKind kind = EstimatorKind::ASSOCIATIONAL;
    std::vector<double> beta;
    std::vector<double> se;  // filled by the inference layer when requested
    double weight_second_moment = 1.0;   // mean of (1/wbar)^2
    double max_abs_inverse_weight = 1.0;
    double design_condition = 0.0;
    bool nuisance_converged = true;
    std::size_t n = 0, T = 0;
    std::uint64_t seed = 0;  // echoed into experiment rows for reproducibility
};

struct EstimateOptions {
    MsmmSpec spec;
    // supplied fits are used as-is; when absent the weight-building kinds fit
    // internally from observed columns only (covariate rows (1, l1..lk))
    const NuisanceFit* treatment_fit = nullptr;
    const NuisanceFit* marginal_fit = nullptr;    // SRA_STABILIZED denominator model
    const NuisanceFit* iv_density_fit = nullptr;  // null => f_Z known = 1/2
    bool markov_treatment = false;  // two-state observed model instead of probit
    double q_known = 0.5;
    const DgpTruth* truth = nullptr;  // ORACLE weights and truth-based checks
    const GammaFn* gamma = nullptr;   // custom stabilizer for IV_STABILIZED
    std::uint64_t seed = 0;           // copied to the report
};

// Dispatch: build the kind's weights, then solve the weighted least squares.
EstimateReport estimate(const LongitudinalPanel& panel, EstimatorKind kind,
                        const EstimateOptions& opt = {});

// Weight construction alone (shared with the inference layer).
WeightSet build_weights(const LongitudinalPanel& panel, EstimatorKind kind,
                        const EstimateOptions& opt);

// Weight construction that also hands back any nuisance models fitted along
// the way (the inference layer stacks their scores and warm-starts bootstrap
// refits from them). Fits supplied through the options are not duplicated
// here; the flags say which members are meaningful.
struct WeightBuild {
    WeightSet weights;
    NuisanceFit treatment;  // valid iff fitted_treatment
    NuisanceFit marginal;   // valid iff fitted_marginal (SRA_STABILIZED)
    bool fitted_treatment = false;
    bool fitted_marginal = false;
};
WeightBuild build_weights_detailed(const LongitudinalPanel& panel, EstimatorKind kind,
                                   const EstimateOptions& opt);

// Covariate rows (1, A_{t-1}) of the stabilized-SRA marginal treatment model;
// intercept-only when T == 1 (there is no previous treatment to condition on).
CovariateSpec sra_marginal_covariates(const LongitudinalPanel& panel);

// Delta / instrument-density callables backed by a fitted nuisance model.
DeltaFn delta_fn_from_fit(const NuisanceFit& fit, const CovariateSpec& alpha_spec = {});
ProbabilityFn fz_fn_from_fit(const NuisanceFit* iv_density_fit,
                             const CovariateSpec& spec = {});
// gamma_a = p_L delta_a + (1 - p_L) delta_{1-a} evaluated at a = A_{t-1}.
GammaFn markov_default_gamma(const NuisanceFit& markov_fit);

struct WaldForms {
    double ratio = 0.0;     // difference of group means of Y over those of A
    double weighted = 0.0;  // signed-weight form with the empirical f_Z
};

WaldForms wald_forms(const LongitudinalPanel& panel);
// The ratio form; ZeroDenominator when the group treatment means coincide
// (exact cross-product test).
double wald_estimate(const LongitudinalPanel& panel);

// Stacked per-period estimating equations for repeated measurements:
// rows (1, sum_{tau<=t} A_tau) against y_t, weighted by 1/wbar_t.
std::vector<double> repeated_measures_iv_estimate(const LongitudinalPanel& panel,
                                                  const WeightSet& weights);

// Plug-in Monte Carlo evaluation of the population bias of the naive kinds on
// the linear process; IV returns zero by construction.
std::vector<double> theoretical_bias(EstimatorKind kind, const LinearDgpParams& params,
                                     std::size_t n_mc, std::uint64_t seed);

// One line per report: kind,beta0,beta1,se0,se1,n,T,seed (missing cells empty).
std::string report_csv_header();
std::string report_csv_row(const EstimateReport& report);

}  // namespace ivmsm
