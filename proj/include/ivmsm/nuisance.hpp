#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivmsm/numerics.hpp"
#include "ivmsm/panel.hpp"

namespace ivmsm {

// Regression-row builder for one (subject, period) cell; writes d values.
struct CovariateSpec {
    std::size_t d = 0;  // 0 => module default
    std::function<void(const LongitudinalPanel&, std::size_t, std::size_t, double*)> fill;
};

// (1, l1..lk)
CovariateSpec default_alpha_covariates(const LongitudinalPanel& panel);
// (1, l1..lk, u1..uk_u) — latent columns join the baseline model when present
CovariateSpec default_nu_covariates(const LongitudinalPanel& panel);

struct FitOptions {
    const std::vector<double>* subject_weights = nullptr;  // length n, default 1
    const std::vector<double>* init = nullptr;             // stacked theta start
    NewtonConfig newton;
    int only_period = -1;        // >=0: fit that period alone instead of pooling
    bool baseline_only = false;  // probit: drop the instrument mixture term
};

struct NuisanceFit {
    enum class Kind { PROBIT_TREATMENT, LOGISTIC_IV, MARKOV_TREATMENT };
    Kind kind = Kind::PROBIT_TREATMENT;
    std::vector<double> alpha;  // compliance-difference model parameters
    std::vector<double> nu;     // baseline treatment model parameters
    std::vector<double> gamma;  // instrument density model; empty => known 1/2
    bool gamma_known_half = true;
    double q = 0.5;             // known mixing probability (markov kind)
    std::vector<double> theta;  // stacked parameters in score order
    Matrix per_obs_scores;      // n x dim: per-subject score rows at theta
    Matrix information;         // mean observed information (-d2 loglik / n)
    bool converged = false;
};

// Packed symmetric storage helpers (upper triangle, row major).
inline std::size_t packed_size(std::size_t p) { return p * (p + 1) / 2; }
inline std::size_t packed_index(std::size_t p, std::size_t j, std::size_t k) {
    return j * p - j * (j - 1) / 2 + (k - j);  // requires j <= k
}
Matrix unpack_symmetric(const double* packed, std::size_t p);

// Observed-data mixture probit for a binary treatment with a randomized binary
// instrument: P(A=1 | x, z) = Phi(nu'xn)(1 - Phi(alpha'xa)) + z Phi(alpha'xa).
// Rows are materialized once; eval() is a single fused pass returning the mean
// (per weighted subject) log-likelihood and filling optional outputs, which is
// what keeps resampled refits affordable.
class ProbitTreatmentModel {
  public:
    ProbitTreatmentModel(const LongitudinalPanel& panel, const CovariateSpec& alpha_spec,
                         const CovariateSpec& nu_spec, int only_period = -1,
                         bool baseline_only = false);

    std::size_t n() const { return n_; }
    std::size_t rows() const { return nrows_; }
    std::size_t da() const { return da_; }
    std::size_t dn() const { return dn_; }
    std::size_t dim() const { return da_ + dn_; }

    // counts: per-subject weights (nullptr => all one); score/hess: mean score
    // (dim) and mean packed hessian; pi_out / delta_out: fitted P(A=1|x,z) and
    // Phi(alpha'xa) per row; pi_range: {min pi, max pi} over weighted rows.
    double eval(const double* theta, const double* counts, double* score, double* hess,
                double* pi_out = nullptr, double* delta_out = nullptr,
                double* pi_range = nullptr) const;

    // per-subject log-likelihood, score rows and packed hessians at theta, for
    // count-weighted warm starts.
    void per_subject_terms(const double* theta, std::vector<double>& ll, Matrix& scores,
                           std::vector<double>& hess_rows) const;

    NuisanceFit fit(const FitOptions& opt = {}) const;

  private:
    std::size_t n_ = 0, nrows_ = 0, da_ = 0, dn_ = 0;
    bool baseline_only_ = false;
    std::vector<double> xa_, xn_;   // nrows x da, nrows x dn
    std::vector<double> a_, z_;     // nrows
    std::vector<std::uint32_t> subject_;  // nrows
};

// Bernoulli log-likelihood of the instrument on history covariates, logistic
// link.
class LogisticIvModel {
  public:
    LogisticIvModel(const LongitudinalPanel& panel, const CovariateSpec& spec,
                    int only_period = -1);
    std::size_t n() const { return n_; }
    std::size_t dim() const { return d_; }
    double eval(const double* theta, const double* counts, double* score, double* hess,
                double* p_out = nullptr, double* p_range = nullptr) const;
    void per_subject_terms(const double* theta, std::vector<double>& ll, Matrix& scores,
                           std::vector<double>& hess_rows) const;
    NuisanceFit fit(const FitOptions& opt = {}) const;

  private:
    std::size_t n_ = 0, nrows_ = 0, d_ = 0;
    std::vector<double> x_, z_;
    std::vector<std::uint32_t> subject_;
};

// Two-state observed model with known mixing probability q:
//   P(A=1 | L=l, Z=z) = q/2 + (1-q) p_L^{l}(1-p_L)^{1-l} + (2z-1) delta_l / 2,
// theta = (delta0, delta1, p_L). Rows collapse onto the 8 cells (l, z, a), so
// reweighted refits cost O(1) after aggregation.
class MarkovTreatmentModel {
  public:
    MarkovTreatmentModel(const LongitudinalPanel& panel, double q);
    std::size_t n() const { return n_; }
    double q() const { return q_; }
    static double pi_cell(const double* theta, double q, int l, int z);

    // cells: weighted counts indexed 4l + 2z + a
    void aggregate(const double* counts, double* cells) const;
    static double eval_cells(const double* theta, double q, const double* cells,
                             double* score, double* hess);
    double eval(const double* theta, const double* counts, double* score,
                double* hess) const;
    void per_subject_terms(const double* theta, std::vector<double>& ll, Matrix& scores,
                           std::vector<double>& hess_rows) const;
    NuisanceFit fit(const FitOptions& opt = {}) const;
    const std::vector<double>& subject_cells() const { return subject_cells_; }

  private:
    std::size_t n_ = 0;
    double q_ = 0.5;
    std::vector<double> subject_cells_;  // n x 8
};

NuisanceFit fit_probit_treatment(const LongitudinalPanel& panel,
                                 const CovariateSpec& alpha_spec = {},
                                 const CovariateSpec& nu_spec = {},
                                 const FitOptions& opt = {});
NuisanceFit fit_logistic_iv_density(const LongitudinalPanel& panel,
                                    const CovariateSpec& spec = {},
                                    const FitOptions& opt = {});
NuisanceFit fit_markov_treatment(const LongitudinalPanel& panel, double q_known,
                                 const FitOptions& opt = {});

// Fitted compliance difference Delta at a covariate row (probit: Phi(alpha'x);
// markov: delta_l with x = (1, l)).
double delta_from_fit(const NuisanceFit& fit, const std::vector<double>& x);
// Fitted instrument density f_Z(1 | x) (logistic kind; 1/2 when known).
double fz_from_fit(const NuisanceFit& fit, const std::vector<double>& x);

// Key-value text serialization for CLI reuse.
void write_nuisance_fit(const NuisanceFit& fit, const std::string& path);
NuisanceFit read_nuisance_fit(const std::string& path);

}  // namespace ivmsm
