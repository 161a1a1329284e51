#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivmsm/numerics.hpp"
#include "ivmsm/simulate.hpp"

namespace ivmsm {

// Weight-variance analytics for the alternating two-state chain
//   A_0 ~ Bern(1/2),  L_t | A_{t-1} matches with probability p_AL,
//   A_t | L_t matches with probability p_LA,
// whose L and A marginals are all Bern(1/2). SRA weight factors are
// f(A_t | L_t); IV weight factors carry 1/delta_{L_t}, optionally stabilized
// by gamma_{A_{t-1}}.

enum class GrowthModel { SRA_UNSTAB, SRA_STAB, IV_UNSTAB, IV_STAB };

const char* growth_model_name(GrowthModel model);

struct GrowthReport {
    GrowthModel model = GrowthModel::SRA_UNSTAB;
    // exact E(1/Wbar^2) as a function of the horizon T
    std::function<double(std::size_t)> second_moment;
    double lambda1 = 0.0;  // per-period growth factor of the second moment
    double omega = 0.0;    // IV weakness 1/(delta0 delta1); IV models only
    double kappa = 0.0;    // IV confounding 1/delta0^2 - 1/delta1^2; IV models only
    Matrix recurrence_matrix;          // drives the growth (1x1 for SRA models)
    std::vector<double> gamma_raw;     // stabilizer as supplied (IV_STAB)
    std::vector<double> gamma;         // normalized to gamma0+gamma1=1 (IV_STAB)
    std::string params_label;          // key=value listing for CSV sweeps
};

// E(1/Wbar^2) = (p_LA (1-p_LA))^{-T}: the factors are iid.
double sra_unstab_second_moment(double p_la, std::size_t T);

// E(1/Wbar^2) = (1 + 4 (rho(p_AL)/rho(p_LA)) (p_LA - 1/2)^2)^T with
// rho(p) = p(1-p). The general form; the symmetric-p display simplification
// drops a square and disagrees with path enumeration.
double sra_stab_second_moment(double p_la, double p_al, std::size_t T);

// First-order approximation to the asymptotic variance of the unstabilized
// SRA slope estimate when Y = lambda sum_t (L_t - E(L_t|A_{t-1})) + beta sum_t A_t + eps:
// lambda^2 (1 + sigma2/(T p(1-p))) / ((T+1) (4 p(1-p))^{T-1}).
double sra_variance_approx(double p_la, std::size_t T, double lambda, double sigma2);

struct OmegaKappa {
    double omega = 0.0;  // 1/(delta0 delta1)
    double kappa = 0.0;  // 1/delta0^2 - 1/delta1^2
};

OmegaKappa omega_kappa(double delta0, double delta1);

GrowthReport sra_unstab_growth(double p_la);
GrowthReport sra_stab_growth(double p_la, double p_al);

// Unstabilized IV weights over a symmetric L-chain with stay probability p:
// recurrence matrix [[p/d0^2, (1-p)/d1^2], [(1-p)/d0^2, p/d1^2]] and
// lambda1 = p/2 (1/d0^2 + 1/d1^2) + sqrt(p^2/4 (1/d0^2+1/d1^2)^2 - (2p-1)/(d0 d1)^2).
GrowthReport iv_unstab_growth(double p, double delta0, double delta1);

// Exact E(prod_t delta_{L_t}^{-2}): iterate the recurrence down from
// phi_{T+1} = (1,1), then combine d0^{-2} phi_2(0)/2 + d1^{-2} phi_2(1)/2.
double iv_exact_second_moment(double p, double delta0, double delta1, std::size_t T);

// Stabilized IV weights gamma_{A_{t-1}}/delta_{L_t}; gamma is normalized to
// gamma0+gamma1=1 internally (the raw values are kept in the report).
GrowthReport iv_stab_growth(double p_la, double p_al, double delta0, double delta1,
                            double gamma0, double gamma1);

double iv_stab_second_moment(double p_la, double p_al, double delta0, double delta1,
                             double gamma0, double gamma1, std::size_t T);

// gamma_a = p_L delta_a + (1-p_L) delta_{1-a}, normalized to sum one.
std::vector<double> default_gamma(double p_l, double delta0, double delta1);

// Plug-in estimate of the back-transition probability P(L_{t-1}=1 | L_t=1)
// of the full mixture process, by simulation (the L-process of the mixture is
// not exactly Markov, so the chain parameter is measured, not derived).
double back_transition_mc(const MarkovDgpParams& params, std::size_t n,
                          std::uint64_t seed);

// Monte Carlo oracle for the same chains: mean and standard error of
// prod_t w_t^{-2} over sampled paths. Instrument signs square away, so the
// IV models only sample the covariate chain; IV_UNSTAB takes p_la as the
// direct stay probability of the L-chain, matching iv_unstab_growth.
struct MomentMc {
    double value = 0.0;
    double se = 0.0;
};
MomentMc chain_second_moment_mc(GrowthModel model, double p_la, double p_al,
                                double delta0, double delta1, double gamma0,
                                double gamma1, std::size_t T, std::size_t n_paths,
                                std::uint64_t seed);

// One row per (report, T): model,params,T,second_moment,lambda1.
void write_growth_csv(const std::string& path, const std::vector<GrowthReport>& reports,
                      const std::vector<std::size_t>& horizons);

}  // namespace ivmsm
