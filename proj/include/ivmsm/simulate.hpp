#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ivmsm/panel.hpp"

namespace ivmsm {

// Probit-scale data generating process with a time-varying covariate L_t, a
// latent confounder U_t, and a randomized binary instrument Z_t.
struct LinearDgpParams {
    double lambda0 = 0.5, lambda1 = 0.5;  // L_{t+1} = lambda0 + lambda1 A_t + N(0,1)
    double alpha0 = 0.3, alpha1 = 0.3;    // Phi^{ -1}(Delta_t) = alpha0 + alpha1 L_t
    double nu0 = -0.2, nu1 = 0.2, nu2 = 0.2;  // baseline Phi(nu0 + nu1 L_t + nu2 U_t)
    std::vector<double> tau;  // outcome loading on centered L_t; empty => all 1
    std::vector<double> rho;  // outcome loading on U_t; empty => all 1
    double beta0 = 1.0, beta1 = 1.0;
    std::size_t T = 2;
};

// Binary two-chain process: treatment follows the observed chain L with
// probability 1-q and the latent chain U with probability q, plus an additive
// instrument shift of +-delta_l/2.
struct MarkovDgpParams {
    double q = 0.5;
    double p_L = 0.7, p_U = 0.7;      // chain concordance probabilities
    double delta0 = 0.2, delta1 = 0.3;  // instrument effect by covariate level
    double beta = 1.0;
    std::size_t T = 2;
};

enum class DgpKind { LINEAR, MARKOV, CONTINUOUS };

// Generation-time ground truth kept alongside the simulated panel so oracle
// estimators and interventional checks can be run.
struct DgpTruth {
    DgpKind kind = DgpKind::LINEAR;
    std::vector<double> beta;  // (beta0, beta1); E(Y_abar) = beta0 + beta1 sum(abar)
    LinearDgpParams linear;
    MarkovDgpParams markov;
    double continuous_beta = 2.0;
};

struct SimOutput {
    LongitudinalPanel panel;  // latent U columns retained
    DgpTruth truth;
};

// forced_path, when non-null, switches to interventional mode: every subject
// receives the fixed treatment path (length T) instead of sampled treatments.
SimOutput simulate_linear(const LinearDgpParams& params, std::size_t n,
                          std::uint64_t seed,
                          const std::vector<double>* forced_path = nullptr);
SimOutput simulate_markov(const MarkovDgpParams& params, std::size_t n,
                          std::uint64_t seed,
                          const std::vector<double>* forced_path = nullptr);
// Single-period continuous treatment: A | z=0 ~ N(0, U^2), and under z=1 the
// density is shifted by continuous_delta(a, L). L, U ~ Uniform(0,1).
SimOutput simulate_continuous(std::size_t n, std::uint64_t seed, double beta = 2.0,
                              const double* forced_a = nullptr);

// E(Y_abar) = beta0 + beta1 * sum(abar) for all three processes.
double counterfactual_mean(const DgpTruth& truth, const std::vector<double>& path);

// Markov treatment kernel helpers (a,l,u,z in {0,1}).
double markov_base_prob(const MarkovDgpParams& p, int a, int l, int u);  // z-free part
double markov_treatment_prob(const MarkovDgpParams& p, int a, int l, int u, int z);

// Continuous-treatment density pieces.
double continuous_delta(double a, double l);                      // phi(a)-phi(a/l)/l
double continuous_density(double a, double l, double u, int z);   // phi(a/u)/u + z*delta

// Key-value sidecar recording the process and its true parameters.
void write_truth_sidecar(const DgpTruth& truth, const std::string& path);

}  // namespace ivmsm
