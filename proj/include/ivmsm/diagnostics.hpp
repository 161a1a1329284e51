#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivmsm/panel.hpp"
#include "ivmsm/simulate.hpp"

namespace ivmsm {

// One period's discrete treatment-assignment law p(a | cell, u, z): finitely
// many treatment levels, observed-history cells, latent levels, and a binary
// instrument. Probabilities are stored dense.
struct ConditionalTable {
    std::size_t n_a = 0, n_cell = 0, n_u = 0;
    std::vector<double> p;  // ((a * n_cell + cell) * n_u + u) * 2 + z

    static ConditionalTable zeros(std::size_t n_a, std::size_t n_cell, std::size_t n_u);
    double& at(std::size_t a, std::size_t cell, std::size_t u, int z);
    double at(std::size_t a, std::size_t cell, std::size_t u, int z) const;
};

// Fully specified tables implied by the simulators, on explicit latent grids.
ConditionalTable markov_kernel_table(const MarkovDgpParams& params);
ConditionalTable linear_kernel_table(const LinearDgpParams& params,
                                     const std::vector<double>& l_grid,
                                     const std::vector<double>& u_grid);

struct IctReport {
    bool pass = false;
    double max_deviation = 0.0;  // worst u-pair spread of the instrument contrast
    bool iv_irrelevant = false;  // contrast identically zero: instrument useless
    std::size_t worst_t = 0, worst_a = 0, worst_cell = 0;
};

// Independent-compliance check: across every (period, treatment level,
// observed cell), the instrument contrast p(a|cell,u,1) - p(a|cell,u,0) must
// not vary with the latent level u (tolerance 1e-10). UnnormalizedTable when
// any (cell,u,z) column does not sum to one.
IctReport check_ict(const std::vector<ConditionalTable>& model);

// Candidate weight table w(a, z, l) for the single-period binary problem.
struct OmegaTable {
    std::size_t n_l = 0;
    std::vector<double> w;  // (a * 2 + z) * n_l + l

    static OmegaTable zeros(std::size_t n_l);
    double& at(std::size_t a, std::size_t z, std::size_t l);
    double at(std::size_t a, std::size_t z, std::size_t l) const;
};

struct ConverseReport {
    bool pass = false;
    bool combos_constant = false;   // sum_z w(a,z,l) p(a|l,u,z) free of u per (a,l)
    bool ratios_hold = false;       // w(0,1,l)/w(0,0,l) = w(1,1,l)/w(1,0,l) and
                                    // w(1,0,l)/w(0,0,l) = w(1,1,l) + w(1,0,l) - 1
    bool pa_constant_in_u = false;  // degenerate: any weight table passes
    double max_combo_deviation = 0.0;
    double max_ratio_deviation = 0.0;
};

// Necessity check for single-period binary treatment and instrument: a weight
// table can reproduce interventional means for every outcome functional only
// if the linear combinations sum_z w(a,z,l) p(a|l,u,z) are constant in u and
// the weight ratios are internally consistent -- unless the treatment law
// never depends on u, in which case any table is admissible. pA is a
// single-period ConditionalTable with n_a = 2 and cells indexed by l.
ConverseReport check_point_exposure_converse(const OmegaTable& omega,
                                             const ConditionalTable& pA);

// Which simulated process to draw from.
struct DgpSpec {
    DgpKind kind = DgpKind::LINEAR;
    LinearDgpParams linear;
    MarkovDgpParams markov;
    double continuous_beta = 2.0;
};

const char* dgp_kind_name(DgpKind kind);

using PathFunctional = std::function<double(double y, const std::vector<double>& path)>;

struct Theorem1Report {
    std::string dgp, g_name;
    double lhs = 0.0, rhs = 0.0;
    double se_lhs = 0.0, se_rhs = 0.0;
    double z = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

// Monte Carlo check of the weighting identity: the observational mean of
// g(Y, path)/Wbar with true-parameter signed weights against the path-measure
// aggregate of interventional means of g(Y_path, path). Binary processes sum
// over all 2^T paths; the continuous process integrates the dose by
// Gauss-Legendre quadrature on [-6, 6]. Both sides use independent
// substreams; z pools their Monte Carlo standard errors. weight_params, when
// given, builds the weights from different parameters than the draws (power
// checks against wrong nuisances); its kind must match dgp.kind.
Theorem1Report verify_theorem1_mc(const DgpSpec& dgp, const PathFunctional& g,
                                  std::size_t n, std::uint64_t seed,
                                  const std::string& g_name = "g",
                                  const DgpSpec* weight_params = nullptr);

// Fixed five-functional battery: Gaussian-damped mass, path-sum, outcome,
// centered-outcome, and cosine functionals. The damping factor
// exp(-path_sum^2/2) keeps every moment finite under a continuous dose.
std::vector<Theorem1Report> theorem1_battery(const DgpSpec& dgp, std::size_t n,
                                             std::uint64_t seed);

// Reporting: human-readable block plus machine CSV row per check.
std::string ict_text(const IctReport& r);
std::string ict_csv_header();
std::string ict_csv_row(const IctReport& r);
std::string converse_text(const ConverseReport& r);
std::string converse_csv_header();
std::string converse_csv_row(const ConverseReport& r);
std::string theorem1_text(const Theorem1Report& r);
std::string theorem1_csv_header();
std::string theorem1_csv_row(const Theorem1Report& r);

}  // namespace ivmsm
