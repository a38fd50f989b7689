#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "mixfit/anneal.hpp"
#include "mixfit/types.hpp"

namespace mixfit {

// Posterior over (mu, Lambda): N(mu | m, (kappa Lambda)^-1) W(Lambda | Psi^-1, nu).
// scale_matrix stores Psi, the inverse Wishart scale, so E[Sigma] = Psi / (nu - d - 1).
struct NormalWishart {
    Eigen::VectorXd mean_location;
    double scale_count = 1.0;
    double degrees_of_freedom = 0.0;
    Eigen::MatrixXd scale_matrix;

    int dim() const { return static_cast<int>(mean_location.size()); }
    void validate() const;
};

struct VariationalState {
    int truncation = 0;
    Eigen::MatrixX2d stick_params;  // T x 2 Beta parameters (gamma_1, gamma_2)
    std::vector<NormalWishart> component_posteriors;
    Eigen::MatrixXd responsibilities;  // N x T (phi), empty before the first sweep
    double concentration = 1.0;
    NormalWishart prior;

    void validate() const;
};

// Empirical-Bayes base measure: prior mean = data mean, scale count 1,
// dof = d + 2, scale matrix = data covariance (so E[Sigma] = data covariance).
NormalWishart empirical_prior(const Dataset& data);

// (E[log V_j], E[log(1 - V_j)]) per stick, via digamma differences.
std::pair<Eigen::VectorXd, Eigen::VectorXd> stick_log_expectations(const VariationalState& state);

// E[pi_j] under the truncated stick-breaking posterior; sums to <= 1 with a
// non-negative truncation remainder.
Eigen::VectorXd expected_stick_masses(const VariationalState& state);

// S_ij = E[log V_j] + sum_{l<j} E[log(1 - V_l)] + E[log p(x_i | component j)]
Eigen::MatrixXd vb_scores(const VariationalState& state, const Dataset& data);

// phi = row softmax of beta * S, computed stably in log space.
Eigen::MatrixXd tempered_vb_e_step(const VariationalState& state, const Dataset& data,
                                   double beta);

// Conjugate coordinate-ascent update of sticks and Normal-Wishart posteriors
// from state.responsibilities.
VariationalState vb_m_step(const VariationalState& state, const Dataset& data);

// Untempered evidence lower bound of the current state.
double elbo(const VariationalState& state, const Dataset& data);

// Components whose responsibility mass exceeds mass_threshold * N.
int effective_components(const VariationalState& state, double mass_threshold);

struct DpmmOptions {
    double mass_threshold = 1e-4;  // effective-count threshold recorded in the trace
};

// Coordinate ascent per beta stage. Stage convergence uses the relative ELBO
// change at beta = 1 and the mean absolute responsibility change otherwise
// (the ELBO is not a stage objective under tempering); the trace records the
// untempered ELBO either way.
std::pair<VariationalState, FitTrace> dpmm_fit(const Dataset& data, int truncation,
                                               const AnnealSchedule& schedule,
                                               double concentration, std::uint64_t seed,
                                               const DpmmOptions& opt = {});

}  // namespace mixfit
