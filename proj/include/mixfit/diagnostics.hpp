#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "mixfit/types.hpp"

namespace mixfit {

struct OverlapMatrix {
    Eigen::MatrixXd entries;  // K x K; e_ij = mean_t h_i h_j, e_ii = mean_t h_i (1 - h_i)
    double max_overlap = 0.0;
};

// Finite-N pairwise overlap under beta-tempered responsibilities.
OverlapMatrix overlap_matrix(const Dataset& data, const MixtureModel& model, double beta);

struct HessianOptions {
    // With covariances, the d = 1 coordinate is sigma^2 and the general-d
    // coordinates are the upper-triangle entries of each Sigma_j.
    bool include_covariances = true;
    double fd_step = 1e-4;    // per-coordinate relative step for the FD Hessian
    double fd_floor = 1e-2;   // absolute floor for the step scale
};

struct HessianDiagnostics {
    // E^T P H E, m x m. Its eigenvalues are real (P maps the constraint
    // subspace to itself, making it similar to a symmetric matrix); the
    // condition number itself is singular-value based since the product is
    // not normal in the unbalanced regime.
    Eigen::MatrixXd projected_hessian;
    double condition_number = 0.0;      // sigma_max / sigma_min; +inf when singular
    double condition_number_unpreconditioned = 0.0;  // kappa of E^T H E
    int basis_dim = 0;
    bool singular = false;
    double fd_asymmetry = 0.0;  // relative asymmetry of the FD Hessian before symmetrizing
};

// H is the central finite difference of the analytic gradient in natural
// coordinates (weights unconstrained, constraint handled by the basis E over
// sum-zero weight directions); P uses the block-diagonal EM preconditioner
// (weights (1/N)(diag a - aa^T), means Sigma_j/(N a_j), covariances the inverse
// complete-data information of vech Sigma_j).
HessianDiagnostics projected_hessian_condition(const Dataset& data, const MixtureModel& model,
                                               const HessianOptions& opt = {});

// Analytic gradient of the sample log-likelihood in natural coordinates
// [alpha | means | vech Sigma (optional)]; weights may be unnormalized.
Eigen::VectorXd natural_gradient(const Dataset& data, const Eigen::VectorXd& alphas,
                                 const std::vector<Eigen::VectorXd>& means,
                                 const std::vector<Eigen::MatrixXd>& covs,
                                 bool include_covariances);

struct RateOptions {
    double beta = 1.0;           // measure the beta-tempered EM map
    double perturb_scale = 1e-3;
    int restarts = 5;
    int max_iters = 300;
    int refine_iters = 500;      // polishing of the fixed point under the map
    double escape_factor = 10.0;
    double ridge = 0.0;
    std::uint64_t seed = 1234;
};

// Median asymptotic contraction ratio ||Theta_k+1 - Theta*|| / ||Theta_k - Theta*||
// of (tempered) EM restarted from small perturbations of the fixed point.
// Throws BasinEscapeError when iterates leave the basin.
double empirical_em_rate(const Dataset& data, const MixtureModel& fixed_point,
                         const RateOptions& opt = {});

// Log-likelihood over a (mu1, mu2) grid for a 2-component 1-D template with
// weights and variances held fixed. out(i, j) uses mu1_grid(i), mu2_grid(j).
Eigen::MatrixXd loglik_surface_slice(const Dataset& data, const MixtureModel& tmpl,
                                     const Eigen::VectorXd& mu1_grid,
                                     const Eigen::VectorXd& mu2_grid);

}  // namespace mixfit
