#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "mixfit/types.hpp"

namespace mixfit {

// Responsibility mass below n_points * kEmptyComponentTol is an empty component.
inline constexpr double kEmptyComponentTol = 1e-12;

// Cholesky factor of a component covariance, cached for repeated density evaluation.
struct ComponentCholesky {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double log_det = 0.0;  // log |Sigma|
};

// Throws FactorizationError when the covariance is not positive definite.
ComponentCholesky factorize(const GaussianComponent& comp);

double log_gaussian_pdf(const Eigen::Ref<const Eigen::VectorXd>& x, const GaussianComponent& comp);

// N x K matrix of log N(x_t | mu_j, Sigma_j); weights not included.
Eigen::MatrixXd log_density_matrix(const Dataset& data, const std::vector<GaussianComponent>& comps);

// W(t, j) = log alpha_j + log N(x_t | mu_j, Sigma_j)
Eigen::MatrixXd log_weighted_densities(const Dataset& data, const MixtureModel& model);

struct EStepResult {
    Responsibilities resp;
    double log_likelihood = 0.0;  // always at beta = 1
};

// Row softmax of beta * W plus the untempered log-likelihood sum_t LSE(W row).
// e_step and tempered_e_step both run through here, so beta = 1 is the same code path.
EStepResult responsibilities_from_log_weighted(const Eigen::MatrixXd& W, double beta);

EStepResult e_step(const Dataset& data, const MixtureModel& model);
Responsibilities tempered_e_step(const Dataset& data, const MixtureModel& model, double beta);

double log_likelihood(const Dataset& data, const MixtureModel& model);

// Responsibility-weighted mass, means and scatters (about each component mean).
// Shared by the GMM M-step and the variational posterior updates.
struct WeightedMoments {
    Eigen::VectorXd mass;                  // K
    Eigen::MatrixXd means;                 // d x K (zero where mass is zero)
    std::vector<Eigen::MatrixXd> scatters; // K of d x d
};
WeightedMoments compute_weighted_moments(const Dataset& data, const Eigen::MatrixXd& resp);

// Weighted-moment update; reg is a ridge added to every covariance diagonal.
// Throws EmptyComponentError when a responsibility column has (almost) no mass.
MixtureModel m_step(const Dataset& data, const Responsibilities& resp, double reg);

// Default covariance ridge: 1e-6 times the mean per-dimension data variance.
double default_ridge(const Dataset& data);

// Sentinel: fitting entry points replace a negative ridge with default_ridge(data).
inline constexpr double kAutoRidge = -1.0;

// Tempered EM inner loop shared by em_fit and anneal_fit. Runs (tempered E, M)
// at fixed beta until |L_k - L_{k-1}| / |L_k| < tol or max_iters M-steps, where L
// is the beta = 1 log-likelihood. Records every iterate into the trace starting
// at iteration index next_iteration (updated on return). Returns true if the
// tolerance was met.
bool run_em_stage(const Dataset& data, MixtureModel& model, double beta, double tol,
                  int max_iters, double reg, FitTrace& trace, int& next_iteration);

std::pair<MixtureModel, FitTrace> em_fit(const Dataset& data, const MixtureModel& init,
                                         double tol, int max_iters, double reg = kAutoRidge);

}  // namespace mixfit
