#pragma once

#include <Eigen/Dense>

#include "mixfit/types.hpp"

// Plain single-threaded implementations of the E/M kernels, kept as the
// comparison baseline for the blocked OpenMP path. Densities go through an
// explicit inverse and determinant instead of Cholesky solves so the two
// routes share no code.

namespace mixfit::reference {

double log_gaussian_pdf(const Eigen::VectorXd& x, const GaussianComponent& comp);

Eigen::MatrixXd responsibilities(const Dataset& data, const MixtureModel& model, double beta);

double log_likelihood(const Dataset& data, const MixtureModel& model);

MixtureModel m_step(const Dataset& data, const Eigen::MatrixXd& resp, double reg);

}  // namespace mixfit::reference
