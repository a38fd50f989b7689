#include "mixfit/types.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace mixfit {

void GaussianComponent::validate() const {
    if (mean.size() == 0) throw std::invalid_argument("gaussian component: empty mean");
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
        throw std::invalid_argument("gaussian component: covariance shape does not match mean");
    if (!mean.allFinite() || !covariance.allFinite())
        throw std::invalid_argument("gaussian component: parameters must be finite");

    const double scale = std::max(covariance.cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < covariance.rows(); ++i)
        for (Eigen::Index j = i + 1; j < covariance.cols(); ++j)
            if (std::abs(covariance(i, j) - covariance(j, i)) > 1e-12 * scale)
                throw std::invalid_argument("gaussian component: covariance not symmetric");

    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() != Eigen::Success)
        throw FactorizationError("gaussian component: covariance not positive definite");
}

void MixtureModel::validate() const {
    const int k = size();
    if (k < 1) throw std::invalid_argument("mixture model: needs at least one component");
    if (weights.size() != k)
        throw std::invalid_argument("mixture model: weight count does not match components");
    if ((weights.array() <= 0.0).any())
        throw std::invalid_argument("mixture model: weights must be strictly positive");
    if (std::abs(weights.sum() - 1.0) > 1e-12)
        throw std::invalid_argument("mixture model: weights must sum to 1");
    const int d = components.front().dim();
    for (const auto& c : components) {
        if (c.dim() != d) throw std::invalid_argument("mixture model: mixed component dimensions");
        c.validate();
    }
}

void Dataset::validate() const {
    if (points.rows() < 1 || points.cols() < 1)
        throw std::invalid_argument("dataset: needs at least one point and one dimension");
    if (!points.allFinite()) throw std::invalid_argument("dataset: entries must be finite");
}

void Responsibilities::validate() const {
    if (values.rows() < 1 || values.cols() < 1)
        throw std::invalid_argument("responsibilities: empty matrix");
    if ((values.array() < 0.0).any() || (values.array() > 1.0).any())
        throw std::invalid_argument("responsibilities: entries must lie in [0, 1]");
    for (Eigen::Index t = 0; t < values.rows(); ++t)
        if (std::abs(values.row(t).sum() - 1.0) > 1e-10)
            throw std::invalid_argument("responsibilities: row " + std::to_string(t) +
                                        " does not sum to 1");
}

}  // namespace mixfit
