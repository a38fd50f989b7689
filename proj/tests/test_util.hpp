#pragma once

#include <Eigen/Dense>

#include "mixfit/rng.hpp"
#include "mixfit/types.hpp"

namespace testutil {

using mixfit::Dataset;
using mixfit::GaussianComponent;
using mixfit::MixtureModel;
using mixfit::Rng;

inline Eigen::MatrixXd random_spd(Rng& rng, int d, double lo = 0.5, double hi = 2.0) {
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd eig(d);
    for (int i = 0; i < d; ++i) eig(i) = lo + (hi - lo) * rng.uniform();
    Eigen::MatrixXd spd = q * eig.asDiagonal() * q.transpose();
    return ((spd + spd.transpose()) / 2.0).eval();
}

inline MixtureModel random_model(Rng& rng, int k, int d, double mean_spread = 4.0) {
    MixtureModel model;
    Eigen::VectorXd w(k);
    for (int j = 0; j < k; ++j) w(j) = 0.2 + rng.uniform();
    model.weights = w / w.sum();
    model.components.resize(k);
    for (int j = 0; j < k; ++j) {
        model.components[j].mean = mean_spread * rng.normal_vector(d);
        model.components[j].covariance = random_spd(rng, d);
    }
    model.validate();
    return model;
}

inline Dataset random_dataset(Rng& rng, int n, int d, double spread = 3.0) {
    Eigen::MatrixXd pts(n, d);
    for (int t = 0; t < n; ++t)
        for (int i = 0; i < d; ++i) pts(t, i) = spread * rng.normal();
    return Dataset(std::move(pts));
}

inline Eigen::MatrixXd random_row_stochastic(Rng& rng, int n, int k) {
    Eigen::MatrixXd resp(n, k);
    for (int t = 0; t < n; ++t) {
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            resp(t, j) = 0.05 + rng.uniform();
            sum += resp(t, j);
        }
        resp.row(t) /= sum;
    }
    return resp;
}

inline MixtureModel two_component_1d(double alpha1, double mu1, double mu2, double var) {
    MixtureModel model;
    model.weights = Eigen::Vector2d(alpha1, 1.0 - alpha1);
    model.components.resize(2);
    model.components[0] = {Eigen::VectorXd::Constant(1, mu1),
                           Eigen::MatrixXd::Constant(1, 1, var)};
    model.components[1] = {Eigen::VectorXd::Constant(1, mu2),
                           Eigen::MatrixXd::Constant(1, 1, var)};
    model.validate();
    return model;
}

}  // namespace testutil
