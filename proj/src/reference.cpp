#include "mixfit/reference.hpp"

#include <cmath>
#include <vector>

namespace mixfit::reference {

double log_gaussian_pdf(const Eigen::VectorXd& x, const GaussianComponent& comp) {
    const int d = comp.dim();
    const Eigen::MatrixXd inv = comp.covariance.inverse();
    const double det = comp.covariance.determinant();
    const Eigen::VectorXd delta = x - comp.mean;
    return -0.5 * (d * std::log(2.0 * M_PI) + std::log(det) + delta.dot(inv * delta));
}

Eigen::MatrixXd responsibilities(const Dataset& data, const MixtureModel& model, double beta) {
    const Eigen::Index n = data.rows();
    const int k = model.size();
    Eigen::MatrixXd resp(n, k);
    for (Eigen::Index t = 0; t < n; ++t) {
        std::vector<double> logw(k);
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            logw[j] = beta * (std::log(model.weights(j)) +
                              log_gaussian_pdf(data.points.row(t).transpose(), model.components[j]));
            m = std::max(m, logw[j]);
        }
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(logw[j] - m);
        for (int j = 0; j < k; ++j) resp(t, j) = std::exp(logw[j] - m) / z;
    }
    return resp;
}

double log_likelihood(const Dataset& data, const MixtureModel& model) {
    const Eigen::Index n = data.rows();
    const int k = model.size();
    double total = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        std::vector<double> logw(k);
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            logw[j] = std::log(model.weights(j)) +
                      log_gaussian_pdf(data.points.row(t).transpose(), model.components[j]);
            m = std::max(m, logw[j]);
        }
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(logw[j] - m);
        total += m + std::log(z);
    }
    return total;
}

MixtureModel m_step(const Dataset& data, const Eigen::MatrixXd& resp, double reg) {
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    const Eigen::Index k = resp.cols();

    MixtureModel model;
    model.weights.resize(k);
    model.components.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        double mass = 0.0;
        Eigen::VectorXd first = Eigen::VectorXd::Zero(d);
        Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index t = 0; t < n; ++t) {
            const double h = resp(t, j);
            const Eigen::VectorXd x = data.points.row(t).transpose();
            mass += h;
            first += h * x;
            second += h * x * x.transpose();
        }
        const Eigen::VectorXd mu = first / mass;
        model.weights(j) = mass / static_cast<double>(n);
        model.components[j].mean = mu;
        model.components[j].covariance =
            second / mass - mu * mu.transpose() + reg * Eigen::MatrixXd::Identity(d, d);
    }
    return model;
}

}  // namespace mixfit::reference
