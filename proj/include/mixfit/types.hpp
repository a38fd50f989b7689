#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "mixfit/errors.hpp"

namespace mixfit {

struct GaussianComponent {
    Eigen::VectorXd mean;        // length d
    Eigen::MatrixXd covariance;  // d x d, symmetric positive definite

    GaussianComponent() = default;
    GaussianComponent(Eigen::VectorXd mu, Eigen::MatrixXd sigma)
        : mean(std::move(mu)), covariance(std::move(sigma)) {}

    int dim() const { return static_cast<int>(mean.size()); }

    // Throws std::invalid_argument on shape/symmetry violations,
    // FactorizationError when the covariance is not positive definite.
    void validate() const;
};

struct MixtureModel {
    std::vector<GaussianComponent> components;
    Eigen::VectorXd weights;  // length K, strictly positive, sums to 1

    int size() const { return static_cast<int>(components.size()); }
    int dim() const { return components.empty() ? 0 : components.front().dim(); }

    void validate() const;
};

struct Dataset {
    Eigen::MatrixXd points;  // N x d

    Dataset() = default;
    explicit Dataset(Eigen::MatrixXd p) : points(std::move(p)) {}

    Eigen::Index rows() const { return points.rows(); }
    int dim() const { return static_cast<int>(points.cols()); }

    void validate() const;
};

struct Responsibilities {
    Eigen::MatrixXd values;  // N x K, rows sum to 1

    Responsibilities() = default;
    explicit Responsibilities(Eigen::MatrixXd v) : values(std::move(v)) {}

    void validate() const;
};

// One row per fitting iteration. log_likelihood is always in beta = 1 semantics
// so traces are comparable across tempered stages and across algorithms; the DP
// mixture driver stores the ELBO in the same slot.
struct TraceRecord {
    int iteration = 0;
    double beta = 1.0;
    double log_likelihood = 0.0;
    double elapsed_ms = 0.0;
};

struct FitTrace {
    std::vector<TraceRecord> records;
    std::vector<MixtureModel> iterates;     // parameter snapshot per record (GMM fits)
    std::vector<int> effective_components;  // per record (DP mixture fits only)
    std::string termination;
    int m_steps = 0;  // parameter updates performed
    int e_steps = 0;  // posterior evaluations performed; E/M budget accounting

    void add(int iteration, double beta, double log_likelihood, double elapsed_ms,
             const MixtureModel& model) {
        records.push_back({iteration, beta, log_likelihood, elapsed_ms});
        iterates.push_back(model);
    }

    void add_record(int iteration, double beta, double objective, double elapsed_ms) {
        records.push_back({iteration, beta, objective, elapsed_ms});
    }
};

}  // namespace mixfit
