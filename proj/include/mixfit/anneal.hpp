#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "mixfit/mixture.hpp"
#include "mixfit/rng.hpp"
#include "mixfit/types.hpp"

namespace mixfit {

struct AnnealSchedule {
    std::vector<double> betas;
    double inner_tol = 1e-6;     // relative log-likelihood tolerance per beta stage
    int inner_max_iters = 500;   // M-step cap per stage
    bool final_stage_exact = true;  // when set, the last beta must be exactly 1

    void validate() const;
};

// Monotone rise beta_min -> beta_max in steps_up equal intervals, then fall
// beta_max -> 1 in steps_down intervals; consecutive duplicates collapse, the
// last entry is exactly 1. Requires 0 < beta_min <= 1 <= beta_max.
AnnealSchedule hybrid_schedule(double beta_min, double beta_max, int steps_up, int steps_down);

enum class PerturbWhen { AfterEachBetaChange, Never };

struct PerturbPolicy {
    double epsilon = 0.05;  // noise scale, fraction of the cluster's leading std dev
    PerturbWhen when = PerturbWhen::AfterEachBetaChange;
};

// Top eigenpair of the weighted covariance of data about its weighted mean.
// The eigenvector has unit norm with its largest-magnitude coordinate positive.
std::pair<Eigen::VectorXd, double> principal_axis(const Dataset& data,
                                                  const Eigen::Ref<const Eigen::VectorXd>& weights);

// Shifts each mean by epsilon * sqrt(leading eigenvalue) * u * axis with u a
// standard-normal draw; weights and covariances are untouched.
MixtureModel perturb_means(const MixtureModel& model, const Responsibilities& resp,
                           const Dataset& data, const PerturbPolicy& policy, Rng& rng);
MixtureModel perturb_means(const MixtureModel& model, const Responsibilities& resp,
                           const Dataset& data, const PerturbPolicy& policy, std::uint64_t seed);

// Tempered EM over the schedule: each beta stage runs (tempered E, M) to the
// stage tolerance, then means are perturbed (except after the final stage).
// With schedule [1] and no perturbation this reproduces em_fit exactly.
std::pair<MixtureModel, FitTrace> anneal_fit(const Dataset& data, int k,
                                             const AnnealSchedule& schedule,
                                             const PerturbPolicy& policy,
                                             const MixtureModel& init, std::uint64_t seed,
                                             double reg = kAutoRidge);

}  // namespace mixfit
