#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mixfit/mixture.hpp"
#include "mixfit/types.hpp"

namespace mixfit {

// Constraint-free coordinates: weights through softmax logits (gauged so the
// last logit is 0), covariances through upper-triangular factors U with
// Sigma = U^T U. Stored flat as [lambdas | means | factor upper triangles],
// factors column-packed (r <= c). Canonical packings keep factor diagonals
// positive; pack() always produces canonical values.
struct PackedParams {
    int k = 0;
    int d = 0;
    Eigen::VectorXd values;

    static int triangle_size(int d) { return d * (d + 1) / 2; }
    static int packed_size(int k, int d) { return k + k * d + k * triangle_size(d); }

    int size() const { return static_cast<int>(values.size()); }
    int mean_offset(int j) const { return k + j * d; }
    int factor_offset(int j) const { return k + k * d + j * triangle_size(d); }
};

PackedParams pack(const MixtureModel& model);
MixtureModel unpack(const PackedParams& packed);

// Smallest |diagonal| across all factor blocks; line searches reject trial
// points where this collapses.
double min_abs_factor_diagonal(const PackedParams& packed);

// Negative log-likelihood and its gradient in packed coordinates. All K logits
// are treated as free softmax coordinates; the gradient's components along the
// softmax null direction cancel, so the gauge needs no special casing here.
std::pair<double, Eigen::VectorXd> neg_loglik_and_grad(const PackedParams& packed,
                                                       const Dataset& data);

// Returns f(x) and fills grad when finite; +inf marks an invalid trial point.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct MinimizeOptions {
    int max_iters = 200;
    double rel_tol = 1e-10;   // relative objective-change stop
    double grad_tol_rel = 1e-9;  // stationarity stop at ||g||_inf <= grad_tol_rel * (1 + |f|)
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_evals = 40;
    std::function<void(const Eigen::VectorXd&, double)> observer;  // accepted steps
};

struct MinimizeResult {
    Eigen::VectorXd x;
    Eigen::VectorXd grad;
    double f = 0.0;
    int iterations = 0;
    std::string termination;  // converged | stationary | max-iters | line-search-failed
    std::vector<double> f_history;
};

// Polak-Ribiere+ nonlinear conjugate gradient with a strong-Wolfe cubic
// interpolation line search; restarts along steepest descent on failure.
MinimizeResult cg_minimize(const ObjectiveFn& fn, Eigen::VectorXd x0,
                           const MinimizeOptions& opt = {});

// Dense BFGS with Wolfe line search; curvature-condition violations skip the
// inverse-Hessian update.
MinimizeResult bfgs_minimize(const ObjectiveFn& fn, Eigen::VectorXd x0,
                             const MinimizeOptions& opt = {});

struct GradFitOptions {
    int max_line_evals = 40;
    double grad_tol_rel = 1e-9;
};

std::pair<MixtureModel, FitTrace> ecg_fit(const Dataset& data, const MixtureModel& init,
                                          double tol, int max_iters,
                                          const GradFitOptions& opt = {});
std::pair<MixtureModel, FitTrace> bfgs_fit(const Dataset& data, const MixtureModel& init,
                                           double tol, int max_iters,
                                           const GradFitOptions& opt = {});

}  // namespace mixfit
