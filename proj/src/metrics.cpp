#include "mixfit/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "mixfit/hungarian.hpp"
#include "mixfit/mixture.hpp"

namespace mixfit {

double symmetric_kl_gaussian(const GaussianComponent& a, const GaussianComponent& b) {
    if (a.dim() != b.dim())
        throw std::invalid_argument("symmetric_kl_gaussian: dimension mismatch");
    const int d = a.dim();
    const ComponentCholesky ca = factorize(a);
    const ComponentCholesky cb = factorize(b);

    const double trace_term = 0.5 * (ca.llt.solve(b.covariance).trace() +
                                     cb.llt.solve(a.covariance).trace());
    const Eigen::VectorXd delta = a.mean - b.mean;
    const double mean_term =
        0.5 * (delta.dot(ca.llt.solve(delta)) + delta.dot(cb.llt.solve(delta)));
    return trace_term + mean_term - d;
}

namespace {
constexpr double kPadCost = 1e18;
}

ComponentMatching match_components(const MixtureModel& estimated, const MixtureModel& truth) {
    if (estimated.dim() != truth.dim())
        throw std::invalid_argument("match_components: dimension mismatch");
    const int ke = estimated.size();
    const int kt = truth.size();
    const int n = std::max(ke, kt);

    Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, n, kPadCost);
    for (int j = 0; j < ke; ++j)
        for (int l = 0; l < kt; ++l)
            cost(j, l) = symmetric_kl_gaussian(estimated.components[j], truth.components[l]);

    std::vector<int> row_to_col;
    solve_assignment(cost, row_to_col);

    ComponentMatching out;
    out.permutation.assign(ke, -1);
    for (int j = 0; j < ke; ++j) {
        const int l = row_to_col[j];
        if (l >= 0 && l < kt && cost(j, l) < kPadCost) {
            out.permutation[j] = l;
            out.total_cost += cost(j, l);
        }
    }
    return out;
}

double param_error(const MixtureModel& estimated, const MixtureModel& truth) {
    return match_components(estimated, truth).total_cost;
}

}  // namespace mixfit
