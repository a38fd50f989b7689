#include "mixfit/anneal.hpp"

#include <cmath>

namespace mixfit {

void AnnealSchedule::validate() const {
    if (betas.empty()) throw std::invalid_argument("anneal schedule: empty beta list");
    for (double b : betas)
        if (!(b > 0.0) || !std::isfinite(b))
            throw std::invalid_argument("anneal schedule: betas must be positive and finite");
    if (!(inner_tol > 0.0)) throw std::invalid_argument("anneal schedule: inner_tol must be > 0");
    if (inner_max_iters < 1)
        throw std::invalid_argument("anneal schedule: inner_max_iters must be >= 1");
    if (final_stage_exact && betas.back() != 1.0)
        throw std::invalid_argument("anneal schedule: final beta must be exactly 1");
}

AnnealSchedule hybrid_schedule(double beta_min, double beta_max, int steps_up, int steps_down) {
    if (!(beta_min > 0.0) || beta_min > 1.0 || beta_max < 1.0 || beta_min > beta_max)
        throw std::invalid_argument("hybrid_schedule: need 0 < beta_min <= 1 <= beta_max");
    if (steps_up < 1 || steps_down < 1)
        throw std::invalid_argument("hybrid_schedule: steps must be >= 1");

    AnnealSchedule s;
    auto push = [&s](double b) {
        if (s.betas.empty() || s.betas.back() != b) s.betas.push_back(b);
    };
    for (int i = 0; i <= steps_up; ++i)
        push(i == steps_up ? beta_max : beta_min + (beta_max - beta_min) * i / steps_up);
    for (int i = 1; i <= steps_down; ++i)
        push(i == steps_down ? 1.0 : beta_max - (beta_max - 1.0) * i / steps_down);
    s.validate();
    return s;
}

std::pair<Eigen::VectorXd, double> principal_axis(
    const Dataset& data, const Eigen::Ref<const Eigen::VectorXd>& weights) {
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    if (weights.size() != n)
        throw std::invalid_argument("principal_axis: weight count does not match points");
    if ((weights.array() < 0.0).any())
        throw std::invalid_argument("principal_axis: weights must be non-negative");
    const double total = weights.sum();
    if (!(total > 0.0)) throw std::invalid_argument("principal_axis: total weight is zero");

    const Eigen::VectorXd mean = data.points.transpose() * weights / total;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd delta(d);
    for (Eigen::Index t = 0; t < n; ++t) {
        if (weights(t) == 0.0) continue;
        delta = data.points.row(t).transpose() - mean;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(delta, weights(t));
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= total;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw FactorizationError("principal_axis: eigendecomposition failed");
    Eigen::VectorXd axis = es.eigenvectors().col(d - 1);
    const double value = std::max(0.0, es.eigenvalues()(d - 1));

    int arg = 0;
    for (int i = 1; i < d; ++i)
        if (std::abs(axis(i)) > std::abs(axis(arg))) arg = i;
    if (axis(arg) < 0.0) axis = -axis;
    return {axis, value};
}

MixtureModel perturb_means(const MixtureModel& model, const Responsibilities& resp,
                           const Dataset& data, const PerturbPolicy& policy, Rng& rng) {
    if (policy.epsilon < 0.0 || !std::isfinite(policy.epsilon))
        throw std::invalid_argument("perturb_means: epsilon must be finite and >= 0");
    if (policy.when == PerturbWhen::Never || policy.epsilon == 0.0) return model;

    MixtureModel out = model;
    for (int j = 0; j < model.size(); ++j) {
        const auto [axis, value] = principal_axis(data, resp.values.col(j));
        out.components[j].mean += policy.epsilon * std::sqrt(value) * rng.normal() * axis;
    }
    return out;
}

MixtureModel perturb_means(const MixtureModel& model, const Responsibilities& resp,
                           const Dataset& data, const PerturbPolicy& policy, std::uint64_t seed) {
    Rng rng(seed);
    return perturb_means(model, resp, data, policy, rng);
}

std::pair<MixtureModel, FitTrace> anneal_fit(const Dataset& data, int k,
                                             const AnnealSchedule& schedule,
                                             const PerturbPolicy& policy,
                                             const MixtureModel& init, std::uint64_t seed,
                                             double reg) {
    data.validate();
    init.validate();
    schedule.validate();
    if (k < 1 || init.size() != k)
        throw std::invalid_argument("anneal_fit: K does not match the initial model");
    if (init.dim() != data.dim())
        throw std::invalid_argument("anneal_fit: model and data dimensions disagree");
    if (reg < 0.0) reg = default_ridge(data);

    Rng rng(seed);
    MixtureModel model = init;
    FitTrace trace;
    int iter = 0;
    bool last_converged = false;
    for (std::size_t s = 0; s < schedule.betas.size(); ++s) {
        const double beta = schedule.betas[s];
        last_converged = run_em_stage(data, model, beta, schedule.inner_tol,
                                      schedule.inner_max_iters, reg, trace, iter);
        const bool last_stage = s + 1 == schedule.betas.size();
        if (!last_stage && policy.when == PerturbWhen::AfterEachBetaChange &&
            policy.epsilon > 0.0) {
            const Responsibilities resp = tempered_e_step(data, model, beta);
            ++trace.e_steps;
            model = perturb_means(model, resp, data, policy, rng);
        }
    }
    trace.termination = last_converged ? "converged" : "max-iters";
    return {std::move(model), std::move(trace)};
}

}  // namespace mixfit
