#include "mixfit/mixture.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "mixfit/parallel.hpp"

namespace mixfit {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

ComponentCholesky factorize(const GaussianComponent& comp) {
    ComponentCholesky out;
    out.llt.compute(comp.covariance);
    if (out.llt.info() != Eigen::Success)
        throw FactorizationError("covariance factorization failed (not positive definite)");
    out.log_det = 2.0 * out.llt.matrixLLT().diagonal().array().log().sum();
    return out;
}

double log_gaussian_pdf(const Eigen::Ref<const Eigen::VectorXd>& x, const GaussianComponent& comp) {
    if (x.size() != comp.mean.size())
        throw std::invalid_argument("log_gaussian_pdf: point dimension does not match component");
    const ComponentCholesky chol = factorize(comp);
    Eigen::VectorXd delta = x - comp.mean;
    chol.llt.matrixL().solveInPlace(delta);
    return -0.5 * (x.size() * kLog2Pi + chol.log_det + delta.squaredNorm());
}

Eigen::MatrixXd log_density_matrix(const Dataset& data,
                                   const std::vector<GaussianComponent>& comps) {
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    const int k = static_cast<int>(comps.size());
    if (k < 1) throw std::invalid_argument("log_density_matrix: no components");

    Eigen::MatrixXd out(n, k);
    for (int j = 0; j < k; ++j) {
        if (comps[j].dim() != d)
            throw std::invalid_argument("log_density_matrix: component dimension mismatch");
        const ComponentCholesky chol = factorize(comps[j]);
        const double c = -0.5 * (d * kLog2Pi + chol.log_det);
        const Eigen::VectorXd mu = comps[j].mean;
        par::for_blocks(n, [&](std::ptrdiff_t, std::ptrdiff_t begin, std::ptrdiff_t end) {
            Eigen::VectorXd delta(d);
            for (std::ptrdiff_t t = begin; t < end; ++t) {
                delta = data.points.row(t).transpose() - mu;
                chol.llt.matrixL().solveInPlace(delta);
                out(t, j) = c - 0.5 * delta.squaredNorm();
            }
        });
    }
    return out;
}

Eigen::MatrixXd log_weighted_densities(const Dataset& data, const MixtureModel& model) {
    Eigen::MatrixXd w = log_density_matrix(data, model.components);
    const Eigen::RowVectorXd log_alpha = model.weights.array().log().matrix().transpose();
    w.rowwise() += log_alpha;
    return w;
}

EStepResult responsibilities_from_log_weighted(const Eigen::MatrixXd& w, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("tempered responsibilities: beta must be > 0");
    const Eigen::Index n = w.rows();
    const Eigen::Index k = w.cols();

    Eigen::MatrixXd resp(n, k);
    Eigen::VectorXd row_ll(n);
    par::for_blocks(n, [&](std::ptrdiff_t, std::ptrdiff_t begin, std::ptrdiff_t end) {
        Eigen::RowVectorXd scaled(k);
        for (std::ptrdiff_t t = begin; t < end; ++t) {
            const double m = w.row(t).maxCoeff();
            row_ll(t) = m + std::log((w.row(t).array() - m).exp().sum());
            scaled = beta * w.row(t);
            const double mb = scaled.maxCoeff();
            const double lse = mb + std::log((scaled.array() - mb).exp().sum());
            resp.row(t) = (scaled.array() - lse).exp();
        }
    });
    // index-order sum keeps the reduction deterministic
    return {Responsibilities(std::move(resp)), row_ll.sum()};
}

EStepResult e_step(const Dataset& data, const MixtureModel& model) {
    if (model.dim() != data.dim())
        throw std::invalid_argument("e_step: model and data dimensions disagree");
    return responsibilities_from_log_weighted(log_weighted_densities(data, model), 1.0);
}

Responsibilities tempered_e_step(const Dataset& data, const MixtureModel& model, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("tempered_e_step: beta must be > 0");
    if (model.dim() != data.dim())
        throw std::invalid_argument("tempered_e_step: model and data dimensions disagree");
    return responsibilities_from_log_weighted(log_weighted_densities(data, model), beta).resp;
}

double log_likelihood(const Dataset& data, const MixtureModel& model) {
    const Eigen::MatrixXd w = log_weighted_densities(data, model);
    Eigen::VectorXd row_ll(w.rows());
    par::for_blocks(w.rows(), [&](std::ptrdiff_t, std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (std::ptrdiff_t t = begin; t < end; ++t) {
            const double m = w.row(t).maxCoeff();
            row_ll(t) = m + std::log((w.row(t).array() - m).exp().sum());
        }
    });
    return row_ll.sum();
}

WeightedMoments compute_weighted_moments(const Dataset& data, const Eigen::MatrixXd& resp) {
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    const Eigen::Index k = resp.cols();
    if (resp.rows() != n)
        throw std::invalid_argument("weighted moments: responsibility rows do not match points");

    const std::ptrdiff_t nb = par::block_count(n);
    // pass 1: mass and first moment, block partials combined in block order
    std::vector<Eigen::VectorXd> mass_b(nb, Eigen::VectorXd::Zero(k));
    std::vector<Eigen::MatrixXd> moment_b(nb, Eigen::MatrixXd::Zero(d, k));
    par::for_blocks(n, [&](std::ptrdiff_t b, std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (std::ptrdiff_t t = begin; t < end; ++t) {
            mass_b[b] += resp.row(t).transpose();
            moment_b[b].noalias() += data.points.row(t).transpose() * resp.row(t);
        }
    });
    WeightedMoments out;
    out.mass = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(d, k);
    for (std::ptrdiff_t b = 0; b < nb; ++b) {
        out.mass += mass_b[b];
        moment += moment_b[b];
    }

    out.means = Eigen::MatrixXd::Zero(d, k);
    for (Eigen::Index j = 0; j < k; ++j)
        if (out.mass(j) > 0.0) out.means.col(j) = moment.col(j) / out.mass(j);

    // pass 2: scatter about each component mean
    out.scatters.assign(k, Eigen::MatrixXd::Zero(d, d));
    const bool blocked = static_cast<double>(nb) * k * d * d < 4e7;
    if (blocked) {
        std::vector<std::vector<Eigen::MatrixXd>> scatter_b(
            nb, std::vector<Eigen::MatrixXd>(k, Eigen::MatrixXd::Zero(d, d)));
        par::for_blocks(n, [&](std::ptrdiff_t b, std::ptrdiff_t begin, std::ptrdiff_t end) {
            Eigen::VectorXd delta(d);
            for (std::ptrdiff_t t = begin; t < end; ++t)
                for (Eigen::Index j = 0; j < k; ++j) {
                    delta = data.points.row(t).transpose() - out.means.col(j);
                    scatter_b[b][j].selfadjointView<Eigen::Lower>().rankUpdate(delta, resp(t, j));
                }
        });
        for (std::ptrdiff_t b = 0; b < nb; ++b)
            for (Eigen::Index j = 0; j < k; ++j) out.scatters[j] += scatter_b[b][j];
    } else {
        // block partials would not fit; fall back to a serial pass
        Eigen::VectorXd delta(d);
        for (Eigen::Index t = 0; t < n; ++t)
            for (Eigen::Index j = 0; j < k; ++j) {
                delta = data.points.row(t).transpose() - out.means.col(j);
                out.scatters[j].selfadjointView<Eigen::Lower>().rankUpdate(delta, resp(t, j));
            }
    }
    for (Eigen::Index j = 0; j < k; ++j)
        out.scatters[j] = out.scatters[j].selfadjointView<Eigen::Lower>();
    return out;
}

MixtureModel m_step(const Dataset& data, const Responsibilities& resp, double reg) {
    if (reg < 0.0) throw std::invalid_argument("m_step: reg must be non-negative");
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    const Eigen::Index k = resp.values.cols();

    const WeightedMoments mom = compute_weighted_moments(data, resp.values);
    for (Eigen::Index j = 0; j < k; ++j)
        if (mom.mass(j) < static_cast<double>(n) * kEmptyComponentTol)
            throw EmptyComponentError(
                "m_step: component " + std::to_string(j) + " has no responsibility mass",
                static_cast<int>(j));

    MixtureModel model;
    model.weights = mom.mass / static_cast<double>(n);
    model.weights /= model.weights.sum();
    model.components.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        model.components[j].mean = mom.means.col(j);
        model.components[j].covariance =
            mom.scatters[j] / mom.mass(j) + reg * Eigen::MatrixXd::Identity(d, d);
    }
    model.validate();
    return model;
}

double default_ridge(const Dataset& data) {
    const auto& x = data.points;
    if (x.rows() < 2) return 0.0;
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const double mean_var =
        (x.rowwise() - mean).array().square().colwise().sum().mean() / double(x.rows() - 1);
    return 1e-6 * mean_var;
}

bool run_em_stage(const Dataset& data, MixtureModel& model, double beta, double tol,
                  int max_iters, double reg, FitTrace& trace, int& next_iteration) {
    if (!(tol > 0.0)) throw std::invalid_argument("run_em_stage: tol must be > 0");
    if (max_iters < 0) throw std::invalid_argument("run_em_stage: max_iters must be >= 0");

    using clock = std::chrono::steady_clock;
    auto last = clock::now();
    double prev_ll = std::numeric_limits<double>::quiet_NaN();
    int updates = 0;
    for (;;) {
        EStepResult es;
        try {
            es = responsibilities_from_log_weighted(log_weighted_densities(data, model), beta);
        } catch (const FactorizationError& e) {
            throw FactorizationError(std::string(e.what()) + " (beta " + std::to_string(beta) +
                                     ", iteration " + std::to_string(next_iteration) + ")");
        }
        ++trace.e_steps;
        const auto now = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - last).count();
        last = now;
        trace.add(next_iteration++, beta, es.log_likelihood, ms, model);

        if (std::isfinite(prev_ll)) {
            const double denom = std::max(std::abs(es.log_likelihood), 1e-300);
            if (std::abs(es.log_likelihood - prev_ll) / denom < tol) return true;
        }
        if (updates >= max_iters) return false;

        try {
            model = m_step(data, es.resp, reg);
        } catch (const EmptyComponentError& e) {
            throw EmptyComponentError(std::string(e.what()) + " (beta " + std::to_string(beta) +
                                          ", iteration " + std::to_string(next_iteration - 1) + ")",
                                      e.component());
        } catch (const FactorizationError& e) {
            throw FactorizationError(std::string(e.what()) + " (beta " + std::to_string(beta) +
                                     ", iteration " + std::to_string(next_iteration - 1) + ")");
        }
        ++updates;
        ++trace.m_steps;
        prev_ll = es.log_likelihood;
    }
}

std::pair<MixtureModel, FitTrace> em_fit(const Dataset& data, const MixtureModel& init, double tol,
                                         int max_iters, double reg) {
    data.validate();
    init.validate();
    if (init.dim() != data.dim())
        throw std::invalid_argument("em_fit: model and data dimensions disagree");
    if (reg < 0.0) reg = default_ridge(data);

    MixtureModel model = init;
    FitTrace trace;
    int iter = 0;
    const bool converged = run_em_stage(data, model, 1.0, tol, max_iters, reg, trace, iter);
    trace.termination = converged ? "converged" : "max-iters";
    return {std::move(model), std::move(trace)};
}

}  // namespace mixfit
