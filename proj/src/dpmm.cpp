#include "mixfit/dpmm.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mixfit/mixture.hpp"
#include "mixfit/parallel.hpp"
#include "mixfit/rng.hpp"

namespace mixfit {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kLogPi = 1.1447298858494001741;
constexpr double kLog2 = 0.69314718055994530942;

double digamma(double x) { return boost::math::digamma(x); }

double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// log of the Wishart normalizer B(W, nu) with W = Psi^-1
double log_wishart_b(double log_det_psi, double nu, int d) {
    double sum_lgamma = 0.0;
    for (int i = 1; i <= d; ++i) sum_lgamma += std::lgamma(0.5 * (nu + 1.0 - i));
    return 0.5 * nu * log_det_psi - 0.5 * nu * d * kLog2 - 0.25 * d * (d - 1) * kLogPi -
           sum_lgamma;
}

struct PosteriorCache {
    Eigen::LLT<Eigen::MatrixXd> llt;  // of Psi
    double log_det_psi = 0.0;
    double elog_det_lambda = 0.0;  // E[log |Lambda|]
};

PosteriorCache cache_posterior(const NormalWishart& nw) {
    PosteriorCache c;
    c.llt.compute(nw.scale_matrix);
    if (c.llt.info() != Eigen::Success)
        throw FactorizationError("normal-wishart: scale matrix not positive definite");
    c.log_det_psi = 2.0 * c.llt.matrixLLT().diagonal().array().log().sum();
    const int d = nw.dim();
    c.elog_det_lambda = d * kLog2 - c.log_det_psi;
    for (int i = 1; i <= d; ++i)
        c.elog_det_lambda += digamma(0.5 * (nw.degrees_of_freedom + 1.0 - i));
    return c;
}

// N x T matrix of E[log p(x_i | component j)] under the current posteriors
Eigen::MatrixXd expected_log_px(const VariationalState& state, const Dataset& data) {
    const Eigen::Index n = data.rows();
    const int d = data.dim();
    const int t_max = state.truncation;
    Eigen::MatrixXd out(n, t_max);
    for (int j = 0; j < t_max; ++j) {
        const NormalWishart& nw = state.component_posteriors[j];
        const PosteriorCache c = cache_posterior(nw);
        const double base =
            0.5 * c.elog_det_lambda - 0.5 * d * kLog2Pi - 0.5 * d / nw.scale_count;
        const double nu = nw.degrees_of_freedom;
        const Eigen::VectorXd m = nw.mean_location;
        par::for_blocks(n, [&](std::ptrdiff_t, std::ptrdiff_t begin, std::ptrdiff_t end) {
            Eigen::VectorXd delta(d);
            for (std::ptrdiff_t i = begin; i < end; ++i) {
                delta = data.points.row(i).transpose() - m;
                c.llt.matrixL().solveInPlace(delta);
                out(i, j) = base - 0.5 * nu * delta.squaredNorm();
            }
        });
    }
    return out;
}

}  // namespace

void NormalWishart::validate() const {
    const int d = dim();
    if (d < 1) throw std::invalid_argument("normal-wishart: empty mean location");
    if (scale_matrix.rows() != d || scale_matrix.cols() != d)
        throw std::invalid_argument("normal-wishart: scale matrix shape mismatch");
    if (!(scale_count > 0.0)) throw std::invalid_argument("normal-wishart: scale count <= 0");
    if (!(degrees_of_freedom > d - 1))
        throw std::invalid_argument("normal-wishart: dof must exceed d - 1");
    Eigen::LLT<Eigen::MatrixXd> llt(scale_matrix);
    if (llt.info() != Eigen::Success)
        throw FactorizationError("normal-wishart: scale matrix not positive definite");
}

void VariationalState::validate() const {
    if (truncation < 1) throw std::invalid_argument("variational state: truncation must be >= 1");
    if (stick_params.rows() != truncation ||
        static_cast<int>(component_posteriors.size()) != truncation)
        throw std::invalid_argument("variational state: truncation does not match parameters");
    if ((stick_params.array() <= 0.0).any())
        throw std::invalid_argument("variational state: Beta parameters must be positive");
    if (!(concentration > 0.0))
        throw std::invalid_argument("variational state: concentration must be positive");
    prior.validate();
    for (const auto& nw : component_posteriors) nw.validate();
    if (responsibilities.size() > 0) {
        if (responsibilities.cols() != truncation)
            throw std::invalid_argument("variational state: responsibility columns != truncation");
        for (Eigen::Index i = 0; i < responsibilities.rows(); ++i)
            if (std::abs(responsibilities.row(i).sum() - 1.0) > 1e-10)
                throw std::invalid_argument("variational state: responsibilities not row-stochastic");
    }
}

NormalWishart empirical_prior(const Dataset& data) {
    data.validate();
    const int d = data.dim();
    NormalWishart prior;
    prior.mean_location = data.points.colwise().mean().transpose();
    prior.scale_count = 1.0;
    prior.degrees_of_freedom = d + 2.0;
    const Eigen::MatrixXd centered = data.points.rowwise() - prior.mean_location.transpose();
    const double denom = std::max<double>(1.0, data.rows() - 1);
    prior.scale_matrix = centered.transpose() * centered / denom +
                         default_ridge(data) * Eigen::MatrixXd::Identity(d, d);
    return prior;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> stick_log_expectations(const VariationalState& state) {
    const int t_max = state.truncation;
    Eigen::VectorXd elog_v(t_max), elog_1mv(t_max);
    for (int j = 0; j < t_max; ++j) {
        const double g1 = state.stick_params(j, 0);
        const double g2 = state.stick_params(j, 1);
        const double dg_sum = digamma(g1 + g2);
        elog_v(j) = digamma(g1) - dg_sum;
        elog_1mv(j) = digamma(g2) - dg_sum;
    }
    return {elog_v, elog_1mv};
}

Eigen::VectorXd expected_stick_masses(const VariationalState& state) {
    Eigen::VectorXd mass(state.truncation);
    double remaining = 1.0;
    for (int j = 0; j < state.truncation; ++j) {
        const double g1 = state.stick_params(j, 0);
        const double g2 = state.stick_params(j, 1);
        const double ev = g1 / (g1 + g2);
        mass(j) = ev * remaining;
        remaining *= 1.0 - ev;
    }
    return mass;
}

Eigen::MatrixXd vb_scores(const VariationalState& state, const Dataset& data) {
    state.validate();
    if (data.dim() != state.prior.dim())
        throw std::invalid_argument("vb_scores: data dimension does not match the state");
    const auto [elog_v, elog_1mv] = stick_log_expectations(state);

    Eigen::MatrixXd scores = expected_log_px(state, data);
    double prefix = 0.0;
    for (int j = 0; j < state.truncation; ++j) {
        scores.col(j).array() += elog_v(j) + prefix;
        prefix += elog_1mv(j);
    }
    return scores;
}

Eigen::MatrixXd tempered_vb_e_step(const VariationalState& state, const Dataset& data,
                                   double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("tempered_vb_e_step: beta must be > 0");
    return responsibilities_from_log_weighted(vb_scores(state, data), beta).resp.values;
}

VariationalState vb_m_step(const VariationalState& state, const Dataset& data) {
    if (state.responsibilities.rows() != data.rows())
        throw std::invalid_argument("vb_m_step: responsibilities do not match the dataset");
    const int t_max = state.truncation;
    const int d = data.dim();
    const WeightedMoments mom = compute_weighted_moments(data, state.responsibilities);

    VariationalState out = state;
    double suffix = 0.0;  // sum of masses of components after j
    for (int j = t_max - 1; j >= 0; --j) {
        out.stick_params(j, 0) = 1.0 + mom.mass(j);
        out.stick_params(j, 1) = state.concentration + suffix;
        suffix += mom.mass(j);
    }

    const NormalWishart& prior = state.prior;
    for (int j = 0; j < t_max; ++j) {
        const double nj = mom.mass(j);
        NormalWishart& nw = out.component_posteriors[j];
        nw.scale_count = prior.scale_count + nj;
        nw.degrees_of_freedom = prior.degrees_of_freedom + nj;
        const Eigen::VectorXd weighted_sum = nj * mom.means.col(j);
        nw.mean_location =
            (prior.scale_count * prior.mean_location + weighted_sum) / nw.scale_count;
        nw.scale_matrix = prior.scale_matrix + mom.scatters[j];
        if (nj > 1e-300) {
            const Eigen::VectorXd dd = mom.means.col(j) - prior.mean_location;
            nw.scale_matrix += (prior.scale_count * nj / nw.scale_count) * dd * dd.transpose();
        }
        (void)d;
    }
    return out;
}

double elbo(const VariationalState& state, const Dataset& data) {
    const Eigen::MatrixXd& phi = state.responsibilities;
    if (phi.rows() != data.rows())
        throw std::invalid_argument("elbo: responsibilities do not match the dataset");
    const int t_max = state.truncation;
    const int d = data.dim();
    const double c = state.concentration;
    const NormalWishart& prior = state.prior;

    const auto [elog_v, elog_1mv] = stick_log_expectations(state);
    const Eigen::VectorXd nj = phi.colwise().sum().transpose();

    // E[log p(X | Z, eta)]
    const Eigen::MatrixXd log_px = expected_log_px(state, data);
    double value = (phi.array() * log_px.array()).sum();

    // E[log p(Z | V)]
    double prefix = 0.0;
    for (int j = 0; j < t_max; ++j) {
        value += nj(j) * (elog_v(j) + prefix);
        prefix += elog_1mv(j);
    }

    // E[log p(V)] under Beta(1, c) sticks
    for (int j = 0; j < t_max; ++j) value += std::log(c) + (c - 1.0) * elog_1mv(j);

    // - E[log q(Z)]
    double entropy_z = 0.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
        for (int j = 0; j < t_max; ++j) {
            const double p = phi(i, j);
            if (p > 0.0) entropy_z -= p * std::log(p);
        }
    value += entropy_z;

    // - E[log q(V)]
    for (int j = 0; j < t_max; ++j) {
        const double g1 = state.stick_params(j, 0);
        const double g2 = state.stick_params(j, 1);
        value += log_beta(g1, g2) - (g1 - 1.0) * digamma(g1) - (g2 - 1.0) * digamma(g2) +
                 (g1 + g2 - 2.0) * digamma(g1 + g2);
    }

    // E[log p(eta)] - E[log q(eta)]
    const PosteriorCache prior_cache = cache_posterior(prior);
    const double log_b0 = log_wishart_b(prior_cache.log_det_psi, prior.degrees_of_freedom, d);
    for (int j = 0; j < t_max; ++j) {
        const NormalWishart& nw = state.component_posteriors[j];
        const PosteriorCache pc = cache_posterior(nw);
        const Eigen::VectorXd dm = nw.mean_location - prior.mean_location;
        const double mahal = dm.dot(pc.llt.solve(dm));
        const double trace_term = pc.llt.solve(prior.scale_matrix).trace();

        const double e_log_prior =
            0.5 * (d * std::log(prior.scale_count / (2.0 * M_PI)) + pc.elog_det_lambda -
                   d * prior.scale_count / nw.scale_count -
                   prior.scale_count * nw.degrees_of_freedom * mahal) +
            log_b0 + 0.5 * (prior.degrees_of_freedom - d - 1.0) * pc.elog_det_lambda -
            0.5 * nw.degrees_of_freedom * trace_term;

        const double wishart_entropy =
            -log_wishart_b(pc.log_det_psi, nw.degrees_of_freedom, d) -
            0.5 * (nw.degrees_of_freedom - d - 1.0) * pc.elog_det_lambda +
            0.5 * nw.degrees_of_freedom * d;
        const double e_log_q = 0.5 * pc.elog_det_lambda +
                               0.5 * d * std::log(nw.scale_count / (2.0 * M_PI)) - 0.5 * d -
                               wishart_entropy;

        value += e_log_prior - e_log_q;
    }
    return value;
}

int effective_components(const VariationalState& state, double mass_threshold) {
    if (!(mass_threshold > 0.0) || !(mass_threshold < 1.0))
        throw std::invalid_argument("effective_components: threshold must be in (0, 1)");
    if (state.responsibilities.size() == 0) return 0;
    const double n = static_cast<double>(state.responsibilities.rows());
    const Eigen::VectorXd mass = state.responsibilities.colwise().sum().transpose();
    return static_cast<int>((mass.array() > mass_threshold * n).count());
}

std::pair<VariationalState, FitTrace> dpmm_fit(const Dataset& data, int truncation,
                                               const AnnealSchedule& schedule,
                                               double concentration, std::uint64_t seed,
                                               const DpmmOptions& opt) {
    data.validate();
    schedule.validate();
    if (truncation < 1) throw std::invalid_argument("dpmm_fit: truncation must be >= 1");
    if (truncation > data.rows())
        throw std::invalid_argument("dpmm_fit: truncation exceeds the number of points");
    if (!(concentration > 0.0))
        throw std::invalid_argument("dpmm_fit: concentration must be positive");

    VariationalState state;
    state.truncation = truncation;
    state.concentration = concentration;
    state.prior = empirical_prior(data);
    state.stick_params.resize(truncation, 2);
    state.stick_params.col(0).setOnes();
    state.stick_params.col(1).setConstant(concentration);
    state.component_posteriors.assign(truncation, state.prior);

    // posterior mean locations seeded at distinct sample points
    Rng rng(seed);
    std::vector<Eigen::Index> indices(data.rows());
    std::iota(indices.begin(), indices.end(), 0);
    for (int j = 0; j < truncation; ++j) {
        const auto pick = j + static_cast<Eigen::Index>(rng.below(indices.size() - j));
        std::swap(indices[j], indices[pick]);
        state.component_posteriors[j].mean_location = data.points.row(indices[j]);
    }

    FitTrace trace;
    using clock = std::chrono::steady_clock;
    auto last = clock::now();
    int iter = 0;
    bool stage_converged = false;
    for (std::size_t s = 0; s < schedule.betas.size(); ++s) {
        const double beta = schedule.betas[s];
        double prev_elbo = std::numeric_limits<double>::quiet_NaN();
        bool have_prev_phi = state.responsibilities.size() > 0;
        Eigen::MatrixXd prev_phi = state.responsibilities;
        stage_converged = false;
        for (int sweep = 0; sweep < schedule.inner_max_iters; ++sweep) {
            const Eigen::MatrixXd phi = tempered_vb_e_step(state, data, beta);
            state.responsibilities = phi;
            state = vb_m_step(state, data);
            ++trace.e_steps;
            ++trace.m_steps;

            const double el = elbo(state, data);
            const auto now = clock::now();
            trace.add_record(iter++, beta, el,
                             std::chrono::duration<double, std::milli>(now - last).count());
            last = now;
            trace.effective_components.push_back(effective_components(state, opt.mass_threshold));

            if (beta == 1.0) {
                if (std::isfinite(prev_elbo) &&
                    std::abs(el - prev_elbo) / std::max(std::abs(el), 1e-300) <
                        schedule.inner_tol) {
                    stage_converged = true;
                    break;
                }
                prev_elbo = el;
            } else {
                if (have_prev_phi) {
                    const double change = (phi - prev_phi).cwiseAbs().mean();
                    if (change < schedule.inner_tol) {
                        stage_converged = true;
                        break;
                    }
                }
                prev_phi = phi;
                have_prev_phi = true;
            }
        }
    }
    trace.termination = stage_converged ? "converged" : "max-iters";
    return {std::move(state), std::move(trace)};
}

}  // namespace mixfit
