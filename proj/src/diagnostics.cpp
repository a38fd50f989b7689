#include "mixfit/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mixfit/mixture.hpp"
#include "mixfit/parallel.hpp"
#include "mixfit/rng.hpp"

namespace mixfit {

OverlapMatrix overlap_matrix(const Dataset& data, const MixtureModel& model, double beta) {
    const Eigen::MatrixXd h = tempered_e_step(data, model, beta).values;
    const double n = static_cast<double>(h.rows());

    Eigen::MatrixXd e = h.transpose() * h / n;
    e = ((e + e.transpose()) / 2.0).eval();  // exact symmetry
    const Eigen::VectorXd col_mean = h.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < e.cols(); ++j) e(j, j) = col_mean(j) - e(j, j);

    OverlapMatrix out;
    out.max_overlap = e.maxCoeff();
    out.entries = std::move(e);
    return out;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct NaturalCoords {
    Eigen::VectorXd alphas;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
};

int triangle_size(int d) { return d * (d + 1) / 2; }

int natural_dim(int k, int d, bool with_cov) {
    return k + k * d + (with_cov ? k * triangle_size(d) : 0);
}

Eigen::VectorXd flatten_natural(const NaturalCoords& c, bool with_cov) {
    const int k = static_cast<int>(c.alphas.size());
    const int d = static_cast<int>(c.means.front().size());
    Eigen::VectorXd v(natural_dim(k, d, with_cov));
    int idx = 0;
    for (int j = 0; j < k; ++j) v(idx++) = c.alphas(j);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) v(idx++) = c.means[j](i);
    if (with_cov)
        for (int j = 0; j < k; ++j)
            for (int col = 0; col < d; ++col)
                for (int row = 0; row <= col; ++row) v(idx++) = c.covs[j](row, col);
    return v;
}

NaturalCoords unflatten_natural(const Eigen::VectorXd& v, int k, int d, bool with_cov,
                                const NaturalCoords& tmpl) {
    NaturalCoords c;
    c.alphas.resize(k);
    c.means.assign(k, Eigen::VectorXd(d));
    c.covs = tmpl.covs;  // covariances come from the template when not varied
    int idx = 0;
    for (int j = 0; j < k; ++j) c.alphas(j) = v(idx++);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) c.means[j](i) = v(idx++);
    if (with_cov)
        for (int j = 0; j < k; ++j)
            for (int col = 0; col < d; ++col)
                for (int row = 0; row <= col; ++row) {
                    c.covs[j](row, col) = v(idx);
                    c.covs[j](col, row) = v(idx);
                    ++idx;
                }
    return c;
}

// Column-packed-upper duplication matrix: vec(S) = D vech(S) for symmetric S.
Eigen::MatrixXd duplication_matrix(int d) {
    Eigen::MatrixXd dup = Eigen::MatrixXd::Zero(d * d, triangle_size(d));
    int q = 0;
    for (int c = 0; c < d; ++c)
        for (int r = 0; r <= c; ++r) {
            dup(r + c * d, q) = 1.0;
            dup(c + r * d, q) = 1.0;
            ++q;
        }
    return dup;
}

}  // namespace

Eigen::VectorXd natural_gradient(const Dataset& data, const Eigen::VectorXd& alphas,
                                 const std::vector<Eigen::VectorXd>& means,
                                 const std::vector<Eigen::MatrixXd>& covs,
                                 bool include_covariances) {
    const int k = static_cast<int>(alphas.size());
    const int d = data.dim();
    if ((alphas.array() <= 0.0).any())
        throw std::invalid_argument("natural_gradient: weights must be positive");

    std::vector<GaussianComponent> comps(k);
    for (int j = 0; j < k; ++j) comps[j] = {means[j], covs[j]};
    Eigen::MatrixXd w = log_density_matrix(data, comps);
    for (int j = 0; j < k; ++j) w.col(j).array() += std::log(alphas(j));
    const Eigen::MatrixXd h = responsibilities_from_log_weighted(w, 1.0).resp.values;
    const WeightedMoments mom = compute_weighted_moments(data, h);

    Eigen::VectorXd grad(natural_dim(k, d, include_covariances));
    int idx = 0;
    for (int j = 0; j < k; ++j) grad(idx++) = mom.mass(j) / alphas(j);
    for (int j = 0; j < k; ++j) {
        Eigen::LLT<Eigen::MatrixXd> llt(covs[j]);
        if (llt.info() != Eigen::Success)
            throw FactorizationError("natural_gradient: covariance not positive definite");
        grad.segment(idx, d) = llt.solve(mom.mass(j) * (mom.means.col(j) - means[j]));
        idx += d;
    }
    if (include_covariances) {
        for (int j = 0; j < k; ++j) {
            Eigen::LLT<Eigen::MatrixXd> llt(covs[j]);
            const Eigen::VectorXd dd = mom.means.col(j) - means[j];
            Eigen::MatrixXd s = mom.scatters[j];
            if (mom.mass(j) > 0.0) s += mom.mass(j) * dd * dd.transpose();
            const Eigen::MatrixXd g_sigma =
                0.5 * llt.solve(llt.solve(s - mom.mass(j) * covs[j]).transpose());
            // unique-entry coordinates: off-diagonals vary both (r,c) and (c,r)
            for (int c = 0; c < d; ++c)
                for (int r = 0; r <= c; ++r) grad(idx++) = (r == c ? 1.0 : 2.0) * g_sigma(r, c);
        }
    }
    return grad;
}

HessianDiagnostics projected_hessian_condition(const Dataset& data, const MixtureModel& model,
                                               const HessianOptions& opt) {
    data.validate();
    model.validate();
    const int k = model.size();
    const int d = model.dim();
    const bool with_cov = opt.include_covariances;
    const int dim = natural_dim(k, d, with_cov);
    const double n = static_cast<double>(data.rows());

    NaturalCoords coords;
    coords.alphas = model.weights;
    coords.means.resize(k);
    coords.covs.resize(k);
    for (int j = 0; j < k; ++j) {
        coords.means[j] = model.components[j].mean;
        coords.covs[j] = model.components[j].covariance;
    }
    const Eigen::VectorXd theta = flatten_natural(coords, with_cov);

    auto grad_at = [&](const Eigen::VectorXd& v) {
        const NaturalCoords c = unflatten_natural(v, k, d, with_cov, coords);
        return natural_gradient(data, c.alphas, c.means, c.covs, with_cov);
    };

    // central finite differences of the analytic gradient
    Eigen::MatrixXd hess(dim, dim);
    for (int c = 0; c < dim; ++c) {
        const double step = opt.fd_step * std::max(std::abs(theta(c)), opt.fd_floor);
        Eigen::VectorXd up = theta, down = theta;
        up(c) += step;
        down(c) -= step;
        hess.col(c) = (grad_at(up) - grad_at(down)) / (2.0 * step);
    }

    HessianDiagnostics out;
    const double scale = std::max(hess.cwiseAbs().maxCoeff(), 1e-300);
    out.fd_asymmetry = (hess - hess.transpose()).cwiseAbs().maxCoeff() / scale;
    hess = ((hess + hess.transpose()) / 2.0).eval();

    // constraint basis: orthonormal sum-zero directions on the weight block,
    // identity elsewhere
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(k, 1);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(ones).householderQ();
    const int m = dim - 1;
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, m);
    basis.topLeftCorner(k, k - 1) = q.rightCols(k - 1);
    basis.bottomRightCorner(dim - k, dim - k).setIdentity();
    out.basis_dim = m;

    // EM preconditioner, block diagonal
    Eigen::MatrixXd precond = Eigen::MatrixXd::Zero(dim, dim);
    precond.topLeftCorner(k, k) =
        (Eigen::MatrixXd(model.weights.asDiagonal()) - model.weights * model.weights.transpose()) /
        n;
    int idx = k;
    for (int j = 0; j < k; ++j) {
        precond.block(idx, idx, d, d) = model.components[j].covariance / (n * model.weights(j));
        idx += d;
    }
    if (with_cov) {
        const Eigen::MatrixXd dup = duplication_matrix(d);
        const Eigen::MatrixXd dup_pinv =
            (dup.transpose() * dup).ldlt().solve(dup.transpose());
        const int ts = triangle_size(d);
        for (int j = 0; j < k; ++j) {
            const Eigen::MatrixXd& sigma = model.components[j].covariance;
            Eigen::MatrixXd kron(d * d, d * d);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    kron.block(a * d, b * d, d, d) = sigma(a, b) * sigma;
            precond.block(idx, idx, ts, ts) =
                (2.0 / (n * model.weights(j))) * dup_pinv * kron * dup_pinv.transpose();
            idx += ts;
        }
    }

    // The product P H is far from normal in the unbalanced regime, so the
    // condition number uses singular values (what a generic cond() computes;
    // for symmetric input it coincides with the |eigenvalue| ratio). The
    // eigenvalues of E^T P H E stay real and equal those of L^T (E^T H E) L
    // with E^T P E = L L^T; callers wanting the EM contraction spectrum can
    // eigensolve projected_hessian.
    auto svd_cond = [](const Eigen::MatrixXd& m) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        const auto& sv = svd.singularValues();
        return sv(0) / sv(sv.size() - 1);
    };

    Eigen::MatrixXd plain = basis.transpose() * hess * basis;
    plain = ((plain + plain.transpose()) / 2.0).eval();
    Eigen::MatrixXd projected = basis.transpose() * precond * hess * basis;

    out.condition_number = svd_cond(projected);
    out.projected_hessian = std::move(projected);
    out.condition_number_unpreconditioned = svd_cond(plain);

    out.singular = !std::isfinite(out.condition_number);
    if (out.singular) out.condition_number = std::numeric_limits<double>::infinity();
    return out;
}

namespace {

Eigen::VectorXd flatten_model(const MixtureModel& model) {
    const int k = model.size();
    const int d = model.dim();
    Eigen::VectorXd v(k + k * d + k * triangle_size(d));
    int idx = 0;
    for (int j = 0; j < k; ++j) v(idx++) = model.weights(j);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) v(idx++) = model.components[j].mean(i);
    for (int j = 0; j < k; ++j)
        for (int c = 0; c < d; ++c)
            for (int r = 0; r <= c; ++r) v(idx++) = model.components[j].covariance(r, c);
    return v;
}

MixtureModel em_map(const Dataset& data, const MixtureModel& model, double beta, double ridge) {
    return m_step(data, tempered_e_step(data, model, beta), ridge);
}

}  // namespace

double empirical_em_rate(const Dataset& data, const MixtureModel& fixed_point,
                         const RateOptions& opt) {
    data.validate();
    fixed_point.validate();
    if (!(opt.beta > 0.0)) throw std::invalid_argument("empirical_em_rate: beta must be > 0");

    // polish the fixed point under the measured map
    MixtureModel star = fixed_point;
    for (int i = 0; i < opt.refine_iters; ++i) {
        const MixtureModel next = em_map(data, star, opt.beta, opt.ridge);
        const double move = (flatten_model(next) - flatten_model(star)).norm();
        star = next;
        if (move < 1e-13 * (1.0 + flatten_model(star).norm())) break;
    }
    const Eigen::VectorXd star_flat = flatten_model(star);
    const double scale = 1.0 + star_flat.norm();

    Rng rng(opt.seed);
    std::vector<double> rates;
    for (int r = 0; r < opt.restarts; ++r) {
        // multiplicative jitter keeps the perturbed model valid
        MixtureModel cur = star;
        for (int j = 0; j < cur.size(); ++j) {
            const Eigen::VectorXd sd = cur.components[j].covariance.diagonal().cwiseSqrt();
            for (int i = 0; i < cur.dim(); ++i)
                cur.components[j].mean(i) += opt.perturb_scale * sd(i) * rng.normal();
            cur.components[j].covariance *= std::exp(opt.perturb_scale * rng.normal());
            cur.weights(j) *= std::exp(opt.perturb_scale * rng.normal());
        }
        cur.weights /= cur.weights.sum();

        const double d0 = (flatten_model(cur) - star_flat).norm();
        std::vector<double> ratios;
        double prev = d0;
        for (int it = 0; it < opt.max_iters; ++it) {
            cur = em_map(data, cur, opt.beta, opt.ridge);
            const double dist = (flatten_model(cur) - star_flat).norm();
            if (dist > opt.escape_factor * d0)
                throw BasinEscapeError("empirical_em_rate: iterates left the fixed-point basin");
            if (dist < 1e-11 * scale || prev <= 0.0) break;
            ratios.push_back(dist / prev);
            prev = dist;
        }
        if (ratios.empty()) {
            rates.push_back(0.0);  // collapsed to the fixed point immediately
            continue;
        }
        const std::size_t take = std::min<std::size_t>(10, ratios.size());
        std::vector<double> tail(ratios.end() - take, ratios.end());
        std::nth_element(tail.begin(), tail.begin() + tail.size() / 2, tail.end());
        rates.push_back(tail[tail.size() / 2]);
    }

    std::nth_element(rates.begin(), rates.begin() + rates.size() / 2, rates.end());
    const double rate = rates[rates.size() / 2];
    return std::clamp(rate, 0.0, 1.0 - 1e-12);
}

Eigen::MatrixXd loglik_surface_slice(const Dataset& data, const MixtureModel& tmpl,
                                     const Eigen::VectorXd& mu1_grid,
                                     const Eigen::VectorXd& mu2_grid) {
    data.validate();
    tmpl.validate();
    if (tmpl.size() != 2 || tmpl.dim() != 1)
        throw std::invalid_argument("loglik_surface_slice: template must be 2 components in 1-D");

    Eigen::MatrixXd out(mu1_grid.size(), mu2_grid.size());
    MixtureModel probe = tmpl;
    for (Eigen::Index i = 0; i < mu1_grid.size(); ++i)
        for (Eigen::Index j = 0; j < mu2_grid.size(); ++j) {
            probe.components[0].mean(0) = mu1_grid(i);
            probe.components[1].mean(0) = mu2_grid(j);
            out(i, j) = log_likelihood(data, probe);
        }
    return out;
}

}  // namespace mixfit
