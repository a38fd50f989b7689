#include "mixfit/gradopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace mixfit {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

PackedParams pack(const MixtureModel& model) {
    model.validate();
    const int k = model.size();
    const int d = model.dim();
    PackedParams p{k, d, Eigen::VectorXd::Zero(PackedParams::packed_size(k, d))};

    const double log_last = std::log(model.weights(k - 1));
    for (int j = 0; j < k; ++j) p.values(j) = std::log(model.weights(j)) - log_last;

    for (int j = 0; j < k; ++j)
        p.values.segment(p.mean_offset(j), d) = model.components[j].mean;

    for (int j = 0; j < k; ++j) {
        Eigen::LLT<Eigen::MatrixXd> llt(model.components[j].covariance);
        if (llt.info() != Eigen::Success)
            throw FactorizationError("pack: covariance not positive definite");
        const Eigen::MatrixXd u = llt.matrixU();
        int idx = p.factor_offset(j);
        for (int c = 0; c < d; ++c)
            for (int r = 0; r <= c; ++r) p.values(idx++) = u(r, c);
    }
    return p;
}

MixtureModel unpack(const PackedParams& packed) {
    const int k = packed.k;
    const int d = packed.d;
    if (packed.size() != PackedParams::packed_size(k, d))
        throw std::invalid_argument("unpack: packed vector has the wrong length");

    MixtureModel model;
    const Eigen::VectorXd& v = packed.values;
    const double m = v.head(k).maxCoeff();
    Eigen::VectorXd w = (v.head(k).array() - m).exp();
    model.weights = w / w.sum();

    model.components.resize(k);
    for (int j = 0; j < k; ++j) {
        model.components[j].mean = v.segment(packed.mean_offset(j), d);
        Eigen::MatrixXd u = Eigen::MatrixXd::Zero(d, d);
        int idx = packed.factor_offset(j);
        for (int c = 0; c < d; ++c)
            for (int r = 0; r <= c; ++r) u(r, c) = v(idx++);
        model.components[j].covariance = u.transpose() * u;
    }
    return model;
}

double min_abs_factor_diagonal(const PackedParams& packed) {
    double out = kInf;
    for (int j = 0; j < packed.k; ++j) {
        const int base = packed.factor_offset(j);
        for (int c = 0; c < packed.d; ++c)
            out = std::min(out, std::abs(packed.values(base + c * (c + 1) / 2 + c)));
    }
    return out;
}

std::pair<double, Eigen::VectorXd> neg_loglik_and_grad(const PackedParams& packed,
                                                       const Dataset& data) {
    const int k = packed.k;
    const int d = packed.d;
    if (data.dim() != d)
        throw std::invalid_argument("neg_loglik_and_grad: data dimension mismatch");
    const MixtureModel model = unpack(packed);

    const EStepResult es =
        responsibilities_from_log_weighted(log_weighted_densities(data, model), 1.0);
    const double n = static_cast<double>(data.rows());
    const WeightedMoments mom = compute_weighted_moments(data, es.resp.values);

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(packed.size());

    // dL/dlambda_j = sum_t h_j(t) - N alpha_j (free softmax; null direction cancels)
    grad.head(k) = mom.mass - n * model.weights;

    for (int j = 0; j < k; ++j) {
        const Eigen::MatrixXd& sigma = model.components[j].covariance;
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        if (llt.info() != Eigen::Success)
            throw FactorizationError("neg_loglik_and_grad: covariance not positive definite");

        // dL/dmu_j = Sigma^-1 sum_t h (x - mu)
        const Eigen::VectorXd weighted_delta =
            mom.mass(j) * (mom.means.col(j) - model.components[j].mean);
        grad.segment(packed.mean_offset(j), d) = llt.solve(weighted_delta);

        // dL/dSigma_j = 1/2 Sigma^-1 [ S_j + m_j dd^T - mass_j Sigma ] Sigma^-1
        // where S_j is the scatter about the weighted mean and dd the offset of
        // that mean from mu_j (recenters the scatter about mu_j).
        const Eigen::VectorXd dd = mom.means.col(j) - model.components[j].mean;
        Eigen::MatrixXd s = mom.scatters[j];
        if (mom.mass(j) > 0.0) s += mom.mass(j) * dd * dd.transpose();
        const Eigen::MatrixXd inner = s - mom.mass(j) * sigma;
        const Eigen::MatrixXd g_sigma = 0.5 * llt.solve(llt.solve(inner).transpose());

        // chain rule through Sigma = U^T U: dL/dU = 2 U G on the upper triangle
        const Eigen::MatrixXd u = [&] {
            Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
            int idx = packed.factor_offset(j);
            for (int c = 0; c < d; ++c)
                for (int r = 0; r <= c; ++r) m2(r, c) = packed.values(idx++);
            return m2;
        }();
        const Eigen::MatrixXd g_u = 2.0 * u * g_sigma;
        int idx = packed.factor_offset(j);
        for (int c = 0; c < d; ++c)
            for (int r = 0; r <= c; ++r) grad(idx++) = g_u(r, c);
    }

    return {-es.log_likelihood, -grad};
}

// ---------------------------------------------------------------------------
// line search (strong Wolfe, cubic interpolation, invalid trials shrink)

namespace {

struct LinePoint {
    double a = 0.0;
    double f = 0.0;
    double dd = 0.0;  // directional derivative
};

struct LineSearchOut {
    double alpha = 0.0;
    double f = 0.0;
    Eigen::VectorXd x, g;
    bool ok = false;
};

double cubic_step(const LinePoint& lo, const LinePoint& hi) {
    const double d1 = lo.dd + hi.dd - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
    const double disc = d1 * d1 - lo.dd * hi.dd;
    double a;
    if (disc < 0.0) {
        a = 0.5 * (lo.a + hi.a);
    } else {
        const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
        a = hi.a - (hi.a - lo.a) * (hi.dd + d2 - d1) / (hi.dd - lo.dd + 2.0 * d2);
    }
    const double a_min = std::min(lo.a, hi.a);
    const double a_max = std::max(lo.a, hi.a);
    const double margin = 0.1 * (a_max - a_min);
    if (!std::isfinite(a)) a = 0.5 * (lo.a + hi.a);
    return std::clamp(a, a_min + margin, a_max - margin);
}

LineSearchOut wolfe_line_search(const ObjectiveFn& fn, const Eigen::VectorXd& x0, double f0,
                                const Eigen::VectorXd& g0, const Eigen::VectorXd& dir, double c1,
                                double c2, int max_evals, double alpha0) {
    LineSearchOut out;
    const double d0 = g0.dot(dir);
    if (!(d0 < 0.0)) return out;

    Eigen::VectorXd x_try(x0.size()), g_try(x0.size());
    int evals = 0;
    auto eval = [&](double a, LinePoint& pt) -> bool {
        x_try = x0 + a * dir;
        const double f = fn(x_try, g_try);
        ++evals;
        if (!std::isfinite(f)) return false;
        pt = {a, f, g_try.dot(dir)};
        return true;
    };
    auto sufficient = [&](const LinePoint& pt) { return pt.f <= f0 + c1 * pt.a * d0; };
    auto curvature = [&](const LinePoint& pt) { return std::abs(pt.dd) <= -c2 * d0; };
    auto accept = [&](const LinePoint& pt) {
        out.alpha = pt.a;
        out.f = pt.f;
        out.x = x_try;
        out.g = g_try;
        out.ok = true;
    };

    // best sufficient-decrease point seen, kept as a fallback
    LinePoint best;
    Eigen::VectorXd best_x, best_g;
    bool have_best = false;
    auto remember = [&](const LinePoint& pt) {
        if (pt.a > 0.0 && sufficient(pt) && (!have_best || pt.f < best.f)) {
            best = pt;
            best_x = x_try;
            best_g = g_try;
            have_best = true;
        }
    };

    LinePoint lo{0.0, f0, d0};
    LinePoint hi;
    bool hi_valid = false;
    bool bracketed = false;

    // bracketing phase
    LinePoint prev = lo;
    double a = std::max(alpha0, 1e-16);
    while (evals < max_evals && !bracketed) {
        LinePoint pt;
        if (!eval(a, pt)) {
            lo = prev;
            hi = {a, kInf, 0.0};
            hi_valid = false;
            bracketed = true;
            break;
        }
        remember(pt);
        if (!sufficient(pt) || (prev.a > 0.0 && pt.f >= prev.f)) {
            lo = prev;
            hi = pt;
            hi_valid = true;
            bracketed = true;
            break;
        }
        if (curvature(pt)) {
            accept(pt);
            return out;
        }
        if (pt.dd >= 0.0) {
            lo = pt;
            hi = prev;
            hi_valid = true;
            bracketed = true;
            break;
        }
        prev = pt;
        a = std::min(2.0 * a, 1e10);
        if (a >= 1e10) break;
    }

    // zoom phase
    while (bracketed && evals < max_evals) {
        if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
        const double cand = hi_valid ? cubic_step(lo, hi) : 0.5 * (lo.a + hi.a);
        LinePoint pt;
        if (!eval(cand, pt)) {
            hi = {cand, kInf, 0.0};
            hi_valid = false;
            continue;
        }
        remember(pt);
        if (!sufficient(pt) || pt.f >= lo.f) {
            hi = pt;
            hi_valid = true;
            continue;
        }
        if (curvature(pt)) {
            accept(pt);
            return out;
        }
        if (pt.dd * (hi.a - lo.a) >= 0.0) {
            hi = lo;
            hi_valid = true;
        }
        lo = pt;
    }

    // curvature never satisfied within budget; fall back to the best
    // sufficient-decrease point so accepted steps still strictly descend
    if (have_best) {
        out.alpha = best.a;
        out.f = best.f;
        out.x = best_x;
        out.g = best_g;
        out.ok = true;
    }
    return out;
}

}  // namespace

MinimizeResult cg_minimize(const ObjectiveFn& fn, Eigen::VectorXd x0, const MinimizeOptions& opt) {
    MinimizeResult res;
    Eigen::VectorXd g(x0.size());
    double f = fn(x0, g);
    if (!std::isfinite(f)) throw std::invalid_argument("cg_minimize: invalid starting point");
    Eigen::VectorXd x = std::move(x0);
    res.f_history.push_back(f);

    Eigen::VectorXd dir = -g;
    bool steepest = true;
    double prev_drop = 0.0;
    res.termination = "max-iters";
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol_rel * (1.0 + std::abs(f))) {
            res.termination = "stationary";
            break;
        }
        if (g.dot(dir) >= 0.0) {
            dir = -g;
            steepest = true;
        }
        const double dphi = g.dot(dir);
        double a0 = 1.0;
        if (it == 0)
            a0 = std::min(1.0, 1.0 / (1.0 + g.norm()));
        else if (prev_drop > 0.0 && dphi < 0.0)
            a0 = std::clamp(2.0 * prev_drop / -dphi, 1e-12, 1e3);

        LineSearchOut ls =
            wolfe_line_search(fn, x, f, g, dir, opt.c1, opt.c2, opt.max_line_evals, a0);
        if (!ls.ok && !steepest) {
            dir = -g;
            steepest = true;
            ls = wolfe_line_search(fn, x, f, g, dir, opt.c1, opt.c2, opt.max_line_evals,
                                   std::min(1.0, 1.0 / (1.0 + g.norm())));
        }
        if (!ls.ok) {
            res.termination = "line-search-failed";
            break;
        }

        const double f_old = f;
        const Eigen::VectorXd g_old = g;
        x = ls.x;
        f = ls.f;
        g = ls.g;
        prev_drop = f_old - f;
        res.f_history.push_back(f);
        if (opt.observer) opt.observer(x, f);
        if (std::abs(f - f_old) / std::max(std::abs(f), 1e-300) < opt.rel_tol) {
            res.termination = "converged";
            ++it;
            break;
        }
        const double beta_pr = std::max(0.0, g.dot(g - g_old) / g_old.squaredNorm());
        dir = -g + beta_pr * dir;
        steepest = beta_pr == 0.0;
    }
    res.x = std::move(x);
    res.grad = std::move(g);
    res.f = f;
    res.iterations = it;
    return res;
}

MinimizeResult bfgs_minimize(const ObjectiveFn& fn, Eigen::VectorXd x0,
                             const MinimizeOptions& opt) {
    MinimizeResult res;
    const Eigen::Index n = x0.size();
    Eigen::VectorXd g(n);
    double f = fn(x0, g);
    if (!std::isfinite(f)) throw std::invalid_argument("bfgs_minimize: invalid starting point");
    Eigen::VectorXd x = std::move(x0);
    res.f_history.push_back(f);

    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    bool first_update = true;
    res.termination = "max-iters";
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol_rel * (1.0 + std::abs(f))) {
            res.termination = "stationary";
            break;
        }
        Eigen::VectorXd dir = -h * g;
        bool steepest = false;
        if (g.dot(dir) >= -1e-16 * g.norm() * dir.norm()) {
            h.setIdentity();
            dir = -g;
            steepest = true;
        }
        const double a0 = first_update ? std::min(1.0, 1.0 / (1.0 + g.norm())) : 1.0;
        LineSearchOut ls =
            wolfe_line_search(fn, x, f, g, dir, opt.c1, opt.c2, opt.max_line_evals, a0);
        if (!ls.ok && !steepest) {
            h.setIdentity();
            dir = -g;
            ls = wolfe_line_search(fn, x, f, g, dir, opt.c1, opt.c2, opt.max_line_evals,
                                   std::min(1.0, 1.0 / (1.0 + g.norm())));
        }
        if (!ls.ok) {
            res.termination = "line-search-failed";
            break;
        }

        const Eigen::VectorXd s = ls.x - x;
        const Eigen::VectorXd y = ls.g - g;
        const double f_old = f;
        x = ls.x;
        f = ls.f;
        g = ls.g;
        res.f_history.push_back(f);
        if (opt.observer) opt.observer(x, f);
        if (std::abs(f - f_old) / std::max(std::abs(f), 1e-300) < opt.rel_tol) {
            res.termination = "converged";
            ++it;
            break;
        }

        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            if (first_update) {
                h *= sy / y.squaredNorm();
                first_update = false;
            }
            const double rho = 1.0 / sy;
            const Eigen::VectorXd hy = h * y;
            h -= rho * (hy * s.transpose() + s * hy.transpose());
            h += (rho * rho * y.dot(hy) + rho) * s * s.transpose();
        }
        // else: curvature condition violated; keep the previous approximation
    }
    res.x = std::move(x);
    res.grad = std::move(g);
    res.f = f;
    res.iterations = it;
    return res;
}

// ---------------------------------------------------------------------------

namespace {

std::pair<MixtureModel, FitTrace> packed_fit(const Dataset& data, const MixtureModel& init,
                                             double tol, int max_iters, const GradFitOptions& opt,
                                             bool use_bfgs) {
    data.validate();
    init.validate();
    if (!(tol > 0.0)) throw std::invalid_argument("gradient fit: tol must be > 0");
    const PackedParams p0 = pack(init);
    const int k = p0.k;
    const int d = p0.d;

    const double data_scale = std::sqrt(std::max(default_ridge(data) * 1e6, 1e-30));
    const double diag_floor = 1e-8 * data_scale;

    const ObjectiveFn objective = [&, k, d](const Eigen::VectorXd& v,
                                            Eigen::VectorXd& grad) -> double {
        const PackedParams p{k, d, v};
        if (min_abs_factor_diagonal(p) < diag_floor) return kInf;
        try {
            auto [f, g] = neg_loglik_and_grad(p, data);
            grad = g;
            return f;
        } catch (const FactorizationError&) {
            return kInf;
        }
    };

    FitTrace trace;
    using clock = std::chrono::steady_clock;
    auto last = clock::now();
    int iter = 0;
    auto observer = [&](const Eigen::VectorXd& v, double f) {
        const auto now = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - last).count();
        last = now;
        trace.add(iter++, 1.0, -f, ms, unpack(PackedParams{k, d, v}));
        ++trace.e_steps;
        ++trace.m_steps;
    };

    MinimizeOptions mopt;
    mopt.max_iters = max_iters;
    mopt.rel_tol = tol;
    mopt.c2 = use_bfgs ? 0.9 : 0.1;
    mopt.max_line_evals = opt.max_line_evals;
    mopt.grad_tol_rel = opt.grad_tol_rel;
    mopt.observer = observer;

    const MinimizeResult r = use_bfgs ? bfgs_minimize(objective, p0.values, mopt)
                                      : cg_minimize(objective, p0.values, mopt);
    MixtureModel final_model = unpack(PackedParams{k, d, r.x});
    if (trace.records.empty())
        trace.add(0, 1.0, -r.f, 0.0, final_model);
    trace.termination = r.termination;
    return {std::move(final_model), std::move(trace)};
}

}  // namespace

std::pair<MixtureModel, FitTrace> ecg_fit(const Dataset& data, const MixtureModel& init,
                                          double tol, int max_iters, const GradFitOptions& opt) {
    return packed_fit(data, init, tol, max_iters, opt, /*use_bfgs=*/false);
}

std::pair<MixtureModel, FitTrace> bfgs_fit(const Dataset& data, const MixtureModel& init,
                                           double tol, int max_iters, const GradFitOptions& opt) {
    return packed_fit(data, init, tol, max_iters, opt, /*use_bfgs=*/true);
}

}  // namespace mixfit
