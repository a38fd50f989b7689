#include <doctest.h>

#include <cmath>

#include "mixfit/anneal.hpp"
#include "mixfit/diagnostics.hpp"
#include "mixfit/metrics.hpp"
#include "mixfit/harness.hpp"
#include "test_util.hpp"

using namespace mixfit;
using testutil::two_component_1d;

namespace {

// independent top-eigenpair oracle: power iteration on the weighted covariance
std::pair<Eigen::VectorXd, double> power_iteration_oracle(const Dataset& data,
                                                          const Eigen::VectorXd& weights) {
    const int d = data.dim();
    const double total = weights.sum();
    const Eigen::VectorXd mean = data.points.transpose() * weights / total;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        const Eigen::VectorXd delta = data.points.row(t).transpose() - mean;
        cov += weights(t) * delta * delta.transpose();
    }
    cov /= total;

    Eigen::VectorXd v = Eigen::VectorXd::Ones(d).normalized();
    for (int it = 0; it < 5000; ++it) v = (cov * v).normalized();
    return {v, v.dot(cov * v)};
}

}  // namespace

namespace {

void check_schedule(const AnnealSchedule& got, const std::vector<double>& want) {
    REQUIRE(got.betas.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(got.betas[i] == doctest::Approx(want[i]).epsilon(1e-12));
    CHECK(got.betas.back() == 1.0);  // exactly, not approximately
}

}  // namespace

TEST_CASE("hybrid_schedule layouts") {
    check_schedule(hybrid_schedule(0.8, 1.2, 2, 1), {0.8, 1.0, 1.2, 1.0});
    check_schedule(hybrid_schedule(0.2, 1.2, 5, 1), {0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.0});
    CHECK(hybrid_schedule(1.0, 1.0, 1, 1).betas == std::vector<double>{1.0});
    check_schedule(hybrid_schedule(0.5, 2.0, 3, 2), {0.5, 1.0, 1.5, 2.0, 1.5, 1.0});

    CHECK_THROWS_AS(hybrid_schedule(0.0, 1.2, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(hybrid_schedule(1.1, 1.2, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(hybrid_schedule(0.8, 0.9, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(hybrid_schedule(0.8, 1.2, 0, 1), std::invalid_argument);
}

TEST_CASE("schedule validation") {
    AnnealSchedule s;
    s.betas = {0.8, 1.2};
    s.final_stage_exact = true;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.final_stage_exact = false;
    CHECK_NOTHROW(s.validate());
    s.betas = {};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("principal_axis") {
    SUBCASE("axis-aligned 2-D data") {
        Eigen::MatrixXd pts(4, 2);
        pts << -2, 0, -1, 0, 1, 0, 2, 0;
        const auto [axis, value] = principal_axis(Dataset(pts), Eigen::VectorXd::Ones(4));
        CHECK(axis(0) == doctest::Approx(1.0));
        CHECK(std::abs(axis(1)) < 1e-12);
        CHECK(value == doctest::Approx(2.5));
    }

    SUBCASE("isotropic sample has unit-ish eigenvalue, any direction") {
        Rng rng(5);
        Eigen::MatrixXd pts(5000, 2);
        for (int t = 0; t < 5000; ++t)
            for (int i = 0; i < 2; ++i) pts(t, i) = rng.normal();
        const auto [axis, value] = principal_axis(Dataset(pts), Eigen::VectorXd::Ones(5000));
        CHECK(axis.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(value == doctest::Approx(1.0).epsilon(0.1));
    }

    SUBCASE("random weighted instance matches the power-iteration oracle") {
        Rng rng(13);
        const Dataset data = testutil::random_dataset(rng, 20, 3);
        Eigen::VectorXd w(20);
        for (int t = 0; t < 20; ++t) w(t) = rng.uniform() + 0.01;
        const auto [axis, value] = principal_axis(data, w);
        const auto [oracle_axis, oracle_value] = power_iteration_oracle(data, w);
        CHECK(value == doctest::Approx(oracle_value).epsilon(1e-8));
        CHECK(std::abs(std::abs(axis.dot(oracle_axis)) - 1.0) < 1e-8);  // up to sign
    }

    SUBCASE("rejects zero and negative weights") {
        Rng rng(1);
        const Dataset data = testutil::random_dataset(rng, 10, 2);
        CHECK_THROWS_AS(principal_axis(data, Eigen::VectorXd::Zero(10)), std::invalid_argument);
        Eigen::VectorXd w = Eigen::VectorXd::Ones(10);
        w(3) = -0.5;
        CHECK_THROWS_AS(principal_axis(data, w), std::invalid_argument);
    }
}

TEST_CASE("perturb_means") {
    Rng rng(21);
    const MixtureModel model = testutil::random_model(rng, 2, 2);
    const Dataset data = sample_mixture(model, 300, 3);
    const Responsibilities resp = tempered_e_step(data, model, 1.0);

    SUBCASE("epsilon = 0 returns the model unchanged") {
        PerturbPolicy policy{0.0, PerturbWhen::AfterEachBetaChange};
        const MixtureModel out = perturb_means(model, resp, data, policy, std::uint64_t{9});
        for (int j = 0; j < 2; ++j)
            CHECK((out.components[j].mean - model.components[j].mean).norm() == 0.0);
    }

    SUBCASE("fixed seed reproduces bit-identically; weights and covariances untouched") {
        PerturbPolicy policy{0.05, PerturbWhen::AfterEachBetaChange};
        const MixtureModel a = perturb_means(model, resp, data, policy, std::uint64_t{7});
        const MixtureModel b = perturb_means(model, resp, data, policy, std::uint64_t{7});
        for (int j = 0; j < 2; ++j) {
            CHECK((a.components[j].mean - b.components[j].mean).norm() == 0.0);
            CHECK((a.components[j].mean - model.components[j].mean).norm() > 0.0);
            CHECK((a.components[j].covariance - model.components[j].covariance).norm() == 0.0);
        }
        CHECK((a.weights - model.weights).norm() == 0.0);
    }

    SUBCASE("identical duplicated components split after perturbation") {
        MixtureModel dup = two_component_1d(0.5, 0.0, 0.0, 1.0);
        const Dataset pts = sample_mixture(two_component_1d(0.5, -2.0, 2.0, 1.0), 400, 17);
        const Responsibilities r = tempered_e_step(pts, dup, 1.0);
        PerturbPolicy policy{0.05, PerturbWhen::AfterEachBetaChange};
        const MixtureModel out = perturb_means(dup, r, pts, policy, std::uint64_t{123});
        CHECK(out.components[0].mean(0) != out.components[1].mean(0));
        // distinct responsibilities follow once the means differ
        const Responsibilities after = tempered_e_step(pts, out, 1.2);
        CHECK((after.values.col(0) - after.values.col(1)).cwiseAbs().maxCoeff() > 1e-6);
    }
}

TEST_CASE("anneal_fit with schedule [1] reproduces em_fit iterate-for-iterate") {
    Rng rng(33);
    const MixtureModel truth = testutil::random_model(rng, 2, 1);
    const Dataset data = sample_mixture(truth, 800, 19);
    const MixtureModel init = init_model(data, 2, 5);

    AnnealSchedule schedule;
    schedule.betas = {1.0};
    schedule.inner_tol = 1e-8;
    schedule.inner_max_iters = 60;
    PerturbPolicy never{0.05, PerturbWhen::Never};

    const auto em = em_fit(data, init, 1e-8, 60);
    const auto anneal = anneal_fit(data, 2, schedule, never, init, 99);

    REQUIRE(em.second.records.size() == anneal.second.records.size());
    for (std::size_t i = 0; i < em.second.records.size(); ++i) {
        CHECK(em.second.records[i].log_likelihood == anneal.second.records[i].log_likelihood);
        for (int j = 0; j < 2; ++j)
            CHECK((em.second.iterates[i].components[j].mean -
                   anneal.second.iterates[i].components[j].mean)
                      .cwiseAbs()
                      .maxCoeff() == 0.0);
    }
}

TEST_CASE("anneal_fit beats EM at equal budget on the unbalanced config (mean of seeds)") {
    const MixtureModel truth = two_component_1d(0.025, -5.0, 5.0, 6.25);
    AnnealSchedule schedule = hybrid_schedule(0.8, 1.2, 2, 1);
    schedule.inner_tol = 1e-6;
    schedule.inner_max_iters = 500;
    PerturbPolicy policy{0.05, PerturbWhen::AfterEachBetaChange};

    double anneal_sum = 0.0, em_sum = 0.0;
    for (int seed = 0; seed < 3; ++seed) {
        const Dataset data = sample_mixture(truth, 10000, split_seed(71, seed));
        const MixtureModel init = init_model(data, 2, split_seed(3, seed));
        const auto [anneal_model, anneal_trace] =
            anneal_fit(data, 2, schedule, policy, init, split_seed(13, seed));
        const int budget = std::max(1, anneal_trace.e_steps - 1);
        const auto [em_model, em_trace] = em_fit(data, init, 1e-12, budget);
        anneal_sum += param_error(anneal_model, truth);
        em_sum += param_error(em_model, truth);
    }
    CHECK(anneal_sum < em_sum);
    CHECK(anneal_sum / 3.0 < 0.5);
}

TEST_CASE("the beta=1.2 stage shrinks the max pairwise overlap vs the beta=1.0 stage") {
    const MixtureModel truth = two_component_1d(0.025, -5.0, 5.0, 6.25);
    const Dataset data = sample_mixture(truth, 4000, 23);
    const MixtureModel init = init_model(data, 2, 29);

    AnnealSchedule schedule = hybrid_schedule(0.8, 1.2, 2, 1);
    schedule.inner_max_iters = 300;
    PerturbPolicy policy{0.05, PerturbWhen::AfterEachBetaChange};
    const auto [model, trace] = anneal_fit(data, 2, schedule, policy, init, 31);

    // stage-final models: last record of the beta=1.0 stage and of the beta=1.2 stage
    MixtureModel at_10, at_12;
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        if (trace.records[i].beta == 1.0 && (i + 1 == trace.records.size() ||
                                             trace.records[i + 1].beta == 1.2))
            at_10 = trace.iterates[i];
        if (trace.records[i].beta == 1.2 && (i + 1 == trace.records.size() ||
                                             trace.records[i + 1].beta != 1.2))
            at_12 = trace.iterates[i];
    }
    REQUIRE(at_10.size() == 2);
    REQUIRE(at_12.size() == 2);

    auto max_pairwise = [&](const MixtureModel& m) {
        const OverlapMatrix om = overlap_matrix(data, m, 1.0);
        double out = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                if (i != j) out = std::max(out, om.entries(i, j));
        return out;
    };
    CHECK(max_pairwise(at_12) < max_pairwise(at_10));
}

TEST_CASE("final beta=1 stage log-likelihood is non-decreasing") {
    const MixtureModel truth = two_component_1d(0.1, -4.0, 4.0, 4.0);
    const Dataset data = sample_mixture(truth, 2000, 41);
    const MixtureModel init = init_model(data, 2, 47);

    AnnealSchedule schedule = hybrid_schedule(0.8, 1.2, 2, 1);
    schedule.inner_max_iters = 200;
    PerturbPolicy policy{0.05, PerturbWhen::AfterEachBetaChange};
    const auto [model, trace] = anneal_fit(data, 2, schedule, policy, init, 53);

    // locate the final stage (last run of records with beta == 1)
    std::size_t start = trace.records.size();
    for (std::size_t i = trace.records.size(); i-- > 0;) {
        if (trace.records[i].beta != 1.0) break;
        start = i;
    }
    REQUIRE(start < trace.records.size());
    for (std::size_t i = start + 1; i < trace.records.size(); ++i) {
        const double prev = trace.records[i - 1].log_likelihood;
        const double cur = trace.records[i].log_likelihood;
        CHECK(cur >= prev - 1e-9 * std::max(1.0, std::abs(cur)));
    }
    CHECK(trace.records.front().iteration == 0);
    for (std::size_t i = 1; i < trace.records.size(); ++i)
        CHECK(trace.records[i].iteration == trace.records[i - 1].iteration + 1);
}
