#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mixfit/hungarian.hpp"
#include "mixfit/metrics.hpp"
#include "test_util.hpp"

using namespace mixfit;
using testutil::two_component_1d;

namespace {

GaussianComponent scalar_component(double mu, double var) {
    return {Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, var)};
}

// numeric quadrature of D_KL(p, q) + D_KL(q, p) for 1-D Gaussians (Simpson)
double symmetric_kl_quadrature(double mu1, double var1, double mu2, double var2) {
    auto log_pdf = [](double x, double mu, double var) {
        return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mu) * (x - mu) / var;
    };
    const double sd = std::sqrt(std::max(var1, var2));
    const double lo = std::min(mu1, mu2) - 14.0 * sd;
    const double hi = std::max(mu1, mu2) + 14.0 * sd;
    const int steps = 40000;  // even
    const double h = (hi - lo) / steps;
    double acc = 0.0;
    for (int i = 0; i <= steps; ++i) {
        const double x = lo + i * h;
        const double lp = log_pdf(x, mu1, var1);
        const double lq = log_pdf(x, mu2, var2);
        const double integrand = (std::exp(lp) - std::exp(lq)) * (lp - lq);
        const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * integrand;
    }
    return acc * h / 3.0;
}

double brute_force_matching(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("symmetric_kl_gaussian closed-form values") {
    SUBCASE("identical components give zero in any dimension") {
        Rng rng(2);
        for (int d : {1, 2, 3}) {
            const Eigen::MatrixXd cov = testutil::random_spd(rng, d);
            GaussianComponent c{rng.normal_vector(d), cov};
            CHECK(std::abs(symmetric_kl_gaussian(c, c)) < 1e-12);
        }
    }

    SUBCASE("mean-shift pair evaluates to 4.0") {
        const auto a = scalar_component(0.0, 6.25);
        const auto b = scalar_component(5.0, 6.25);
        CHECK(symmetric_kl_gaussian(a, b) == doctest::Approx(4.0).epsilon(1e-12));
    }

    SUBCASE("variance-ratio pair evaluates to 1.125") {
        const auto a = scalar_component(0.0, 1.0);
        const auto b = scalar_component(0.0, 4.0);
        CHECK(symmetric_kl_gaussian(a, b) == doctest::Approx(1.125).epsilon(1e-12));
    }

    SUBCASE("symmetry is exact and dimension mismatch throws") {
        Rng rng(4);
        const auto a = GaussianComponent{rng.normal_vector(2), testutil::random_spd(rng, 2)};
        const auto b = GaussianComponent{rng.normal_vector(2), testutil::random_spd(rng, 2)};
        CHECK(symmetric_kl_gaussian(a, b) ==
              doctest::Approx(symmetric_kl_gaussian(b, a)).epsilon(1e-14));
        const auto c = GaussianComponent{rng.normal_vector(3), testutil::random_spd(rng, 3)};
        CHECK_THROWS_AS(symmetric_kl_gaussian(a, c), std::invalid_argument);
    }
}

TEST_CASE("closed form agrees with numeric quadrature on random 1-D pairs") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const double mu1 = 3.0 * rng.normal();
        const double mu2 = 3.0 * rng.normal();
        const double var1 = 0.5 + 2.0 * rng.uniform();
        const double var2 = 0.5 + 2.0 * rng.uniform();
        const double closed =
            symmetric_kl_gaussian(scalar_component(mu1, var1), scalar_component(mu2, var2));
        const double quad = symmetric_kl_quadrature(mu1, var1, mu2, var2);
        CHECK(std::abs(closed - quad) < 1e-4 * std::max(1.0, std::abs(closed)));
        CHECK(closed >= 0.0);
    }
}

TEST_CASE("match_components") {
    Rng rng(16);

    SUBCASE("identity and reversal at zero cost") {
        const MixtureModel truth = testutil::random_model(rng, 3, 2);
        const ComponentMatching self = match_components(truth, truth);
        CHECK(self.total_cost == doctest::Approx(0.0).epsilon(1e-12));
        for (int j = 0; j < 3; ++j) CHECK(self.permutation[j] == j);

        MixtureModel reversed = truth;
        std::reverse(reversed.components.begin(), reversed.components.end());
        reversed.weights = truth.weights.reverse();
        const ComponentMatching rev = match_components(reversed, truth);
        CHECK(rev.total_cost == doctest::Approx(0.0).epsilon(1e-12));
        for (int j = 0; j < 3; ++j) CHECK(rev.permutation[j] == 2 - j);
    }

    SUBCASE("hungarian equals exhaustive search on random cost matrices") {
        for (int trial = 0; trial < 50; ++trial) {
            const int n = 2 + static_cast<int>(rng.below(5));  // up to 6
            Eigen::MatrixXd cost(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) cost(i, j) = 10.0 * rng.uniform();
            std::vector<int> assignment;
            const double got = solve_assignment(cost, assignment);
            CHECK(got == doctest::Approx(brute_force_matching(cost)).epsilon(1e-12));
            // assignment is a permutation
            std::vector<int> seen(n, 0);
            for (int i = 0; i < n; ++i) seen[assignment[i]] += 1;
            for (int i = 0; i < n; ++i) CHECK(seen[i] == 1);
        }
    }

    SUBCASE("matching through models equals exhaustive search on the KL costs") {
        for (int trial = 0; trial < 10; ++trial) {
            const int k = 2 + static_cast<int>(rng.below(5));
            const MixtureModel est = testutil::random_model(rng, k, 1);
            const MixtureModel truth = testutil::random_model(rng, k, 1);
            Eigen::MatrixXd cost(k, k);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                    cost(i, j) =
                        symmetric_kl_gaussian(est.components[i], truth.components[j]);
            CHECK(match_components(est, truth).total_cost ==
                  doctest::Approx(brute_force_matching(cost)).epsilon(1e-10));
        }
    }

    SUBCASE("unequal component counts match injectively") {
        const MixtureModel small = two_component_1d(0.5, -3.0, 3.0, 1.0);
        MixtureModel big;
        big.weights = Eigen::VectorXd::Constant(4, 0.25);
        for (double mu : {-3.0, 3.0, 9.0, 15.0})
            big.components.push_back({Eigen::VectorXd::Constant(1, mu),
                                      Eigen::MatrixXd::Constant(1, 1, 1.0)});
        const ComponentMatching m = match_components(big, small);
        int matched = 0;
        for (int j = 0; j < 4; ++j) matched += m.permutation[j] >= 0 ? 1 : 0;
        CHECK(matched == 2);
        CHECK(m.permutation[0] == 0);
        CHECK(m.permutation[1] == 1);
    }
}

TEST_CASE("param_error") {
    Rng rng(32);
    const MixtureModel truth = testutil::random_model(rng, 3, 2);
    CHECK(param_error(truth, truth) == doctest::Approx(0.0).epsilon(1e-12));

    SUBCASE("single-pair reduction") {
        MixtureModel a, b;
        a.weights = b.weights = Eigen::VectorXd::Ones(1);
        a.components = {scalar_component(0.0, 6.25)};
        b.components = {scalar_component(5.0, 6.25)};
        CHECK(param_error(a, b) == doctest::Approx(4.0).epsilon(1e-12));
    }

    SUBCASE("invariant under estimated-component relabeling") {
        const MixtureModel est = testutil::random_model(rng, 3, 2);
        const double base = param_error(est, truth);
        MixtureModel shuffled = est;
        std::swap(shuffled.components[0], shuffled.components[2]);
        std::swap(shuffled.weights(0), shuffled.weights(2));
        CHECK(param_error(shuffled, truth) == doctest::Approx(base).epsilon(1e-10));
    }
}
