#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "mixfit/dataset_io.hpp"
#include "mixfit/harness.hpp"
#include "mixfit/metrics.hpp"
#include "mixfit/mixture.hpp"
#include "test_util.hpp"

using namespace mixfit;
using testutil::two_component_1d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("mixfit_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("sample_mixture") {
    SUBCASE("single standard normal obeys the law of large numbers") {
        MixtureModel single;
        single.weights = Eigen::VectorXd::Ones(1);
        single.components = {{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)}};
        const Dataset data = sample_mixture(single, 100000, 7);
        const double mean = data.points.col(0).mean();
        const double var =
            (data.points.col(0).array() - mean).square().sum() / (data.rows() - 1);
        CHECK(std::abs(mean) < 4.0 / std::sqrt(100000.0));
        CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }

    SUBCASE("small-component count respects the binomial bound") {
        const MixtureModel truth = two_component_1d(0.025, -100.0, 100.0, 1.0);
        const Dataset data = sample_mixture(truth, 10000, 13);
        const int small = static_cast<int>((data.points.col(0).array() < 0.0).count());
        const double sd = std::sqrt(10000.0 * 0.025 * 0.975);
        CHECK(std::abs(small - 250.0) <= 4.0 * sd);
    }

    SUBCASE("identical seeds give bit-identical datasets") {
        Rng rng(1);
        const MixtureModel model = testutil::random_model(rng, 3, 2);
        const Dataset a = sample_mixture(model, 500, 99);
        const Dataset b = sample_mixture(model, 500, 99);
        CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
        const Dataset c = sample_mixture(model, 500, 100);
        CHECK((a.points - c.points).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("init_model") {
    Rng rng(3);
    const Dataset data = testutil::random_dataset(rng, 40, 2);

    SUBCASE("k = n uses every point exactly once") {
        const MixtureModel model = init_model(data, 40, 5);
        std::vector<int> used(40, 0);
        for (const auto& comp : model.components) {
            for (int t = 0; t < 40; ++t)
                if ((comp.mean - data.points.row(t).transpose()).norm() == 0.0) used[t] += 1;
        }
        for (int t = 0; t < 40; ++t) CHECK(used[t] == 1);
    }

    SUBCASE("deterministic per seed, uniform weights, shared global covariance") {
        const MixtureModel a = init_model(data, 3, 11);
        const MixtureModel b = init_model(data, 3, 11);
        for (int j = 0; j < 3; ++j) {
            CHECK((a.components[j].mean - b.components[j].mean).norm() == 0.0);
            CHECK(a.weights(j) == doctest::Approx(1.0 / 3.0));
        }

        // two-pass covariance oracle
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
        for (int t = 0; t < 40; ++t) mean += data.points.row(t).transpose();
        mean /= 40.0;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
        for (int t = 0; t < 40; ++t) {
            const Eigen::VectorXd delta = data.points.row(t).transpose() - mean;
            cov += delta * delta.transpose();
        }
        cov /= 39.0;
        cov += default_ridge(data) * Eigen::MatrixXd::Identity(2, 2);
        CHECK((a.components[0].covariance - cov).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((a.components[1].covariance - a.components[0].covariance).norm() == 0.0);
    }

    SUBCASE("k > n throws") { CHECK_THROWS_AS(init_model(data, 41, 1), std::invalid_argument); }
}

TEST_CASE("pca_project") {
    Rng rng(9);

    SUBCASE("k = d is an isometry up to centering") {
        const Dataset data = testutil::random_dataset(rng, 60, 3);
        const Dataset proj = pca_project(data, 3);
        for (int t = 1; t < 10; ++t) {
            const double want = (data.points.row(t) - data.points.row(0)).norm();
            const double got = (proj.points.row(t) - proj.points.row(0)).norm();
            CHECK(got == doctest::Approx(want).epsilon(1e-8));
        }
    }

    SUBCASE("rank-1 data reconstructs exactly from one component") {
        Eigen::MatrixXd pts(50, 3);
        const Eigen::VectorXd dir = Eigen::Vector3d(1.0, 2.0, -1.0).normalized();
        for (int t = 0; t < 50; ++t) pts.row(t) = (rng.normal() * 5.0) * dir.transpose();
        const Dataset proj = pca_project(Dataset(pts), 1);
        // all variance lives along the line, so the 1-D projection keeps it all
        Eigen::VectorXd along = pts * dir;
        along.array() -= along.mean();
        CHECK(proj.points.squaredNorm() == doctest::Approx(along.squaredNorm()).epsilon(1e-8));
    }

    SUBCASE("k out of range throws") {
        const Dataset data = testutil::random_dataset(rng, 20, 2);
        CHECK_THROWS_AS(pca_project(data, 0), std::invalid_argument);
        CHECK_THROWS_AS(pca_project(data, 3), std::invalid_argument);
    }
}

TEST_CASE("dataset text and binary round trips") {
    Rng rng(21);
    const fs::path dir = temp_dir("io");
    const Dataset data = testutil::random_dataset(rng, 37, 3);

    write_dataset_text(data, (dir / "d.txt").string());
    const Dataset text = read_dataset((dir / "d.txt").string());
    CHECK((text.points - data.points).cwiseAbs().maxCoeff() == 0.0);  // %.17g round trip

    write_dataset_binary(data, (dir / "d.bin").string());
    const Dataset bin = read_dataset((dir / "d.bin").string());
    CHECK((bin.points - data.points).cwiseAbs().maxCoeff() == 0.0);

    const MixtureModel model = testutil::random_model(rng, 2, 2);
    write_model_json(model, (dir / "m.json").string());
    const MixtureModel back = read_model_json((dir / "m.json").string());
    CHECK((back.weights - model.weights).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.components[0].covariance - model.components[0].covariance).norm() < 1e-15);
}

TEST_CASE("ingest_idx") {
    const fs::path dir = temp_dir("idx");

    SUBCASE("hand-built 2x2x2 fixture decodes to the known matrix") {
        // two 2x2 images: [0, 51, 102, 153] and [204, 255, 0, 255]
        const unsigned char bytes[] = {0, 0,   8,   3,            // magic: ubyte, rank 3
                                       0, 0,   0,   2,            // 2 items
                                       0, 0,   0,   2,            // 2 rows
                                       0, 0,   0,   2,            // 2 cols
                                       0, 51,  102, 153,          // image 0
                                       204, 255, 0,   255};       // image 1
        const fs::path p = dir / "img.idx";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes), sizeof(bytes));

        const Dataset data = ingest_idx(p.string());
        REQUIRE(data.rows() == 2);
        REQUIRE(data.dim() == 4);
        CHECK(data.points(0, 0) == doctest::Approx(0.0));
        CHECK(data.points(0, 1) == doctest::Approx(51.0 / 255.0));
        CHECK(data.points(0, 3) == doctest::Approx(153.0 / 255.0));
        CHECK(data.points(1, 0) == doctest::Approx(204.0 / 255.0));
        CHECK(data.points(1, 2) == doctest::Approx(0.0));
    }

    SUBCASE("bad magic reports the byte offset") {
        const unsigned char bytes[] = {7, 0, 8, 1, 0, 0, 0, 1, 42};
        const fs::path p = dir / "bad.idx";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
        try {
            ingest_idx(p.string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.byte_offset() == 0);
        }
    }

    SUBCASE("truncated payload reports where the data ended") {
        const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 4, 1, 2};  // promises 4, has 2
        const fs::path p = dir / "trunc.idx";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
        try {
            ingest_idx(p.string());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.byte_offset() == 10);
        }
    }
}

TEST_CASE("config parsing") {
    const std::string text =
        "# comment\n"
        "algorithm = anneal\n"
        "k = 2\n"
        "replications = 3\n"
        "master_seed = 42\n"
        "output = out\n"
        "schedule = 0.8 1.0 1.2 1.0\n"
        "inner_tol = 1e-6\n"
        "inner_max_iters = 200\n"
        "perturb.epsilon = 0.05\n"
        "perturb.when = after-each-beta-change\n"
        "generator.weights = 0.025 0.975\n"
        "generator.means = -5 5\n"
        "generator.vars = 6.25 6.25\n"
        "generator.n = 1000\n"
        "generator.seed = 7\n";
    const ExperimentConfig cfg = parse_config_text(text, ".");
    cfg.validate();
    CHECK(cfg.algorithm == "anneal");
    CHECK(cfg.k == 2);
    CHECK(cfg.replications == 3);
    CHECK(cfg.schedule.betas == std::vector<double>{0.8, 1.0, 1.2, 1.0});
    CHECK(cfg.schedule.inner_max_iters == 200);
    REQUIRE(cfg.generator_model.has_value());
    CHECK(cfg.generator_model->weights(0) == doctest::Approx(0.025));
    CHECK(cfg.truth.has_value());

    SUBCASE("triple schedule form expands through hybrid_schedule") {
        const ExperimentConfig c2 = parse_config_text(
            "algorithm = anneal\nk = 2\noutput = o\ngenerator.weights = 1\n"
            "generator.means = 0\ngenerator.vars = 1\ngenerator.n = 10\n"
            "schedule.beta_min = 0.8\nschedule.beta_max = 1.2\n"
            "schedule.steps_up = 2\nschedule.steps_down = 1\n");
        CHECK(c2.schedule.betas == std::vector<double>{0.8, 1.0, 1.2, 1.0});
    }

    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(parse_config_text("algorthm = em\n"), ParseError);
    }
}

TEST_CASE("run_experiment on a tiny EM fixture") {
    const fs::path dir = temp_dir("exp");
    ExperimentConfig cfg;
    cfg.algorithm = "em";
    cfg.k = 2;
    cfg.replications = 2;
    cfg.master_seed = 5;
    cfg.max_iters = 40;
    cfg.generator_model = two_component_1d(0.5, -6.0, 6.0, 1.0);
    cfg.generator_n = 300;
    cfg.generator_seed = 3;
    cfg.truth = cfg.generator_model;
    cfg.output_dir = (dir / "em").string();

    const nlohmann::json summary = run_experiment(cfg);
    CHECK(summary["schema_version"] == 1);
    CHECK(summary["runs"].size() == 2);
    CHECK(summary["aggregates"].contains("mean_final_error"));

    // log-likelihood column is non-decreasing in the CSV
    const std::string csv = slurp(dir / "em" / "run_000.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "iteration,beta,log_likelihood,err,elapsed_ms");
    double prev = -std::numeric_limits<double>::infinity();
    while (std::getline(lines, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const auto c3 = line.find(',', c2 + 1);
        const double ll = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
        CHECK(ll >= prev - 1e-9 * std::max(1.0, std::abs(ll)));
        prev = ll;
    }
}

TEST_CASE("run_experiment is byte-identical across invocations") {
    const fs::path dir = temp_dir("det");
    ExperimentConfig cfg;
    cfg.algorithm = "anneal";
    cfg.k = 2;
    cfg.replications = 2;
    cfg.master_seed = 11;
    cfg.schedule = hybrid_schedule(0.8, 1.2, 2, 1);
    cfg.schedule.inner_max_iters = 60;
    cfg.generator_model = two_component_1d(0.2, -5.0, 5.0, 4.0);
    cfg.generator_n = 400;
    cfg.generator_seed = 9;
    cfg.truth = cfg.generator_model;

    cfg.output_dir = (dir / "a").string();
    run_experiment(cfg);
    cfg.output_dir = (dir / "b").string();
    run_experiment(cfg);

    for (const auto& name : {"run_000.csv", "run_001.csv", "summary.json"})
        CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
}
