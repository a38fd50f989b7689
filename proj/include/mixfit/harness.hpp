#pragma once

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mixfit/anneal.hpp"
#include "mixfit/types.hpp"

namespace mixfit {

// Component counts multinomial in the weights; points drawn through the
// Cholesky factor of the matched component. Bit-identical per (model, n, seed).
Dataset sample_mixture(const MixtureModel& model, Eigen::Index n, std::uint64_t seed);

// K distinct sample points as means (without replacement), uniform weights,
// every covariance set to the global data covariance plus the ridge.
MixtureModel init_model(const Dataset& data, int k, std::uint64_t seed, double ridge = kAutoRidge);

// Centers the data and projects onto the top-k covariance eigenvectors,
// with the principal_axis sign convention.
Dataset pca_project(const Dataset& data, int k);

struct ExperimentConfig {
    std::string algorithm = "em";  // em | anneal | ecg | bfgs | dpmm
    int k = 0;                     // mixture size for GMM algorithms
    int replications = 1;
    std::uint64_t master_seed = 0;
    std::string output_dir;

    double tol = 1e-10;
    int max_iters = 1000;
    double ridge = kAutoRidge;
    int em_init_iters = 5;  // EM warmup for ecg/bfgs starts
    int line_search_max_evals = 40;

    AnnealSchedule schedule{{1.0}};
    PerturbPolicy perturb;

    // dataset: either a generator model or a file path
    std::optional<MixtureModel> generator_model;
    Eigen::Index generator_n = 0;
    std::uint64_t generator_seed = 0;
    std::string data_path;
    int pca_components = 0;  // project file data onto this many PCA axes (0 = off)
    std::optional<MixtureModel> truth;  // known for generator data or via truth.model

    int truncation = 10;
    double concentration = 1.0;
    double mass_threshold = 1e-4;

    bool timing_wall = false;  // wall-clock columns are opt-in; default output is
                               // bit-reproducible for a fixed config and seed

    void validate() const;
};

// Key-value config file ('key = value', '#' comments). Relative paths resolve
// against the config file's directory.
ExperimentConfig parse_config_text(const std::string& text, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

// Runs algorithm replications with seeds derived from the master seed, writes
// run_###.csv per replication plus summary.json under output_dir, and returns
// the summary. max_iters_per_rep overrides the iteration budget per
// replication (used for budget-matched comparisons).
nlohmann::json run_experiment(const ExperimentConfig& config,
                              const std::vector<int>* max_iters_per_rep = nullptr);

// Four-algorithm comparison on one dataset: anneal, then em at the same
// per-replication E/M budget, then ecg and bfgs. Writes per-algorithm
// subdirectories and bench_summary.json.
nlohmann::json run_bench(const ExperimentConfig& config);

struct ConditionSweepConfig {
    std::vector<double> alphas = {0.025, 0.1, 0.5, 0.9, 0.975};
    double mu1 = 10.0;
    double mu2 = 0.0;
    double var = 9.0;
    Eigen::Index n = 20000;
    std::uint64_t seed = 1;
    double beta = 1.0;      // temperature for the overlap column
    bool with_rate = false;  // empirical EM rate is costly; off by default
};

// One row per alpha1: "alpha1,mu1,kappa,overlap,rate" at the true parameters.
std::string condition_sweep_csv(const ConditionSweepConfig& cfg);

}  // namespace mixfit
