#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mixfit/dataset_io.hpp"
#include "mixfit/diagnostics.hpp"
#include "mixfit/harness.hpp"
#include "mixfit/parallel.hpp"

namespace {

Eigen::VectorXd parse_grid(const std::string& spec) {
    // "min:max:steps" inclusive
    double lo, hi;
    int steps;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%d", &lo, &hi, &steps) != 3 || steps < 2)
        throw CLI::ValidationError("grid", "expected min:max:steps with steps >= 2");
    Eigen::VectorXd grid(steps);
    for (int i = 0; i < steps; ++i) grid(i) = lo + (hi - lo) * i / (steps - 1);
    return grid;
}

void write_text(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "mixfit: Gaussian-mixture fitting with plain, anti-annealed, and gradient-based "
        "optimizers, convergence diagnostics, and a variational DP mixture"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads, "OpenMP thread count (0 keeps the runtime default)");

    // --- generate
    auto* gen = app.add_subcommand("generate", "Sample a dataset from a mixture model file");
    std::string gen_model, gen_out;
    long gen_n = 0;
    std::uint64_t gen_seed = 0;
    bool gen_binary = false;
    gen->add_option("--model", gen_model, "mixture model JSON")->required();
    gen->add_option("--n", gen_n, "number of points")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->add_flag("--binary", gen_binary, "write the binary dataset format");

    // --- fit
    auto* fit = app.add_subcommand("fit", "Run a configured experiment");
    std::string fit_config, fit_out;
    std::uint64_t fit_seed = 0;
    bool fit_seed_set = false;
    fit->add_option("--config", fit_config, "experiment config file")->required();
    fit->add_option("--out", fit_out, "override the output directory");
    fit->add_option("--seed", fit_seed, "override the master seed")
        ->each([&](const std::string&) { fit_seed_set = true; });

    // --- diagnose
    auto* diag = app.add_subcommand(
        "diagnose", "Condition-number sweep, or a log-likelihood surface slice with --surface");
    std::string diag_out = "-", diag_alphas = "0.025,0.1,0.5,0.9,0.975";
    mixfit::ConditionSweepConfig sweep;
    bool surface = false;
    std::string surf_model, surf_data, mu1_spec = "-15:15:61", mu2_spec = "-15:15:61";
    diag->add_option("--out", diag_out, "output CSV path ('-' for stdout)");
    diag->add_option("--alphas", diag_alphas, "comma-separated alpha_1 sweep values");
    diag->add_option("--mu1", sweep.mu1, "first component mean");
    diag->add_option("--mu2", sweep.mu2, "second component mean");
    diag->add_option("--var", sweep.var, "shared component variance");
    diag->add_option("--n", sweep.n, "sample size per sweep point");
    diag->add_option("--seed", sweep.seed, "sweep seed");
    diag->add_option("--beta", sweep.beta, "temperature for the overlap column");
    diag->add_flag("--rate", sweep.with_rate, "also estimate the empirical EM rate (slow)");
    diag->add_flag("--surface", surface, "emit a (mu1, mu2) log-likelihood grid instead");
    diag->add_option("--model", surf_model, "surface: 2-component 1-D template model JSON");
    diag->add_option("--data", surf_data, "surface: dataset path");
    diag->add_option("--mu1-grid", mu1_spec, "surface: min:max:steps");
    diag->add_option("--mu2-grid", mu2_spec, "surface: min:max:steps");

    // --- bench
    auto* bench = app.add_subcommand("bench", "Four-algorithm comparison at matched budgets");
    std::string bench_config;
    bench->add_option("--config", bench_config, "experiment config file")->required();

    // --- dpmm
    auto* dpmm = app.add_subcommand("dpmm", "Variational DP mixture fit");
    std::string dpmm_config;
    dpmm->add_option("--config", dpmm_config, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);
    mixfit::par::set_threads(threads);

    try {
        if (*gen) {
            const mixfit::MixtureModel model = mixfit::read_model_json(gen_model);
            const mixfit::Dataset data = mixfit::sample_mixture(model, gen_n, gen_seed);
            if (gen_binary)
                mixfit::write_dataset_binary(data, gen_out);
            else
                mixfit::write_dataset_text(data, gen_out);
            std::cout << "wrote " << data.rows() << " points (d=" << data.dim() << ") to "
                      << gen_out << "\n";
        } else if (*fit) {
            mixfit::ExperimentConfig cfg = mixfit::load_config(fit_config);
            if (fit_seed_set) cfg.master_seed = fit_seed;
            if (!fit_out.empty()) cfg.output_dir = fit_out;
            std::cout << mixfit::run_experiment(cfg).dump(2) << "\n";
        } else if (*diag) {
            if (surface) {
                if (surf_model.empty() || surf_data.empty())
                    throw std::runtime_error("--surface needs --model and --data");
                const mixfit::MixtureModel tmpl = mixfit::read_model_json(surf_model);
                const mixfit::Dataset data = mixfit::read_dataset(surf_data);
                const Eigen::VectorXd g1 = parse_grid(mu1_spec);
                const Eigen::VectorXd g2 = parse_grid(mu2_spec);
                const Eigen::MatrixXd surf = mixfit::loglik_surface_slice(data, tmpl, g1, g2);
                std::string text = "mu1\\mu2";
                for (Eigen::Index j = 0; j < g2.size(); ++j)
                    text += "," + mixfit::format_double(g2(j));
                text += "\n";
                for (Eigen::Index i = 0; i < g1.size(); ++i) {
                    text += mixfit::format_double(g1(i));
                    for (Eigen::Index j = 0; j < g2.size(); ++j)
                        text += "," + mixfit::format_double(surf(i, j));
                    text += "\n";
                }
                write_text(diag_out, text);
            } else {
                sweep.alphas.clear();
                std::stringstream ss(diag_alphas);
                std::string tok;
                while (std::getline(ss, tok, ',')) sweep.alphas.push_back(std::stod(tok));
                write_text(diag_out, mixfit::condition_sweep_csv(sweep));
            }
        } else if (*bench) {
            std::cout << mixfit::run_bench(mixfit::load_config(bench_config)).dump(2) << "\n";
        } else if (*dpmm) {
            mixfit::ExperimentConfig cfg = mixfit::load_config(dpmm_config);
            cfg.algorithm = "dpmm";
            std::cout << mixfit::run_experiment(cfg).dump(2) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
