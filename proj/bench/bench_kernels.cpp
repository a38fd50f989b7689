#include <benchmark/benchmark.h>

#include "mixfit/harness.hpp"
#include "mixfit/mixture.hpp"
#include "mixfit/reference.hpp"

using namespace mixfit;

namespace {

MixtureModel bench_model(int k, int d) {
    MixtureModel m;
    m.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
    m.components.resize(k);
    for (int j = 0; j < k; ++j) {
        m.components[j].mean = Eigen::VectorXd::Constant(d, 3.0 * j);
        m.components[j].covariance = Eigen::MatrixXd::Identity(d, d) * (1.0 + 0.1 * j);
    }
    return m;
}

struct Fixture {
    MixtureModel model;
    Dataset data;
    Responsibilities resp;
};

Fixture make_fixture(int n, int k, int d) {
    Fixture f;
    f.model = bench_model(k, d);
    f.data = sample_mixture(f.model, n, 12345);
    f.resp = tempered_e_step(f.data, f.model, 1.0);
    return f;
}

void bm_estep_parallel(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) {
        auto out = e_step(f.data, f.model);
        benchmark::DoNotOptimize(out.log_likelihood);
    }
}

void bm_estep_serial_reference(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) {
        auto out = reference::responsibilities(f.data, f.model, 1.0);
        benchmark::DoNotOptimize(out.data());
    }
}

void bm_mstep_parallel(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) {
        auto out = m_step(f.data, f.resp, 1e-6);
        benchmark::DoNotOptimize(out.weights.data());
    }
}

void bm_mstep_serial_reference(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) {
        auto out = reference::m_step(f.data, f.resp.values, 1e-6);
        benchmark::DoNotOptimize(out.weights.data());
    }
}

void bm_loglik_parallel(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) benchmark::DoNotOptimize(log_likelihood(f.data, f.model));
}

void bm_loglik_serial_reference(benchmark::State& state) {
    const auto f = make_fixture(static_cast<int>(state.range(0)), 4, 2);
    for (auto _ : state) benchmark::DoNotOptimize(reference::log_likelihood(f.data, f.model));
}

}  // namespace

BENCHMARK(bm_estep_parallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_estep_serial_reference)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_mstep_parallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_mstep_serial_reference)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_loglik_parallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_loglik_serial_reference)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
