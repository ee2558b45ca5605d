#include <benchmark/benchmark.h>

#include "cascadefuse/sim.hpp"

// Serial reference vs OpenMP evaluator on the default benchmark pool.

namespace {

using namespace cascadefuse;

sim::SyntheticPool& shared_pool() {
    static sim::SyntheticPool pool = [] {
        sim::SyntheticPool p = sim::default_pool(7);
        p.train_router(480, TrainConfig{0.004, 800, 0.0});
        return p;
    }();
    return pool;
}

const std::vector<sim::SyntheticQuery>& shared_dataset() {
    static std::vector<sim::SyntheticQuery> ds = shared_pool().make_queries(2000, "bench-");
    return ds;
}

void bench_serial(benchmark::State& state) {
    sim::Policy policy = sim::Policy::parse("hybrid+2");
    for (auto _ : state) {
        auto report = sim::evaluate_policy_serial(policy, shared_dataset(), shared_pool());
        benchmark::DoNotOptimize(report.sample_accuracy);
    }
}

void bench_parallel(benchmark::State& state) {
    sim::Policy policy = sim::Policy::parse("hybrid+2");
    for (auto _ : state) {
        auto report = sim::evaluate_policy(policy, shared_dataset(), shared_pool());
        benchmark::DoNotOptimize(report.sample_accuracy);
    }
}

}  // namespace

BENCHMARK(bench_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
