#include <benchmark/benchmark.h>

#include "mrtlmm/lmm.hpp"
#include "mrtlmm/replicate.hpp"
#include "mrtlmm/simulate.hpp"

using namespace mrtlmm;

namespace {

DesignBundle gm_bundle(int gm, int n, int T) {
    SimConfig cfg;
    cfg.gm = gm;
    cfg.n = n;
    cfg.T = T;
    cfg.seed = 7;
    return build_design(simulate_gm(cfg), gm_model_spec(gm));
}

void BM_Simulate(benchmark::State& state) {
    SimConfig cfg;
    cfg.gm = 1;
    cfg.n = static_cast<int>(state.range(0));
    cfg.T = 30;
    for (auto _ : state) {
        cfg.seed++;
        benchmark::DoNotOptimize(simulate_gm(cfg));
    }
}
BENCHMARK(BM_Simulate)->Arg(100)->Arg(200);

void BM_DevianceEval(benchmark::State& state) {
    const auto b = gm_bundle(static_cast<int>(state.range(0)), 200, 30);
    const ProfiledModel pm(b);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(pm.theta_dim(), 0.8);
    for (auto _ : state) benchmark::DoNotOptimize(pm.eval(theta, Objective::REML).deviance);
}
BENCHMARK(BM_DevianceEval)->Arg(1)->Arg(2);

void BM_Fit(benchmark::State& state) {
    const auto b = gm_bundle(static_cast<int>(state.range(0)), 100, 30);
    for (auto _ : state) benchmark::DoNotOptimize(fit(b, Objective::REML));
}
BENCHMARK(BM_Fit)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Satterthwaite(benchmark::State& state) {
    const auto b = gm_bundle(1, 100, 30);
    const auto fr = fit(b, Objective::REML);
    for (auto _ : state) benchmark::DoNotOptimize(satterthwaite_ci(fr, b));
}
BENCHMARK(BM_Satterthwaite)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
