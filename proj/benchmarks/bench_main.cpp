#include <benchmark/benchmark.h>

#include "latshield/attack.hpp"
#include "latshield/facegen.hpp"
#include "latshield/metrics.hpp"
#include "latshield/nets.hpp"
#include "latshield/schedule.hpp"
#include "latshield/swapdefend.hpp"

using namespace latshield;

static Tensor random_tensor(std::vector<int> shape, uint64_t seed) {
    Rng rng(seed);
    int n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(n);
    for (double& x : v) x = rng.gaussian();
    return Tensor(std::move(shape), std::move(v), Dtype::f32);
}

static void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

static void BM_MatmulBackward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        Tape tape;
        Tensor ta = tape.leaf(a);
        Tensor loss = mse(matmul(ta, b), b);
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.grad(ta));
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

static void BM_Render(benchmark::State& state) {
    Rng rng(7);
    IdentityParams id = sample_identity(rng, 0);
    AttributeParams attr = sample_attributes(rng);
    for (auto _ : state) benchmark::DoNotOptimize(render(id, attr));
}
BENCHMARK(BM_Render);

static void BM_DenoiserForward(benchmark::State& state) {
    ModelBundle m = init_bundle(3);
    Tensor z = random_tensor({1, kLatentDim}, 4);
    Tensor c = random_tensor({1, kCondDim}, 5);
    for (auto _ : state) benchmark::DoNotOptimize(denoise_at(m, z, 100, 200, c));
}
BENCHMARK(BM_DenoiserForward);

static void BM_Sdedit(benchmark::State& state) {
    ModelBundle m = init_bundle(3);
    NoiseSchedule sched = make_linear_schedule(200, 1e-4, 0.02, 25);
    DenoiserFn den = make_denoiser(m, 200);
    Tensor z = random_tensor({1, kLatentDim}, 4);
    GuidanceParams g;
    for (auto _ : state) {
        Rng rng(9);
        benchmark::DoNotOptimize(sdedit(den, z, static_cast<int>(state.range(0)), std::nullopt, g,
                                        sched, rng));
    }
}
BENCHMARK(BM_Sdedit)->Arg(3)->Arg(15);

static void BM_Ssim(benchmark::State& state) {
    Rng rng(11);
    IdentityParams id = sample_identity(rng, 0);
    AttributeParams attr = sample_attributes(rng);
    Tensor a = render(id, attr);
    Tensor b = defend_blur(a, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

static void BM_Jpeg(benchmark::State& state) {
    Rng rng(12);
    IdentityParams id = sample_identity(rng, 0);
    AttributeParams attr = sample_attributes(rng);
    Tensor a = render(id, attr);
    for (auto _ : state) benchmark::DoNotOptimize(defend_jpeg(a, 75));
}
BENCHMARK(BM_Jpeg);

BENCHMARK_MAIN();
