#include <benchmark/benchmark.h>

#include <random>

#include "uspg/losses.hpp"
#include "uspg/recon_net.hpp"
#include "uspg/splat.hpp"
#include "uspg/tape.hpp"

namespace {

using namespace uspg;

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t{s};
  for (int i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

GaussianSet random_scene(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::normal_distribution<double> g(0.0, 1.0);
  GaussianSet s = GaussianSet::create(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      s.positions.at(i, k) = u(rng);
      s.log_scales.at(i, k) = -3.0 + 0.3 * g(rng);
    }
    for (int k = 0; k < 4; ++k) s.rotations.at(i, k) = g(rng);
    s.opacity_logits[i] = g(rng);
    s.colors[i] = g(rng);
  }
  s.renormalize_rotations();
  return s;
}

Camera test_camera() {
  Camera c;
  c.fx = c.fy = 38.0;
  c.cx = c.cy = 15.5;
  c.height = c.width = 32;
  c.world_to_cam.t = Vec3(0, 0, 2.2);
  return c;
}

void BM_Conv2d(benchmark::State& state) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor(Shape{41, 32, 32}, rng);
  const Tensor w = random_tensor(Shape{16, 41, 3, 3}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w));
}
BENCHMARK(BM_Conv2d);

void BM_Rasterize(benchmark::State& state) {
  std::mt19937_64 rng(7);
  const GaussianSet s = random_scene(static_cast<int>(state.range(0)), rng);
  const Camera cam = test_camera();
  for (auto _ : state) benchmark::DoNotOptimize(rasterize(s, cam));
}
BENCHMARK(BM_Rasterize)->Arg(16)->Arg(64);

void BM_RasterizeBackward(benchmark::State& state) {
  std::mt19937_64 rng(7);
  const GaussianSet s = random_scene(64, rng);
  const Camera cam = test_camera();
  const Tensor up = random_tensor(Shape{32, 32}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(rasterize_backward(s, cam, up));
}
BENCHMARK(BM_RasterizeBackward);

void BM_ReconForward(benchmark::State& state) {
  std::mt19937_64 rng(7);
  const ReconNetParams p = init_recon_params(7);
  const Tensor short_in = random_tensor(Shape{41, 32, 32}, rng, 0.0, 1.0);
  const Tensor long_in = random_tensor(Shape{34, 32, 32}, rng, 0.0, 1.0);
  for (auto _ : state) {
    Tape t;
    ReconNetVars v = register_recon_params(t, p);
    Var lf = recon_long_feature(t, v, t.constant(long_in));
    benchmark::DoNotOptimize(recon_forward(t, v, t.constant(short_in), lf, 0.5));
  }
}
BENCHMARK(BM_ReconForward);

void BM_SsimBackward(benchmark::State& state) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(Shape{32, 32}, rng, 0.0, 1.0);
  const Tensor b = random_tensor(Shape{32, 32}, rng, 0.0, 1.0);
  LossConfig cfg;
  for (auto _ : state) {
    Tape t;
    Var loss = l1_dssim(t, t.param(a), t.param(b), cfg);
    t.backward(loss);
    benchmark::DoNotOptimize(t.grad(loss));
  }
}
BENCHMARK(BM_SsimBackward);

}  // namespace

BENCHMARK_MAIN();
