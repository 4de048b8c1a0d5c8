// Reference (scalar) vs batched serial vs batched OpenMP rendering and
// gradients on one small field.

#include "mtn/reference.hpp"
#include "mtn/renderer.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace mtn;

struct Fixture {
  MultiScaleField field;
  CameraPose pose{30.0, 70.0, 2.5, 25.0};
  RenderOptions options;
  ImageAdjoint adjoint;

  Fixture() : field(make_config(), 7) {
    options.width = 32;
    options.height = 32;
    options.samples = 32;
    options.seed = 3;
    adjoint.d_rgb = Image(options.width, options.height, 3, 1e-3);
    for (auto& ref : field.parameters()) {
      if (ref.group == ParamGroup::kDecoder) continue;
      for (std::size_t i = 0; i < ref.values.size(); ++i) ref.values[i] = 0.3 * std::sin(0.7 * static_cast<double>(i));
    }
  }

  static FieldConfig make_config() {
    FieldConfig c;
    c.plane_resolution = {32, 64, 128};
    c.vector_resolution = 256;
    c.channels = 8;
    c.hidden_width = 32;
    return c;
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_RenderReference(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(reference::render_image(f.field, f.pose, 4, f.options));
}

void BM_Render(benchmark::State& state) {
  auto& f = fixture();
  RenderOptions opt = f.options;
  opt.parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_image(f.field, f.pose, 4, opt));
}

void BM_BackwardReference(benchmark::State& state) {
  auto& f = fixture();
  FieldGradients g = FieldGradients::zeros_like(f.field);
  for (auto _ : state) benchmark::DoNotOptimize(reference::render_backward(f.field, f.pose, 4, f.options, f.adjoint, g));
}

void BM_Backward(benchmark::State& state) {
  auto& f = fixture();
  RenderOptions opt = f.options;
  opt.parallel = state.range(0) != 0;
  FieldGradients g = FieldGradients::zeros_like(f.field);
  for (auto _ : state) benchmark::DoNotOptimize(render_backward(f.field, f.pose, 4, opt, f.adjoint, g));
}

}  // namespace

BENCHMARK(BM_RenderReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Render)->ArgName("openmp")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward)->ArgName("openmp")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
