#include <benchmark/benchmark.h>

#include "docrep/ops.hpp"
#include "docrep/rng.hpp"

using namespace docrep;

namespace {

Var<float> random_var(Shape shape, Rng& rng, bool grad = false) {
  Tensor<float> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<float>(rng.normal());
  return Var<float>(std::move(t), grad);
}

void BM_WindowedAttention(benchmark::State& state) {
  const auto S = state.range(0);
  const int window = static_cast<int>(state.range(1));
  Rng rng(1);
  auto q = random_var({S, 64}, rng), k = random_var({S, 64}, rng), v = random_var({S, 64}, rng);
  std::vector<std::uint8_t> mask(S, 1), global(S, 0);
  global[0] = 1;
  for (auto _ : state) {
    auto out = ops::windowed_attention(q, k, v, 4, window, mask, global);
    benchmark::DoNotOptimize(out.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * S);
}
BENCHMARK(BM_WindowedAttention)->Args({256, 32})->Args({1024, 32})->Args({4096, 32})->Args({1024, 128});

void BM_AttentionBackward(benchmark::State& state) {
  const auto S = state.range(0);
  Rng rng(2);
  auto q = random_var({S, 32}, rng, true), k = random_var({S, 32}, rng, true), v = random_var({S, 32}, rng, true);
  std::vector<std::uint8_t> mask(S, 1), global(S, 0);
  global[0] = 1;
  for (auto _ : state) {
    auto out = ops::windowed_attention(q, k, v, 2, 16, mask, global);
    backward(out);
    q.zero_grad();
    k.zero_grad();
    v.zero_grad();
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(256)->Arg(1024);

void BM_RoiMaxPool(benchmark::State& state) {
  const auto boxes = state.range(0);
  Rng rng(3);
  std::vector<Var<float>> maps{random_var({64, 24, 18}, rng), random_var({64, 24, 18}, rng)};
  std::vector<std::int64_t> index;
  std::vector<ops::Region> regions;
  for (std::int64_t i = 0; i < boxes; ++i) {
    const auto l = rng.range(0, 16), t = rng.range(0, 22);
    index.push_back(i % 2);
    regions.push_back({l, t, l + 1 + rng.range(0, 1), t + 1 + rng.range(0, 1)});
  }
  for (auto _ : state) {
    auto out = ops::roi_max_pool(maps, index, regions);
    benchmark::DoNotOptimize(out.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * boxes);
}
BENCHMARK(BM_RoiMaxPool)->Arg(128)->Arg(1024);

void BM_Conv2d(benchmark::State& state) {
  const auto side = state.range(0);
  const int cin = static_cast<int>(state.range(1)), cout = static_cast<int>(state.range(2));
  Rng rng(4);
  auto x = random_var({cin, side, side}, rng);
  auto w = random_var({cout, cin * 9}, rng), b = random_var({cout}, rng);
  for (auto _ : state) {
    auto out = ops::conv2d(x, w, b, 3, 2);
    benchmark::DoNotOptimize(out.value().data.data());
  }
}
BENCHMARK(BM_Conv2d)->Args({128, 3, 16})->Args({64, 16, 32})->Args({32, 32, 64});

}  // namespace
BENCHMARK_MAIN();
