#include <random>

#include <benchmark/benchmark.h>

#include "cpg/catalog.hpp"
#include "cpg/loss.hpp"
#include "cpg/model.hpp"
#include "cpg/tensor.hpp"

namespace {

cpg::ModelConfig tiny_config() {
  cpg::ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.text_layers = 1;
  c.cross_encoder_layers = 1;
  c.decoder_layers = 1;
  c.n_queries = 8;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  cpg::Graph g(false);
  std::mt19937_64 rng(7);
  auto a = cpg::Tensor::randn({n, n}, rng, 1.0);
  auto b = cpg::Tensor::randn({n, n}, rng, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(g.matmul(a, b).vec().data());
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_ModelForward(benchmark::State& state) {
  cpg::GeneratorConfig gc;
  gc.n_records = 1;
  gc.n_brands = 4;
  auto brands = cpg::gen_brand_universe(gc);
  auto records = cpg::generate_catalog(gc, brands);
  auto cap = cpg::craft_caption(records[0].brand_name, records[0].title_tokens,
                                gc.lexicon);
  cpg::CpgModel model(tiny_config(), cpg::Vocab::build({cap}));
  auto ids = model.vocab().encode(cap);
  auto image = cpg::image_to_tensor(records[0]);
  for (auto _ : state) {
    cpg::Graph g(false);
    benchmark::DoNotOptimize(model.forward(g, ids, image).boxes.vec().data());
  }
}
BENCHMARK(BM_ModelForward);

void BM_Hungarian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (auto& row : cost)
    for (auto& v : row) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(cpg::hungarian(cost));
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(32)->Arg(64);

void BM_RenderRecord(benchmark::State& state) {
  cpg::GeneratorConfig gc;
  gc.n_brands = 4;
  auto brands = cpg::gen_brand_universe(gc);
  for (auto _ : state)
    benchmark::DoNotOptimize(cpg::render_record(brands[0], gc, 0).image.data());
}
BENCHMARK(BM_RenderRecord);

}  // namespace

BENCHMARK_MAIN();
