#include <benchmark/benchmark.h>

#include <vector>

#include "cnnbp/cnn.hpp"
#include "cnnbp/deploy.hpp"
#include "cnnbp/rng.hpp"

using namespace cnnbp;

namespace {

const cnn::CnnShape kShape{8, 32, 200};

struct Fixture {
  cnn::FpCnnParams params;
  std::vector<std::int32_t> windows;
  std::vector<std::uint8_t> labels;

  explicit Fixture(std::size_t batch, cnn::Mode mode) : params(cnn::init_params(kShape, mode, 0.8, 1)) {
    Rng rng(2);
    for (std::size_t i = 0; i < batch * kShape.history_len; ++i) {
      windows.push_back(static_cast<std::int32_t>(rng.below(kShape.index_space())));
    }
    for (std::size_t i = 0; i < batch; ++i) labels.push_back(rng.coin() ? 1 : 0);
  }
};

template <auto Kernel>
void BM_LossAndGrad(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)), cnn::Mode::full_precision);
  cnn::Gradients g(kShape);
  const cnn::BatchView batch{f.windows, f.labels};
  for (auto _ : state) benchmark::DoNotOptimize(Kernel(f.params, batch, &g, nullptr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void BM_PredictBatch(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)), cnn::Mode::ternary);
  std::vector<std::uint8_t> out(f.labels.size());
  for (auto _ : state) {
    Kernel(f.params, f.windows, out);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DeployedPredict(benchmark::State& state) {
  const auto h = deploy::build_helper(cnn::init_params(kShape, cnn::Mode::ternary, 0.8, 1));
  auto fifo = h.make_fifo(0);
  Rng rng(3);
  for (std::uint32_t i = 0; i < kShape.history_len; ++i) {
    fifo.push_row(h.table, static_cast<std::uint32_t>(rng.below(kShape.index_space())));
  }
  for (auto _ : state) benchmark::DoNotOptimize(deploy::predict(h, fifo));
}

void BM_FifoPush(benchmark::State& state) {
  const auto h = deploy::build_helper(cnn::init_params(kShape, cnn::Mode::ternary, 0.8, 1));
  auto fifo = h.make_fifo(static_cast<std::size_t>(state.range(0)));
  std::uint32_t idx = 0;
  for (auto _ : state) {
    fifo.push_row(h.table, idx);
    idx = (idx + 37) & 255u;
  }
}

}  // namespace

BENCHMARK(BM_LossAndGrad<cnn::loss_and_grad_serial>)->Name("loss_and_grad/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_LossAndGrad<cnn::loss_and_grad_omp>)->Name("loss_and_grad/omp")->Arg(64)->Arg(256)->UseRealTime();
BENCHMARK(BM_PredictBatch<cnn::predict_batch_serial>)->Name("predict_batch/serial")->Arg(4096);
BENCHMARK(BM_PredictBatch<cnn::predict_batch_omp>)->Name("predict_batch/omp")->Arg(4096)->UseRealTime();
BENCHMARK(BM_DeployedPredict)->Name("deployed/predict");
BENCHMARK(BM_FifoPush)->Name("deployed/fifo_push")->Arg(0)->Arg(200);

BENCHMARK_MAIN();
