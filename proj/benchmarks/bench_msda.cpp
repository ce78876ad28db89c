#include <benchmark/benchmark.h>

#include "msda/crf_model.hpp"
#include "msda/datagen.hpp"
#include "msda/mrf_model.hpp"
#include "msda/trainer.hpp"

namespace {

using namespace msda;

const data::DatasetBundle& bundle() {
  static const data::DatasetBundle d = data::generate(data::preset_generator("default"), 1);
  return d;
}

Tensor uniform(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void train_step(benchmark::State& state, ModelKind kind) {
  TrainConfig c = preset_train("default", kind);
  c.batch_size = static_cast<int>(state.range(0));
  Trainer trainer(c, bundle());
  for (auto _ : state) {
    const data::MiniBatch batch = trainer.sample_batch();
    benchmark::DoNotOptimize(trainer.step(batch));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 4);
}

void predict(benchmark::State& state, ModelKind kind) {
  TrainConfig c = preset_train("default", kind);
  Trainer trainer(c, bundle());
  const auto& target = bundle().target().features;
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor queries({n, target.dim(1)});
  std::copy_n(target.data().begin(), queries.size(), queries.data().begin());
  for (auto _ : state) benchmark::DoNotOptimize(trainer.model().predict(queries));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_CrfTrainStep(benchmark::State& s) { train_step(s, ModelKind::Crf); }
void BM_MrfTrainStep(benchmark::State& s) { train_step(s, ModelKind::Mrf); }
void BM_CrfPredict(benchmark::State& s) { predict(s, ModelKind::Crf); }
void BM_MrfPredict(benchmark::State& s) { predict(s, ModelKind::Mrf); }

void BM_Sqdist(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, 8}, rng), b = uniform({20, 8}, rng);
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(sqdist(t.constant(a), t.constant(b)).value());
  }
}

void BM_Softmax(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = uniform({static_cast<std::size_t>(state.range(0)), 20}, rng);
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(softmax(t.constant(x)).value());
  }
}

void BM_BuildGraphs(benchmark::State& state) {
  Rng rng(3);
  const Tensor protos = uniform({20, 8}, rng);
  const Tensor queries = uniform({static_cast<std::size_t>(state.range(0)), 8}, rng);
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(
        crf::build_graphs(t.constant(protos), t.constant(queries), 0.5).adjacency.value());
  }
}

void BM_SampleNegatives(benchmark::State& state) {
  Rng rng(4);
  const mrf::NetworkLayout layout{4, static_cast<int>(state.range(0))};
  const auto positive = mrf::build_positive(layout, 1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(mrf::sample_negatives(positive, rng, 6));
}

BENCHMARK(BM_CrfTrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MrfTrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CrfPredict)->Arg(1)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MrfPredict)->Arg(1)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Sqdist)->Arg(64)->Arg(256);
BENCHMARK(BM_Softmax)->Arg(64)->Arg(256);
BENCHMARK(BM_BuildGraphs)->Arg(64)->Arg(256);
BENCHMARK(BM_SampleNegatives)->Arg(5)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
