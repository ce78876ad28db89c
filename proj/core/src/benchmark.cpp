#include "msda/benchmark.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "msda/errors.hpp"
#include "msda/query_terms.hpp"
#include "msda/trainer.hpp"

namespace msda {

double ModelTiming::infer_per_query() const {
  const double n = static_cast<double>(queries_per_batch) * iterations;
  return n > 0 ? infer.mean / n : 0.0;
}

TimingStats summarize(std::vector<double> samples) {
  TimingStats s;
  if (samples.empty()) return s;
  const double n = static_cast<double>(samples.size());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  s.samples = std::move(samples);
  return s;
}

ModelTiming benchmark_model(const TrainConfig& config,
                            const data::DatasetBundle& data,
                            const BenchmarkOptions& options) {
  if (options.repetitions < 1 || options.iterations < 1)
    throw ConfigError("benchmark repetitions and iterations must be positive");
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  ModelTiming out;
  out.model = config.model;
  out.iterations = options.iterations;
  std::vector<double> train, infer;
  for (int rep = 0; rep < options.repetitions; ++rep) {
    TrainConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(rep);
    Trainer trainer(c, data);

    std::vector<data::MiniBatch> batches;
    for (int i = 0; i < options.iterations; ++i) batches.push_back(trainer.sample_batch());

    const auto t0 = clock::now();
    for (const auto& b : batches) trainer.step(b);
    const auto t1 = clock::now();
    train.push_back(seconds(t0, t1));

    // Inference on the queries of the same batches, one batch per call.
    std::vector<Tensor> inputs;
    for (const auto& b : batches) inputs.push_back(stack_features(b));
    out.queries_per_batch = inputs.front().dim(0);
    double sink = 0.0;
    const auto t2 = clock::now();
    for (const auto& x : inputs) sink += trainer.model().predict(x)[0];
    const auto t3 = clock::now();
    infer.push_back(seconds(t2, t3));
    if (!std::isfinite(sink)) throw NumericError("benchmark: non-finite prediction");
  }
  out.train = summarize(std::move(train));
  out.infer = summarize(std::move(infer));
  return out;
}

}  // namespace msda
