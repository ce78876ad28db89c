#pragma once

#include <vector>

#include "msda/datagen.hpp"
#include "msda/train_config.hpp"

namespace msda {

struct TimingStats {
  double mean = 0;
  double stddev = 0;  // sample standard deviation over repetitions
  std::vector<double> samples;
};

struct ModelTiming {
  ModelKind model = ModelKind::Crf;
  TimingStats train;      // seconds per `iterations` optimisation steps
  TimingStats infer;      // seconds per `iterations` inference batches
  int iterations = 0;
  std::size_t queries_per_batch = 0;
  double infer_per_query() const;  // mean seconds per single query
};

struct BenchmarkOptions {
  int repetitions = 10;
  int iterations = 100;
};

TimingStats summarize(std::vector<double> samples);

/// Wall-clock timing of training steps and batched inference for one model.
/// Every repetition starts from a freshly initialised model.
ModelTiming benchmark_model(const TrainConfig& config,
                            const data::DatasetBundle& data,
                            const BenchmarkOptions& options);

}  // namespace msda
