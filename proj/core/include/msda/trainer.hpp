#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "msda/adam.hpp"
#include "msda/batching.hpp"
#include "msda/train_config.hpp"

namespace msda {

/// One of the three trainable models behind a common interface.
class AnyModel {
 public:
  static AnyModel create(const TrainConfig& config, int sources, int classes,
                         int input_dim, Rng& rng);

  ModelKind kind() const;
  int sources() const { return sources_; }
  int classes() const { return classes_; }
  int input_dim() const { return input_dim_; }

  Tensor predict(const Tensor& features) const;  // [n, K]

  std::vector<Parameter*> parameters();  // handed to the optimizer
  PrototypeBank* bank();                 // null for the baseline
  const PrototypeBank* bank() const;

  crf::CrfModel* crf() { return std::get_if<crf::CrfModel>(&model_); }
  mrf::MrfModel* mrf() { return std::get_if<mrf::MrfModel>(&model_); }
  const crf::CrfModel* crf() const { return std::get_if<crf::CrfModel>(&model_); }
  const mrf::MrfModel* mrf() const { return std::get_if<mrf::MrfModel>(&model_); }

  template <class F>
  decltype(auto) visit(F&& f) { return std::visit(std::forward<F>(f), model_); }
  template <class F>
  decltype(auto) visit(F&& f) const { return std::visit(std::forward<F>(f), model_); }

 private:
  using Variant = std::variant<crf::CrfModel, mrf::MrfModel, SourceOnlyModel>;
  AnyModel(Variant m, int sources, int classes, int input_dim)
      : model_(std::move(m)), sources_(sources), classes_(classes),
        input_dim_(input_dim) {}

  Variant model_;
  int sources_, classes_, input_dim_;
};

/// Scalar terms of one objective evaluation; unused terms stay zero.
struct LossTerms {
  double total = 0, proto = 0, src = 0, tgt = 0, global = 0, local = 0, mle = 0;
  double positive_mean = 0, negative_mean = 0;
};

struct EpochMetrics {
  int epoch = 0;
  std::size_t steps = 0;
  LossTerms mean;              // averaged over the epoch's steps
  double source_accuracy = 0;  // running accuracy on training batches
  double target_accuracy = 0;  // full target set after the epoch
  std::size_t pseudo_labeled = 0;
  double seconds_per_100 = 0;  // wall clock; not written to metrics.csv
};

struct EvalReport {
  std::vector<double> domain_accuracy;  // index 0..M, target last
  double target_accuracy() const { return domain_accuracy.back(); }
};

double accuracy(const Tensor& probs, const std::vector<int>& labels);
EvalReport evaluate(const AnyModel& model, const data::DatasetBundle& data);

/// Epoch loop. Per step: sample batch, build objective (CRF prototypes are
/// refreshed from the batch inside it), backward, Adam step, then commit the
/// CRF EMA. Pseudo labels are refreshed every `pseudo_refresh` epochs.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const data::DatasetBundle& data);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return config_; }
  AnyModel& model() { return model_; }
  const AnyModel& model() const { return model_; }
  const Adam& optimizer() const { return adam_; }
  std::int64_t step_count() const { return step_; }

  EpochMetrics run_epoch();
  std::vector<EpochMetrics> run();

  // One optimisation step on `batch`; exposed for benchmarks and tests.
  LossTerms step(const data::MiniBatch& batch, Tensor* query_probs = nullptr);

  data::MiniBatch sample_batch();  // draws from the current epoch
  const data::PseudoLabels& pseudo_labels() const { return pseudo_; }
  void refresh_pseudo_labels();
  std::string rng_state() const;

 private:
  data::MiniBatch next_batch();  // no target entropy during warm-up

  TrainConfig config_;
  const data::DatasetBundle* data_;
  Rng init_rng_;
  Rng shuffle_rng_;
  AnyModel model_;
  Adam adam_;
  data::BatchSampler sampler_;
  data::PseudoLabels pseudo_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
  std::optional<Tensor> target_probs_;  // current model on the target set
};

// Stream tag of the negative-sampling generator for a global step.
Rng negative_rng(std::uint64_t seed, std::int64_t step);

void write_metrics_csv(const std::filesystem::path& path,
                       std::string_view invocation,
                       const std::vector<EpochMetrics>& metrics);
void write_timing_csv(const std::filesystem::path& path,
                      std::string_view invocation,
                      const std::vector<EpochMetrics>& metrics);

/// Finite-difference check of a full objective at a tiny configuration.
struct GradCheckGroup {
  std::string name;
  std::size_t size = 0;
  double rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0;
};

struct GradCheckReport {
  ModelKind model = ModelKind::Crf;
  double loss = 0;
  std::vector<GradCheckGroup> groups;
  double max_rel_error() const;
};

// Tiny setup: M+1 = 2, K = 2, d = 3, batch 2 per domain.
TrainConfig gradcheck_config(ModelKind model, std::uint64_t seed);
GradCheckReport grad_check(const TrainConfig& config, double h = 1e-5);

}  // namespace msda
