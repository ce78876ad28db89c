#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "msda/crf_model.hpp"
#include "msda/io.hpp"
#include "msda/mrf_model.hpp"
#include "msda/source_only.hpp"

namespace msda {

enum class ModelKind { Crf, Mrf, SourceOnly };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

/// Every hyperparameter of a run. Serialized as flat JSON; unknown keys are
/// rejected and missing keys keep their defaults.
struct TrainConfig {
  ModelKind model = ModelKind::Crf;
  int epochs = 100;
  int batch_size = 64;  // per domain
  double lr = 2e-4;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  double pseudo_threshold = 0.8;
  int pseudo_refresh = 1;  // epochs between pseudo-label refreshes
  int warmup_epochs = 0;   // leading epochs trained on the sources only

  int embed_dim = 8;
  int extractor_hidden = 32;
  int gcn_hidden = 8;
  int gcn_out = 8;

  double lambda1 = 20.0;
  double lambda2 = 0.001;
  double sigma = 0.005;
  double beta = 0.7;
  crf::GcnNorm gcn_norm = crf::GcnNorm::Sym;
  bool final_relu = true;
  bool prototype_grad = true;  // through_estimate when set, none otherwise

  double tau = 0.1;
  double alpha = 1.0;
  int n2 = 6;
  mrf::MleSpace mle_space = mrf::MleSpace::Raw;
  double init_variance = 0.01;

  bool disable_global = false;
  bool disable_local = false;
  bool disable_cls = false;
  bool disable_mle = false;

  void validate() const;

  crf::CrfConfig crf() const;
  mrf::MrfConfig mrf() const;
  SourceOnlyConfig source_only() const;

  io::ordered_json to_json() const;
  static TrainConfig from_json(const io::ordered_json& j);
  std::string canonical() const;  // one-line JSON
  std::uint64_t hash() const;     // FNV-1a of canonical()

  bool operator==(const TrainConfig&) const = default;
};

// "paper": published hyperparameters. "default": desk-scale settings tuned
// for the synthetic rotation task.
TrainConfig preset_train(std::string_view name, ModelKind model);

}  // namespace msda
