#pragma once

#include <vector>

#include "msda/autodiff.hpp"
#include "msda/batching.hpp"
#include "msda/layers.hpp"

namespace msda {

struct SourceOnlyConfig {
  int embed_dim = 8;
  int extractor_hidden = 32;
};

struct SourceOnlyLoss {
  Var total;
  double src = 0;
  Tensor query_probs;  // [n, K]
};

/// Baseline: extractor and linear classifier trained on source labels only.
class SourceOnlyModel {
 public:
  SourceOnlyModel(int sources, int classes, int input_dim,
                  const SourceOnlyConfig& config, Rng& rng);

  int domains() const { return sources_ + 1; }
  int classes() const { return classes_; }

  SourceOnlyLoss objective(Tape& tape, const data::MiniBatch& batch) const;
  Tensor predict(const Tensor& features) const;  // [n, K]

  std::vector<Parameter*> parameters();
  const Extractor& extractor() const { return extractor_; }
  const Linear& classifier() const { return classifier_; }

 private:
  int sources_, classes_;
  Extractor extractor_;
  Linear classifier_;
};

}  // namespace msda
