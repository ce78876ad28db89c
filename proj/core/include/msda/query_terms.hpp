#pragma once

#include <vector>

#include "msda/autodiff.hpp"
#include "msda/batching.hpp"

namespace msda {

// Clamp applied inside every cross-entropy and entropy log.
inline constexpr double kLogEps = 1e-12;

/// Per-row metadata for the query rows of a batch (domain-major order).
struct QueryRows {
  std::vector<int> domain;  // 0-based, target = domains - 1
  std::vector<int> label;   // ground truth / pseudo label / kUnlabeled
  int domains = 0;
  int classes = 0;
  bool target_entropy = true;

  static QueryRows from_batch(const data::MiniBatch& batch, int classes);
  std::size_t size() const { return domain.size(); }
  bool is_target(std::size_t i) const { return domain[i] == domains - 1; }
  // slot(m, y) per row; -1 where unlabeled.
  std::vector<int> slots() const;
};

struct QueryTerms {
  Var src;  // CE averaged per source domain, then over source domains
  Var tgt;  // mean prediction entropy over all target rows (0 when disabled)
};

// `probs` is [n, K] with one row per entry of `rows`.
QueryTerms query_losses(Var probs, const QueryRows& rows);

// Row-stacks the features of every domain of the batch: [total, D].
Tensor stack_features(const data::MiniBatch& batch);

}  // namespace msda
