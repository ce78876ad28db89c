#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msda/datagen.hpp"
#include "msda/rng.hpp"

namespace msda::data {

inline constexpr int kUnlabeled = -1;

/// One domain's share of a mini-batch.
struct DomainBatch {
  int domain = 0;                 // 0-based; the last index is the target
  std::vector<std::size_t> rows;  // row indices into the domain's dataset
  Tensor features;                // [rows.size(), D]
  // Source: ground truth. Target: pseudo label or kUnlabeled.
  std::vector<int> labels;

  std::size_t size() const { return rows.size(); }
};

struct MiniBatch {
  std::vector<DomainBatch> domains;  // exactly M+1, target last
  bool target_entropy = true;        // false during source-only warm-up

  std::size_t total() const;
  std::size_t domain_count() const { return domains.size(); }
  const DomainBatch& target() const { return domains.back(); }
};

using PseudoLabels = std::vector<std::optional<int>>;

/// Epoch-based sampler: each domain is visited in a fresh random order per
/// epoch, without replacement, `batch_size` rows at a time. The last batch of
/// an epoch may be short. Target ground-truth labels are never copied.
class BatchSampler {
 public:
  BatchSampler(const DatasetBundle& data, std::size_t batch_size);

  void begin_epoch(Rng& rng);
  bool has_next() const { return batch_ < batches_per_epoch_; }
  MiniBatch next(const PseudoLabels& target_pseudo);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }

 private:
  const DatasetBundle* data_;
  std::size_t batch_size_;
  std::size_t batches_per_epoch_;
  std::size_t largest_ = 0;
  std::size_t batch_ = 0;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  Rng* rng_ = nullptr;
};

/// Confidence-thresholded argmax. `probs` is [n, K].
PseudoLabels assign_pseudo_labels(const Tensor& probs, double threshold);

}  // namespace msda::data
