#include "msda/batching.hpp"

#include <algorithm>
#include <numeric>

#include "msda/errors.hpp"

namespace msda::data {

std::size_t MiniBatch::total() const {
  std::size_t n = 0;
  for (const auto& d : domains) n += d.size();
  return n;
}

BatchSampler::BatchSampler(const DatasetBundle& data, std::size_t batch_size)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::size_t largest = 0;
  for (const auto& d : data.domains) {
    if (d.size() < batch_size)
      throw ConfigError("batch size " + std::to_string(batch_size) +
                        " exceeds size of domain " +
                        std::to_string(d.domain_id) + " (" +
                        std::to_string(d.size()) + ")");
    largest = std::max(largest, d.size());
  }
  largest_ = largest;
  batches_per_epoch_ = (largest + batch_size - 1) / batch_size;
  batch_ = batches_per_epoch_;
  order_.resize(data.domains.size());
  cursor_.assign(data.domains.size(), 0);
}

void BatchSampler::begin_epoch(Rng& rng) {
  rng_ = &rng;
  for (std::size_t m = 0; m < order_.size(); ++m) {
    order_[m].resize(data_->domains[m].size());
    std::iota(order_[m].begin(), order_[m].end(), std::size_t{0});
    std::shuffle(order_[m].begin(), order_[m].end(), rng);
    cursor_[m] = 0;
  }
  batch_ = 0;
}

MiniBatch BatchSampler::next(const PseudoLabels& target_pseudo) {
  if (!has_next()) throw ContractError("sampler epoch exhausted");
  const std::size_t target = data_->target_index();
  if (target_pseudo.size() != data_->domains[target].size())
    throw ContractError("pseudo label vector does not cover the target domain");

  const std::size_t want = std::min(batch_size_, largest_ - batch_ * batch_size_);
  MiniBatch mb;
  for (std::size_t m = 0; m < order_.size(); ++m) {
    const auto& dom = data_->domains[m];
    auto& ord = order_[m];
    // Domains smaller than the largest one start a fresh permutation.
    if (cursor_[m] + want > ord.size()) {
      std::shuffle(ord.begin(), ord.end(), *rng_);
      cursor_[m] = 0;
    }
    DomainBatch db;
    db.domain = static_cast<int>(m);
    db.rows.assign(ord.begin() + static_cast<std::ptrdiff_t>(cursor_[m]),
                   ord.begin() + static_cast<std::ptrdiff_t>(cursor_[m] + want));
    cursor_[m] += want;
    const std::size_t D = dom.features.dim(1);
    db.features = Tensor({db.rows.size(), D});
    for (std::size_t i = 0; i < db.rows.size(); ++i) {
      auto src = dom.features.row(db.rows[i]);
      std::copy(src.begin(), src.end(), db.features.row(i).begin());
      if (m == target) {
        const auto& p = target_pseudo[db.rows[i]];
        db.labels.push_back(p ? *p : kUnlabeled);
      } else {
        db.labels.push_back(dom.labels[db.rows[i]]);
      }
    }
    mb.domains.push_back(std::move(db));
  }
  ++batch_;
  return mb;
}

PseudoLabels assign_pseudo_labels(const Tensor& probs, double threshold) {
  if (probs.rank() != 2) throw ContractError("pseudo labels need [n, K] probabilities");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ConfigError("pseudo-label threshold must lie in [0, 1]");
  PseudoLabels out(probs.dim(0));
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    auto r = probs.row(i);
    const auto it = std::max_element(r.begin(), r.end());
    if (*it >= threshold) out[i] = static_cast<int>(it - r.begin());
  }
  return out;
}

}  // namespace msda::data
