#pragma once

#include <span>
#include <utility>
#include <vector>

#include "msda/autodiff.hpp"
#include "msda/rng.hpp"

namespace msda {

enum class PrototypeMode { Ema, Learnable };

/// Per-class mean embeddings of one mini-batch, one row per slot.
struct PrototypeEstimate {
  Tensor values;                    // [(M+1)K, d]; zero rows where absent
  std::vector<bool> present;        // class seen in this batch
  std::vector<std::size_t> counts;  // samples contributing to each slot
};

/// The (M+1) x K prototype embeddings, stored as a [(M+1)K, d] matrix in
/// domain-major slot order: slot(m, k) = m * K + k (0-based).
///
/// EMA mode: only ema_update() writes the values; the matrix is never handed
/// to an optimizer. Learnable mode: the matrix is a trainable Parameter
/// without weight decay.
class PrototypeBank {
 public:
  PrototypeBank(int domains, int classes, int dim, PrototypeMode mode,
                double beta = 0.7);

  // Learnable bank initialised from Normal(0, init_variance * I).
  static PrototypeBank learnable(int domains, int classes, int dim, Rng& rng,
                                 double init_variance = 0.01);

  int domains() const { return domains_; }
  int classes() const { return classes_; }
  int dim() const { return dim_; }
  std::size_t slots() const { return static_cast<std::size_t>(domains_ * classes_); }
  std::size_t slot(int domain, int cls) const;
  std::pair<int, int> coords(std::size_t slot) const;

  PrototypeMode mode() const { return mode_; }
  double beta() const { return beta_; }

  const Tensor& values() const { return param_.value; }
  Parameter& parameter();  // learnable mode only
  const Parameter& parameter() const { return param_; }
  const std::vector<bool>& initialized() const { return initialized_; }

  // c <- beta c + (1 - beta) c_hat where present; first sighting copies c_hat.
  void ema_update(const PrototypeEstimate& estimate);

  // Raw state restore (checkpoint load).
  void restore(Tensor values, std::vector<bool> initialized);

 private:
  int domains_, classes_, dim_;
  PrototypeMode mode_;
  double beta_;
  Parameter param_;
  std::vector<bool> initialized_;
};

/// Slot per embedding row, or -1 for rows that do not contribute (unlabeled
/// target samples). Means are taken over rows sharing a slot.
PrototypeEstimate estimate_batch_prototypes(const Tensor& embeddings,
                                            std::span<const int> row_slots,
                                            std::size_t slots);

/// Prototypes consumed by a training step's graph:
///   present & initialised:   beta * stop_grad(c) + (1 - beta) * c_hat
///   present & uninitialised: c_hat
///   absent:                  c (constant)
/// c_hat is expressed as a constant averaging matrix times `embeddings`, so
/// gradients reach the extractor when `through_estimate` is set; otherwise
/// the result is a constant.
Var refreshed_prototypes(Var embeddings, const PrototypeBank& bank,
                         std::span<const int> row_slots, bool through_estimate);

}  // namespace msda
