#include "msda/prototype_bank.hpp"

#include <cmath>

#include "msda/errors.hpp"

namespace msda {

PrototypeBank::PrototypeBank(int domains, int classes, int dim,
                             PrototypeMode mode, double beta)
    : domains_(domains), classes_(classes), dim_(dim), mode_(mode),
      beta_(beta) {
  if (domains < 1 || classes < 1 || dim < 1)
    throw ConfigError("prototype bank dimensions must be positive");
  if (mode == PrototypeMode::Ema && !(beta >= 0.0 && beta < 1.0))
    throw ConfigError("EMA beta must lie in [0, 1)");
  param_ = Parameter("prototypes",
                     Tensor({slots(), static_cast<std::size_t>(dim)}),
                     /*wd=*/false);
  initialized_.assign(slots(), mode == PrototypeMode::Learnable);
}

PrototypeBank PrototypeBank::learnable(int domains, int classes, int dim,
                                       Rng& rng, double init_variance) {
  PrototypeBank b(domains, classes, dim, PrototypeMode::Learnable);
  std::normal_distribution<double> g(0.0, std::sqrt(init_variance));
  for (auto& v : b.param_.value.values()) v = g(rng);
  return b;
}

std::size_t PrototypeBank::slot(int domain, int cls) const {
  if (domain < 0 || domain >= domains_ || cls < 0 || cls >= classes_)
    throw ContractError("prototype slot out of range");
  return static_cast<std::size_t>(domain * classes_ + cls);
}

std::pair<int, int> PrototypeBank::coords(std::size_t slot) const {
  if (slot >= slots()) throw ContractError("prototype slot out of range");
  const int s = static_cast<int>(slot);
  return {s / classes_, s % classes_};
}

Parameter& PrototypeBank::parameter() {
  if (mode_ != PrototypeMode::Learnable)
    throw ContractError("EMA prototypes are not optimizer parameters");
  return param_;
}

void PrototypeBank::ema_update(const PrototypeEstimate& est) {
  if (mode_ != PrototypeMode::Ema)
    throw ContractError("ema_update called on a learnable prototype bank");
  if (est.values.shape() != param_.value.shape() ||
      est.present.size() != slots())
    throw ContractError("prototype estimate shape mismatch");
  const auto d = static_cast<std::size_t>(dim_);
  for (std::size_t s = 0; s < slots(); ++s) {
    if (!est.present[s]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      double& c = param_.value.at(s, j);
      const double chat = est.values.at(s, j);
      c = initialized_[s] ? beta_ * c + (1.0 - beta_) * chat : chat;
    }
    initialized_[s] = true;
  }
}

void PrototypeBank::restore(Tensor values, std::vector<bool> initialized) {
  if (values.shape() != param_.value.shape() || initialized.size() != slots())
    throw CheckpointError("prototype bank shape mismatch");
  param_.value = std::move(values);
  param_.grad = Tensor(param_.value.shape());
  initialized_ = std::move(initialized);
}

PrototypeEstimate estimate_batch_prototypes(const Tensor& embeddings,
                                            std::span<const int> row_slots,
                                            std::size_t slots) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != row_slots.size())
    throw ContractError("one slot per embedding row required");
  const std::size_t d = embeddings.dim(1);
  PrototypeEstimate e{Tensor({slots, d}), std::vector<bool>(slots, false),
                      std::vector<std::size_t>(slots, 0)};
  for (std::size_t i = 0; i < row_slots.size(); ++i) {
    if (row_slots[i] < 0) continue;
    const auto s = static_cast<std::size_t>(row_slots[i]);
    if (s >= slots) throw ContractError("row slot out of range");
    ++e.counts[s];
    for (std::size_t j = 0; j < d; ++j) e.values.at(s, j) += embeddings.at(i, j);
  }
  for (std::size_t s = 0; s < slots; ++s) {
    if (!e.counts[s]) continue;
    e.present[s] = true;
    for (std::size_t j = 0; j < d; ++j)
      e.values.at(s, j) /= static_cast<double>(e.counts[s]);
  }
  return e;
}

Var refreshed_prototypes(Var embeddings, const PrototypeBank& bank,
                         std::span<const int> row_slots,
                         bool through_estimate) {
  Tape& tape = embeddings.tape();
  const std::size_t n = embeddings.shape()[0];
  const std::size_t slots = bank.slots();
  if (row_slots.size() != n)
    throw ContractError("one slot per embedding row required");

  std::vector<std::size_t> counts(slots, 0);
  for (int s : row_slots)
    if (s >= 0) ++counts[static_cast<std::size_t>(s)];

  const double beta = bank.beta();
  const auto& init = bank.initialized();
  Tensor base = bank.values();
  Tensor avg({slots, n});
  for (std::size_t s = 0; s < slots; ++s) {
    if (!counts[s]) continue;
    const double keep = init[s] ? beta : 0.0;
    for (auto& v : base.row(s)) v *= keep;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (row_slots[i] < 0) continue;
    const auto s = static_cast<std::size_t>(row_slots[i]);
    const double w = init[s] ? 1.0 - beta : 1.0;
    avg.at(s, i) = w / static_cast<double>(counts[s]);
  }
  Var z = through_estimate ? embeddings : detach(embeddings);
  return add(tape.constant(std::move(base)), matmul(tape.constant(std::move(avg)), z));
}

}  // namespace msda
