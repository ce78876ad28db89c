#include "msda/query_terms.hpp"

#include <algorithm>

#include "msda/errors.hpp"

namespace msda {

QueryRows QueryRows::from_batch(const data::MiniBatch& batch, int classes) {
  QueryRows r;
  r.domains = static_cast<int>(batch.domain_count());
  r.classes = classes;
  r.target_entropy = batch.target_entropy;
  for (const auto& db : batch.domains)
    for (int y : db.labels) {
      r.domain.push_back(db.domain);
      r.label.push_back(y);
    }
  return r;
}

std::vector<int> QueryRows::slots() const {
  std::vector<int> s(size(), -1);
  for (std::size_t i = 0; i < size(); ++i)
    if (label[i] >= 0) s[i] = domain[i] * classes + label[i];
  return s;
}

QueryTerms query_losses(Var probs, const QueryRows& rows) {
  Tape& tape = probs.tape();
  const auto& s = probs.shape();
  if (s.size() != 2 || s[0] != rows.size() ||
      s[1] != static_cast<std::size_t>(rows.classes))
    throw ContractError("query_losses: probabilities do not match the batch");
  const std::size_t n = s[0], K = s[1];
  const int M = rows.domains - 1;

  std::vector<std::size_t> src_count(static_cast<std::size_t>(rows.domains), 0);
  std::size_t tgt_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows.is_target(i)) ++tgt_count;
    else if (rows.label[i] >= 0) ++src_count[static_cast<std::size_t>(rows.domain[i])];
  }

  Tensor w_src(s), w_tgt(s);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows.is_target(i)) {
      if (!rows.target_entropy) continue;
      for (std::size_t k = 0; k < K; ++k)
        w_tgt[i * K + k] = 1.0 / static_cast<double>(tgt_count);
    } else if (rows.label[i] >= 0) {
      const auto m = static_cast<std::size_t>(rows.domain[i]);
      w_src[i * K + static_cast<std::size_t>(rows.label[i])] =
          1.0 / (static_cast<double>(M) * static_cast<double>(src_count[m]));
    }
  }
  Var logp = log_clamped(probs, kLogEps);
  QueryTerms t;
  t.src = neg(sum(mul(logp, tape.constant(std::move(w_src)))));
  t.tgt = neg(sum(mul(mul(probs, logp), tape.constant(std::move(w_tgt)))));
  return t;
}

Tensor stack_features(const data::MiniBatch& batch) {
  if (batch.domains.empty()) throw ContractError("empty mini-batch");
  std::size_t n = 0;
  const std::size_t D = batch.domains.front().features.dim(1);
  for (const auto& db : batch.domains) n += db.size();
  Tensor x({n, D});
  std::size_t r = 0;
  for (const auto& db : batch.domains)
    for (std::size_t i = 0; i < db.size(); ++i, ++r)
      std::copy(db.features.row(i).begin(), db.features.row(i).end(),
                x.row(r).begin());
  return x;
}

}  // namespace msda
