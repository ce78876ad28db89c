#include "msda/crf_model.hpp"

#include <algorithm>
#include <cmath>

#include "msda/errors.hpp"

namespace msda::crf {

std::string to_string(GcnNorm n) {
  switch (n) {
    case GcnNorm::Sym: return "sym";
    case GcnNorm::Row: return "row";
    case GcnNorm::None: return "none";
  }
  return "sym";
}

GcnNorm parse_gcn_norm(const std::string& s) {
  if (s == "sym") return GcnNorm::Sym;
  if (s == "row") return GcnNorm::Row;
  if (s == "none") return GcnNorm::None;
  throw ConfigError("gcn_norm must be sym, row or none, got '" + s + "'");
}

void CrfConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
    throw ConfigError("trade-off weights must be non-negative");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
  if (embed_dim < 1 || extractor_hidden < 1 || gcn_hidden < 1 || gcn_out < 1)
    throw ConfigError("layer widths must be positive");
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

Var rbf_kernel(Var sqd, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  return exp(scale(sqd, -1.0 / (2.0 * sigma * sigma)));
}

GraphBatch build_graphs(Var prototypes, Var queries, double sigma) {
  Tape& tape = prototypes.tape();
  const std::size_t np = prototypes.shape()[0];
  const std::size_t d = prototypes.shape()[1];
  const std::size_t nq = queries.shape()[0];
  if (queries.shape()[1] != d)
    throw ContractError("query and prototype embeddings differ in dimension");
  const std::size_t N = np + 1;

  GraphBatch g;
  g.prototype_block = rbf_kernel(sqdist(prototypes, prototypes), sigma);
  Var qp = rbf_kernel(sqdist(queries, prototypes), sigma);  // [B, np]
  const Var parts[] = {g.prototype_block, qp, tape.constant(Tensor::scalar(1.0))};
  Var table = concat(parts);
  const std::size_t off_q = np * np;
  const std::size_t off_one = off_q + nq * np;

  std::vector<std::size_t> idx(nq * N * N);
  for (std::size_t b = 0; b < nq; ++b)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        std::size_t src;
        if (i < np && j < np) src = i * np + j;
        else if (i < np) src = off_q + b * np + i;
        else if (j < np) src = off_q + b * np + j;
        else src = off_one;
        idx[(b * N + i) * N + j] = src;
      }
  g.adjacency = gather(table, std::move(idx), {nq, N, N});

  const Var node_parts[] = {prototypes, queries};
  Var node_table = concat(node_parts);
  std::vector<std::size_t> nidx(nq * N * d);
  for (std::size_t b = 0; b < nq; ++b)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < d; ++k)
        nidx[(b * N + i) * d + k] = i < np ? i * d + k : (np + b) * d + k;
  g.nodes = gather(node_table, std::move(nidx), {nq, N, d});
  return g;
}

RelationalGraph build_graph(const Tensor& query, const Tensor& prototypes,
                            double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (prototypes.rank() != 2 || query.size() != prototypes.dim(1))
    throw ContractError("query and prototypes must share dimension d");
  Tape tape(false);
  auto g = build_graphs(tape.constant(prototypes),
                        tape.constant(query.reshaped({1, query.size()})), sigma);
  const std::size_t N = prototypes.dim(0) + 1;
  RelationalGraph out{g.nodes.value().reshaped({N, prototypes.dim(1)}),
                      g.adjacency.value().reshaped({N, N}), sigma};
  check_adjacency(out.adjacency);
  return out;
}

void check_adjacency(const Tensor& a) {
  const std::size_t N = a.shape().back();
  const std::size_t batch = a.size() / (N * N);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < N; ++i) {
      if (a[(b * N + i) * N + i] != 1.0)
        throw NumericError("adjacency: diagonal entry differs from 1");
      for (std::size_t j = 0; j < N; ++j) {
        const double v = a[(b * N + i) * N + j];
        if (v != a[(b * N + j) * N + i])
          throw NumericError("adjacency: not symmetric");
        if (!(v >= 0.0 && v <= 1.0))
          throw NumericError("adjacency: entry outside [0, 1]");
      }
    }
}

Var normalize_adjacency(Var a, GcnNorm norm) {
  switch (norm) {
    case GcnNorm::None: return a;
    case GcnNorm::Row: return scale_rows(a, pow(sum_last(a), -1.0));
    case GcnNorm::Sym: {
      Var dinv = pow(sum_last(a), -0.5);
      return scale_cols(scale_rows(a, dinv), dinv);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// GCN
// ---------------------------------------------------------------------------

GcnParams::GcnParams(std::size_t d, std::size_t h, std::size_t d_out,
                     std::size_t classes, Rng& rng)
    : w1("gcn.w1", Tensor({d, h})), w2("gcn.w2", Tensor({h, d_out})),
      classifier("classifier", d_out, classes, rng) {
  std::normal_distribution<double> g1(0.0, std::sqrt(2.0 / static_cast<double>(d)));
  for (auto& v : w1.value.values()) v = g1(rng);
  std::normal_distribution<double> g2(0.0, std::sqrt(2.0 / static_cast<double>(h)));
  for (auto& v : w2.value.values()) v = g2(rng);
}

std::vector<Parameter*> GcnParams::parameters() {
  return {&w1, &w2, &classifier.weight, &classifier.bias};
}

namespace {

// Â (X W) for X: [B, N, in].
Var propagate(Var a_hat, Var x, Var w) {
  const auto& s = x.shape();
  const std::size_t B = s[0], N = s[1], in = s[2];
  const std::size_t out = w.shape()[1];
  Var xw = reshape(matmul(reshape(x, {B * N, in}), w), {B, N, out});
  return bmm(a_hat, xw);
}

}  // namespace

Var gcn_forward(const GraphBatch& g, const GcnParams& p, GcnNorm norm,
                bool final_relu) {
  Tape& tape = g.nodes.tape();
  Var a_hat = normalize_adjacency(g.adjacency, norm);
  Var h1 = relu(propagate(a_hat, g.nodes, tape.leaf(p.w1)));
  Var h2 = propagate(a_hat, h1, tape.leaf(p.w2));
  return final_relu ? relu(h2) : h2;
}

Var predict_labels(Var h, const Linear& classifier) {
  const auto& s = h.shape();
  const std::size_t B = s[0], N = s[1], dout = s[2];
  Var logits = classifier.forward(h.tape(), reshape(h, {B * N, dout}));
  const std::size_t K = logits.shape()[1];
  return reshape(softmax(logits), {B, N, K});
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

ClsTerms loss_cls(Var probs, const QueryRows& rows) {
  Tape& tape = probs.tape();
  const auto& s = probs.shape();
  const std::size_t B = s[0], N = s[1], K = s[2];
  const std::size_t np = N - 1;
  if (B != rows.size() || K != static_cast<std::size_t>(rows.classes) ||
      np != static_cast<std::size_t>(rows.domains * rows.classes))
    throw ContractError("loss_cls: probabilities do not match the batch layout");

  Tensor w_proto(s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t slot = 0; slot < np; ++slot)
      w_proto[(b * N + slot) * K + slot % K] = 1.0 / static_cast<double>(B * np);
  std::vector<std::size_t> qidx(B * K);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) qidx[b * K + k] = (b * N + np) * K + k;

  ClsTerms t;
  t.proto = neg(sum(mul(log_clamped(probs, kLogEps),
                        tape.constant(std::move(w_proto)))));
  QueryTerms q = query_losses(gather(probs, std::move(qidx), {B, K}), rows);
  t.src = q.src;
  t.tgt = q.tgt;
  return t;
}

Var loss_global(Var block, int domains, int classes) {
  const auto D = static_cast<std::size_t>(domains);
  const auto K = static_cast<std::size_t>(classes);
  const std::size_t np = D * K;
  if (block.shape() != Shape{np, np})
    throw ContractError("loss_global: prototype block has wrong shape");
  // blocks[(i,j), (a,b)] = Ã[iK + a, jK + b]
  const std::size_t nb = D * D, kk = K * K;
  std::vector<std::size_t> bidx(nb * kk);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j)
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b)
          bidx[(i * D + j) * kk + a * K + b] = (i * K + a) * np + (j * K + b);
  Var blocks = gather(block, std::move(bidx), {nb, kk});

  std::vector<std::size_t> lhs(nb * nb * kk), rhs(nb * nb * kk);
  for (std::size_t p = 0; p < nb; ++p)
    for (std::size_t q = 0; q < nb; ++q)
      for (std::size_t e = 0; e < kk; ++e) {
        lhs[(p * nb + q) * kk + e] = p * kk + e;
        rhs[(p * nb + q) * kk + e] = q * kk + e;
      }
  Var diffs = sub(gather(blocks, std::move(lhs), {nb * nb, kk}),
                  gather(blocks, std::move(rhs), {nb * nb, kk}));
  const double norm = std::pow(static_cast<double>(D), 4.0);
  return scale(sum(row_norms(diffs)), 1.0 / norm);
}

std::vector<int> defined_domains(const PrototypeBank& bank,
                                 std::span<const int> row_slots) {
  std::vector<bool> defined = bank.initialized();
  for (int s : row_slots)
    if (s >= 0) defined[static_cast<std::size_t>(s)] = true;
  std::vector<int> out;
  for (int m = 0; m < bank.domains(); ++m) {
    bool all = true;
    for (int k = 0; k < bank.classes(); ++k) all = all && defined[bank.slot(m, k)];
    if (all) out.push_back(m);
  }
  return out;
}

Var domain_block(Var prototype_block, std::span<const int> domains, int classes) {
  const auto K = static_cast<std::size_t>(classes);
  const std::size_t np = prototype_block.shape()[0], n = domains.size() * K;
  std::vector<std::size_t> rows;
  rows.reserve(n);
  for (int m : domains)
    for (std::size_t k = 0; k < K; ++k) rows.push_back(static_cast<std::size_t>(m) * K + k);
  std::vector<std::size_t> idx;
  idx.reserve(n * n);
  for (std::size_t r : rows)
    for (std::size_t c : rows) idx.push_back(r * np + c);
  return gather(prototype_block, std::move(idx), {n, n});
}

Var loss_local(Var embeddings, Var prototypes, std::span<const int> row_slots,
               std::size_t batch_total) {
  Tape& tape = embeddings.tape();
  const std::size_t d = embeddings.shape()[1];
  std::vector<std::size_t> zi, ci;
  for (std::size_t i = 0; i < row_slots.size(); ++i) {
    if (row_slots[i] < 0) continue;
    for (std::size_t k = 0; k < d; ++k) {
      zi.push_back(i * d + k);
      ci.push_back(static_cast<std::size_t>(row_slots[i]) * d + k);
    }
  }
  if (zi.empty()) return tape.constant(Tensor::scalar(0.0));
  const std::size_t n = zi.size() / d;
  Var z = gather(embeddings, std::move(zi), {n, d});
  Var c = gather(prototypes, std::move(ci), {n, d});
  return scale(sum(sqdist_rows(z, c)), 1.0 / static_cast<double>(batch_total));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

CrfModel::CrfModel(int sources, int classes, int input_dim,
                   const CrfConfig& config, Rng& rng)
    : config_(config),
      extractor_(static_cast<std::size_t>(input_dim),
                 static_cast<std::size_t>(config.extractor_hidden),
                 static_cast<std::size_t>(config.embed_dim), rng),
      gcn_(static_cast<std::size_t>(config.embed_dim),
           static_cast<std::size_t>(config.gcn_hidden),
           static_cast<std::size_t>(config.gcn_out),
           static_cast<std::size_t>(classes), rng),
      bank_(sources + 1, classes, config.embed_dim, PrototypeMode::Ema,
            config.beta) {
  config.validate();
}

CrfLoss CrfModel::objective(Tape& tape, const data::MiniBatch& batch) const {
  const QueryRows rows = QueryRows::from_batch(batch, classes());
  const std::vector<int> slots = rows.slots();

  Var z = extractor_.forward(tape, tape.constant(stack_features(batch)));
  Var protos = refreshed_prototypes(z, bank_, slots, config_.grad_through_estimate);
  GraphBatch graphs = build_graphs(protos, z, config_.sigma);
  check_adjacency(graphs.adjacency.value());
  Var probs = predict_labels(
      gcn_forward(graphs, gcn_, config_.norm, config_.final_relu),
      gcn_.classifier);

  ClsTerms cls = loss_cls(probs, rows);
  // Slots never observed sit at the origin and carry no class geometry.
  const std::vector<int> live = defined_domains(bank_, slots);
  Var global = tape.constant(Tensor::scalar(0.0));
  if (static_cast<int>(live.size()) == domains())
    global = loss_global(graphs.prototype_block, domains(), classes());
  else if (live.size() >= 2)
    global = loss_global(domain_block(graphs.prototype_block, live, classes()),
                         static_cast<int>(live.size()), classes());
  Var local = loss_local(z, protos, slots, rows.size());

  CrfLoss out;
  out.proto = cls.proto.item();
  out.src = cls.src.item();
  out.tgt = cls.tgt.item();
  out.global = global.item();
  out.local = local.item();

  Var total = scale(global, config_.lambda1);
  total = add(total, scale(local, config_.lambda2));
  if (config_.use_cls) total = add(total, add(add(cls.proto, cls.src), cls.tgt));
  out.total = total;
  out.estimate = estimate_batch_prototypes(z.value(), slots, bank_.slots());
  const std::size_t B = rows.size(), N = bank_.slots() + 1;
  const auto K = static_cast<std::size_t>(classes());
  out.query_probs = Tensor({B, K});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      out.query_probs.at(b, k) = probs.value()[(b * N + N - 1) * K + k];
  return out;
}

void CrfModel::commit_prototypes(const PrototypeEstimate& estimate) {
  bank_.ema_update(estimate);
}

Tensor CrfModel::predict(const Tensor& features) const {
  constexpr std::size_t kChunk = 512;
  const std::size_t n = features.dim(0);
  const std::size_t D = features.dim(1);
  if (D != extractor_.input_dim())
    throw CheckpointError("feature dimension does not match the model");
  const auto K = static_cast<std::size_t>(classes());
  const std::size_t np = bank_.slots();
  Tensor out({n, K});
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    Tensor chunk({hi - lo, D});
    std::copy(features.data().begin() + static_cast<std::ptrdiff_t>(lo * D),
              features.data().begin() + static_cast<std::ptrdiff_t>(hi * D),
              chunk.data().begin());
    Tape tape(false);
    Var z = extractor_.forward(tape, tape.constant(std::move(chunk)));
    GraphBatch g = build_graphs(tape.constant(bank_.values()), z, config_.sigma);
    const Tensor& p = predict_labels(
        gcn_forward(g, gcn_, config_.norm, config_.final_relu),
        gcn_.classifier).value();
    const std::size_t N = np + 1;
    for (std::size_t b = 0; b < hi - lo; ++b)
      for (std::size_t k = 0; k < K; ++k)
        out.at(lo + b, k) = p[((b * N) + np) * K + k];
  }
  return out;
}

Tensor CrfModel::prototype_adjacency() const {
  Tape tape(false);
  Var c = tape.constant(bank_.values());
  return rbf_kernel(sqdist(c, c), config_.sigma).value();
}

std::vector<Parameter*> CrfModel::parameters() {
  auto p = extractor_.parameters();
  for (auto* q : gcn_.parameters()) p.push_back(q);
  return p;
}

}  // namespace msda::crf
