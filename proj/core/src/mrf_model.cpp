#include "msda/mrf_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msda/errors.hpp"

namespace msda::mrf {

std::string to_string(MleSpace s) { return s == MleSpace::Raw ? "raw" : "log"; }

MleSpace parse_mle_space(const std::string& s) {
  if (s == "raw") return MleSpace::Raw;
  if (s == "log") return MleSpace::Log;
  throw ConfigError("mle_space must be raw or log, got '" + s + "'");
}

void MrfConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (n2 < 0) throw ConfigError("n2 must be non-negative");
  if (embed_dim < 1 || extractor_hidden < 1)
    throw ConfigError("layer widths must be positive");
  if (!(init_variance > 0.0)) throw ConfigError("init_variance must be positive");
}

Var joint_probabilities(Var sqd, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  return softmax(scale(sqd, -1.0 / tau));
}

Var class_probabilities(Var joint, int domains, int classes) {
  const auto K = static_cast<std::size_t>(classes);
  const std::size_t np = static_cast<std::size_t>(domains) * K;
  if (joint.shape().size() != 2 || joint.shape()[1] != np)
    throw ContractError("joint probabilities do not match the layout");
  Tensor fold({np, K});
  for (std::size_t s = 0; s < np; ++s) fold.at(s, s % K) = 1.0;
  return matmul(joint, joint.tape().constant(std::move(fold)));
}

Prediction mrf_predict(const Tensor& queries, const Tensor& prototypes,
                       int domains, int classes, double tau, PredictMode mode) {
  const NetworkLayout layout{domains, classes};
  const std::size_t np = layout.prototypes();
  if (prototypes.rank() != 2 || prototypes.dim(0) != np)
    throw ContractError("prototype matrix does not match the layout");
  if (queries.rank() != 2 || queries.dim(1) != prototypes.dim(1))
    throw ContractError("query and prototype dimensions differ");
  const std::size_t n = queries.dim(0), d = queries.dim(1);
  const auto K = static_cast<std::size_t>(classes);

  if (mode == PredictMode::LogSumExp) {
    Tape tape(false);
    Var sqd = sqdist(tape.constant(queries), tape.constant(prototypes));
    Var joint = joint_probabilities(sqd, tau);
    Var cls = class_probabilities(joint, domains, classes);
    return {cls.value(), joint.value()};
  }

  Prediction out{Tensor({n, K}), Tensor({n, np})};
  Tensor x({np + 1, d});
  std::copy(prototypes.data().begin(), prototypes.data().end(), x.data().begin());
  std::vector<MarkovNetwork> nets;
  for (int m = 0; m < domains; ++m)
    for (int k = 0; k < classes; ++k) nets.push_back(build_prediction(layout, m, k));
  for (std::size_t q = 0; q < n; ++q) {
    std::copy(queries.row(q).begin(), queries.row(q).end(), x.row(np).begin());
    double z = 0.0;
    for (std::size_t s = 0; s < np; ++s) {
      out.joint.at(q, s) = unnorm_likelihood(nets[s], x, tau);
      z += out.joint.at(q, s);
    }
    if (!(z > 0.0) || !std::isfinite(z))
      throw NumericError("mrf_predict: direct normalizer underflowed");
    for (std::size_t s = 0; s < np; ++s) {
      out.joint.at(q, s) /= z;
      out.classes.at(q, s % K) += out.joint.at(q, s);
    }
  }
  return out;
}

Var loss_mle(Var sqd, Var prototypes, const QueryRows& rows,
             const MrfConfig& config, Rng& rng, MleStats* stats,
             EnergyTally* tally) {
  Tape& tape = sqd.tape();
  const NetworkLayout layout{rows.domains, rows.classes};
  const std::size_t np = layout.prototypes();
  const std::size_t d = prototypes.shape()[1];
  if (sqd.shape() != Shape{rows.size(), np})
    throw ContractError("loss_mle: distance matrix does not match the batch");

  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows.label[i] >= 0) labeled.push_back(i);
  if (labeled.empty()) return tape.constant(Tensor::scalar(0.0));
  const std::size_t nb = labeled.size();

  const auto cliques = clique_edges(layout);
  const std::size_t P = cliques.size();
  std::vector<int> pair_index(np * np, -1);
  for (std::size_t e = 0; e < P; ++e)
    pair_index[cliques[e].first * np + cliques[e].second] = static_cast<int>(e);

  const std::size_t n_neg =
      static_cast<std::size_t>(config.negatives(rows.classes));
  const std::size_t nets = 1 + n_neg;
  const std::size_t width = P + 2;

  // Table layout: [clique energies (nb * P) | sqd (n * np) | extra | zero].
  const std::size_t off_sqd = nb * P;
  const std::size_t off_extra = off_sqd + rows.size() * np;
  std::vector<Edge> extras;
  std::vector<std::size_t> idx;
  idx.reserve(nb * nets * width);
  for (std::size_t j = 0; j < nb; ++j) {
    const std::size_t i = labeled[j];
    MarkovNetwork positive = build_positive(layout, rows.domain[i], rows.label[i]);
    std::vector<MarkovNetwork> group;
    group.reserve(nets);
    group.push_back(positive);
    for (auto& neg : sample_negatives(positive, rng, config.n2))
      group.push_back(std::move(neg));
    for (const auto& net : group) {
      const std::size_t start = idx.size();
      for (const auto& [u, v] : net.edges()) {
        if (v == layout.query()) {
          idx.push_back(off_sqd + i * np + u);
        } else if (pair_index[u * np + v] >= 0) {
          idx.push_back(j * P + static_cast<std::size_t>(pair_index[u * np + v]));
        } else {
          idx.push_back(off_extra + extras.size());
          extras.emplace_back(u, v);
        }
      }
      idx.resize(start + width, std::numeric_limits<std::size_t>::max());
    }
  }
  const std::size_t off_zero = off_extra + extras.size();
  for (auto& s : idx)
    if (s == std::numeric_limits<std::size_t>::max()) s = off_zero;

  std::vector<Var> parts;
  if (P > 0) {
    std::vector<std::size_t> li(nb * P * d), ri(nb * P * d);
    for (std::size_t j = 0; j < nb; ++j)
      for (std::size_t e = 0; e < P; ++e)
        for (std::size_t k = 0; k < d; ++k) {
          li[(j * P + e) * d + k] = cliques[e].first * d + k;
          ri[(j * P + e) * d + k] = cliques[e].second * d + k;
        }
    parts.push_back(sqdist_rows(gather(prototypes, std::move(li), {nb * P, d}),
                                gather(prototypes, std::move(ri), {nb * P, d})));
  }
  parts.push_back(sqd);
  if (!extras.empty()) {
    const std::size_t ne = extras.size();
    std::vector<std::size_t> li(ne * d), ri(ne * d);
    for (std::size_t e = 0; e < ne; ++e)
      for (std::size_t k = 0; k < d; ++k) {
        li[e * d + k] = extras[e].first * d + k;
        ri[e * d + k] = extras[e].second * d + k;
      }
    parts.push_back(sqdist_rows(gather(prototypes, std::move(li), {ne, d}),
                                gather(prototypes, std::move(ri), {ne, d})));
  }
  parts.push_back(tape.constant(Tensor::scalar(0.0)));
  Var table = concat(parts);

  Var energies = scale(sum_last(gather(table, std::move(idx), {nb, nets, width})),
                       1.0 / config.tau);  // [nb, nets]

  Tensor w({nb, nets});
  for (std::size_t j = 0; j < nb; ++j) {
    w.at(j, 0) = -1.0 / static_cast<double>(nb);
    for (std::size_t g = 1; g < nets; ++g)
      w.at(j, g) = 1.0 / (static_cast<double>(nb) * static_cast<double>(n_neg));
  }

  if (tally) {
    tally->mle_queries += nb;
    tally->prototype_pair += nb * P;
    tally->extra_edge += extras.size();
  }
  Var lik = exp(neg(energies));
  if (stats) {
    double pos = 0.0, negs = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      pos += lik.value().at(j, 0);
      for (std::size_t g = 1; g < nets; ++g) negs += lik.value().at(j, g);
    }
    stats->positive_mean = pos / static_cast<double>(nb);
    stats->negative_mean = negs / static_cast<double>(nb * n_neg);
  }
  Var contrast = config.mle_space == MleSpace::Raw ? lik : neg(energies);
  return sum(mul(contrast, tape.constant(std::move(w))));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

MrfModel::MrfModel(int sources, int classes, int input_dim,
                   const MrfConfig& config, Rng& rng)
    : config_(config),
      extractor_(static_cast<std::size_t>(input_dim),
                 static_cast<std::size_t>(config.extractor_hidden),
                 static_cast<std::size_t>(config.embed_dim), rng),
      bank_(PrototypeBank::learnable(sources + 1, classes, config.embed_dim, rng,
                                     config.init_variance)) {
  config.validate();
}

MrfLoss MrfModel::objective(Tape& tape, const data::MiniBatch& batch,
                            Rng& negatives) const {
  const QueryRows rows = QueryRows::from_batch(batch, classes());
  Var z = extractor_.forward(tape, tape.constant(stack_features(batch)));
  Var protos = tape.leaf(bank_.parameter());
  Var sqd = sqdist(z, protos);

  MrfLoss out;
  out.tally.queries = rows.size();
  out.tally.query_prototype = rows.size() * bank_.slots();

  Var probs = class_probabilities(joint_probabilities(sqd, config_.tau),
                                  domains(), classes());
  QueryTerms cls = query_losses(probs, rows);
  Var mle = loss_mle(sqd, protos, rows, config_, negatives, &out.stats, &out.tally);

  out.query_probs = probs.value();
  out.src = cls.src.item();
  out.tgt = cls.tgt.item();
  out.mle = mle.item();
  Var total = scale(mle, config_.use_mle ? config_.alpha : 0.0);
  if (config_.use_cls) total = add(total, add(cls.src, cls.tgt));
  out.total = total;
  return out;
}

Tensor MrfModel::predict(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != extractor_.input_dim())
    throw CheckpointError("feature dimension does not match the model");
  return mrf_predict(extractor_.embed(features), bank_.values(), domains(),
                     classes(), config_.tau).classes;
}

Tensor MrfModel::joint(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != extractor_.input_dim())
    throw CheckpointError("feature dimension does not match the model");
  return mrf_predict(extractor_.embed(features), bank_.values(), domains(),
                     classes(), config_.tau).joint;
}

std::vector<Tensor> MrfModel::category_probability_matrices(
    const Tensor& features, const std::vector<int>& labels) const {
  const Tensor j = joint(features);
  if (j.dim(0) != labels.size()) throw ContractError("one label per sample required");
  const auto K = static_cast<std::size_t>(classes());
  const auto D = static_cast<std::size_t>(domains());
  std::vector<Tensor> out(K, Tensor({D, K}));
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= K) throw ContractError("label out of range");
    ++counts[y];
    for (std::size_t s = 0; s < D * K; ++s) out[y][s] += j.at(i, s);
  }
  for (std::size_t k = 0; k < K; ++k)
    if (counts[k])
      for (auto& v : out[k].values()) v /= static_cast<double>(counts[k]);
  return out;
}

MleStats MrfModel::contrast(const Tensor& features, const std::vector<int>& labels,
                            int domain, Rng& rng) const {
  if (features.rank() != 2 || features.dim(1) != extractor_.input_dim())
    throw CheckpointError("feature dimension does not match the model");
  QueryRows rows;
  rows.domains = domains();
  rows.classes = classes();
  rows.label = labels;
  rows.domain.assign(labels.size(), domain);
  Tape tape(false);
  Var z = tape.constant(extractor_.embed(features));
  Var c = tape.constant(bank_.values());
  MleStats stats;
  loss_mle(sqdist(z, c), c, rows, config_, rng, &stats);
  return stats;
}

std::vector<Parameter*> MrfModel::parameters() {
  auto p = extractor_.parameters();
  p.push_back(&bank_.parameter());
  return p;
}

}  // namespace msda::mrf
