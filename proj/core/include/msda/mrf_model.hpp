#pragma once

#include <string>
#include <vector>

#include "msda/autodiff.hpp"
#include "msda/batching.hpp"
#include "msda/layers.hpp"
#include "msda/markov_network.hpp"
#include "msda/prototype_bank.hpp"
#include "msda/query_terms.hpp"

namespace msda::mrf {

enum class MleSpace { Raw, Log };

std::string to_string(MleSpace s);
MleSpace parse_mle_space(const std::string& s);

struct MrfConfig {
  double tau = 0.1;    // energy temperature
  double alpha = 1.0;  // MLE trade-off
  int n2 = 6;          // extra-edge negatives per query
  int embed_dim = 8;
  int extractor_hidden = 32;
  double init_variance = 0.01;
  MleSpace mle_space = MleSpace::Raw;
  bool use_cls = true;
  bool use_mle = true;

  int negatives(int classes) const { return n2 + classes - 1; }
  void validate() const;
};

/// Energy evaluations performed while building one objective.
struct EnergyTally {
  std::size_t queries = 0;          // rows of the batch
  std::size_t mle_queries = 0;      // rows with a (pseudo) label
  std::size_t query_prototype = 0;  // ||z_q - c^m_k||^2 terms
  std::size_t prototype_pair = 0;   // clique edges, evaluated per query
  std::size_t extra_edge = 0;       // added edges of type-2 negatives
};

struct MleStats {
  double positive_mean = 0.0;  // mean p~ of positive networks
  double negative_mean = 0.0;  // mean p~ over all negative networks
};

// p(y_d = m, y = k | q) for every query row, [n, (M+1)K], computed as a
// softmax over -||z - c||^2 / tau (the shared clique energy cancels).
Var joint_probabilities(Var sqd, double tau);
// Sums the joint over domains: [n, (M+1)K] -> [n, K].
Var class_probabilities(Var joint, int domains, int classes);

enum class PredictMode { LogSumExp, Direct };

struct Prediction {
  Tensor classes;  // [n, K]
  Tensor joint;    // [n, (M+1)K], slot order
};

// `queries` is [n, d]; `prototypes` is [(M+1)K, d]. Direct mode enumerates
// every prediction network and normalizes exp(-energy) without cancellation.
Prediction mrf_predict(const Tensor& queries, const Tensor& prototypes,
                       int domains, int classes, double tau,
                       PredictMode mode = PredictMode::LogSumExp);

/// Contrastive MLE term over the labeled rows of `rows`. `sqd` holds the
/// query-prototype squared distances [n, (M+1)K]. Negatives are drawn from
/// `rng` in row order, one sample_negatives() call per labeled row.
Var loss_mle(Var sqd, Var prototypes, const QueryRows& rows,
             const MrfConfig& config, Rng& rng, MleStats* stats = nullptr,
             EnergyTally* tally = nullptr);

struct MrfLoss {
  Var total;
  double src = 0, tgt = 0, mle = 0;
  MleStats stats;
  EnergyTally tally;
  Tensor query_probs;  // [n, K]
};

/// MRF-MSDA: extractor and learnable prototype bank.
class MrfModel {
 public:
  MrfModel(int sources, int classes, int input_dim, const MrfConfig& config,
           Rng& rng);

  const MrfConfig& config() const { return config_; }
  int domains() const { return bank_.domains(); }
  int classes() const { return bank_.classes(); }
  NetworkLayout layout() const { return {domains(), classes()}; }

  MrfLoss objective(Tape& tape, const data::MiniBatch& batch,
                    Rng& negatives) const;

  Tensor predict(const Tensor& features) const;  // [n, K]
  Tensor joint(const Tensor& features) const;    // [n, (M+1)K]

  // Mean joint matrix [(M+1), K] over the samples of each true category.
  std::vector<Tensor> category_probability_matrices(
      const Tensor& features, const std::vector<int>& labels) const;

  // Positive vs negative likelihoods of labeled queries from domain `domain`.
  MleStats contrast(const Tensor& features, const std::vector<int>& labels,
                    int domain, Rng& rng) const;

  std::vector<Parameter*> parameters();  // extractor, then prototypes
  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }
  const Extractor& extractor() const { return extractor_; }

 private:
  MrfConfig config_;
  Extractor extractor_;
  PrototypeBank bank_;
};

}  // namespace msda::mrf
