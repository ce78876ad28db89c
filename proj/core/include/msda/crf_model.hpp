#pragma once

#include <span>
#include <string>
#include <vector>

#include "msda/autodiff.hpp"
#include "msda/batching.hpp"
#include "msda/layers.hpp"
#include "msda/prototype_bank.hpp"
#include "msda/query_terms.hpp"

namespace msda::crf {

enum class GcnNorm { Sym, Row, None };

std::string to_string(GcnNorm n);
GcnNorm parse_gcn_norm(const std::string& s);

struct CrfConfig {
  double lambda1 = 20.0;   // global alignment weight
  double lambda2 = 0.001;  // local compactness weight
  double sigma = 0.005;    // RBF bandwidth
  double beta = 0.7;       // prototype EMA decay
  int embed_dim = 8;
  int extractor_hidden = 32;
  int gcn_hidden = 8;
  int gcn_out = 8;
  GcnNorm norm = GcnNorm::Sym;
  bool final_relu = true;
  bool grad_through_estimate = true;
  bool use_cls = true;

  void validate() const;
};

/// A single query's relational graph: prototypes in slot order, query last.
struct RelationalGraph {
  Tensor nodes;      // [N, d], N = (M+1)K + 1
  Tensor adjacency;  // [N, N]
  double sigma = 1.0;
};

RelationalGraph build_graph(const Tensor& query, const Tensor& prototypes,
                            double sigma);

// Throws NumericError unless A is symmetric with unit diagonal and entries in
// [0, 1] (exact zeros only arise from float64 underflow).
void check_adjacency(const Tensor& adjacency);

/// Graphs for a batch of queries sharing one prototype set. The prototype
/// block of the kernel is evaluated once and reused for every query graph.
struct GraphBatch {
  Var nodes;            // [B, N, d]
  Var adjacency;        // [B, N, N]
  Var prototype_block;  // [(M+1)K, (M+1)K]
};

Var rbf_kernel(Var sqd, double sigma);
GraphBatch build_graphs(Var prototypes, Var queries, double sigma);
Var normalize_adjacency(Var adjacency, GcnNorm norm);

struct GcnParams {
  Parameter w1;  // [d, h]
  Parameter w2;  // [h, d']
  Linear classifier;

  GcnParams() = default;
  GcnParams(std::size_t d, std::size_t h, std::size_t d_out,
            std::size_t classes, Rng& rng);
  std::vector<Parameter*> parameters();
};

// H = act(Â relu(Â X W1) W2), act = relu when final_relu.
Var gcn_forward(const GraphBatch& graphs, const GcnParams& params, GcnNorm norm,
                bool final_relu);
// Node-wise softmax of the shared linear classifier: [B, N, K].
Var predict_labels(Var node_repr, const Linear& classifier);

struct ClsTerms {
  Var proto, src, tgt;
};

// Prototype CE averaged over graphs, per-domain source CE, target entropy.
ClsTerms loss_cls(Var probs, const QueryRows& rows);
Var loss_global(Var prototype_block, int domains, int classes);
// Domains whose every slot is defined: initialised in the bank or estimated
// from the labeled rows of the current batch.
std::vector<int> defined_domains(const PrototypeBank& bank, std::span<const int> row_slots);
// Rows and columns of the prototype block belonging to `domains`.
Var domain_block(Var prototype_block, std::span<const int> domains, int classes);
Var loss_local(Var embeddings, Var prototypes, std::span<const int> row_slots,
               std::size_t batch_total);

struct CrfLoss {
  Var total;
  double proto = 0, src = 0, tgt = 0, global = 0, local = 0;
  PrototypeEstimate estimate;  // batch estimate to commit after the step
  Tensor query_probs;          // [B, K] predictions of the query nodes
};

/// CRF-MSDA: extractor, EMA prototype bank, two-layer GCN and classifier.
class CrfModel {
 public:
  CrfModel(int sources, int classes, int input_dim, const CrfConfig& config,
           Rng& rng);

  const CrfConfig& config() const { return config_; }
  int domains() const { return bank_.domains(); }
  int classes() const { return bank_.classes(); }

  // Training objective for one batch. Reads but does not modify the bank.
  CrfLoss objective(Tape& tape, const data::MiniBatch& batch) const;
  void commit_prototypes(const PrototypeEstimate& estimate);

  // Class probabilities of each query row of `features`: [n, K].
  Tensor predict(const Tensor& features) const;
  Tensor prototype_adjacency() const;

  std::vector<Parameter*> parameters();  // excludes the prototype bank
  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }
  const Extractor& extractor() const { return extractor_; }
  const GcnParams& gcn() const { return gcn_; }

 private:
  CrfConfig config_;
  Extractor extractor_;
  GcnParams gcn_;
  PrototypeBank bank_;
};

}  // namespace msda::crf
