#include "msda/source_only.hpp"

#include "msda/errors.hpp"
#include "msda/query_terms.hpp"

namespace msda {

SourceOnlyModel::SourceOnlyModel(int sources, int classes, int input_dim,
                                 const SourceOnlyConfig& config, Rng& rng)
    : sources_(sources), classes_(classes),
      extractor_(static_cast<std::size_t>(input_dim),
                 static_cast<std::size_t>(config.extractor_hidden),
                 static_cast<std::size_t>(config.embed_dim), rng),
      classifier_("classifier", static_cast<std::size_t>(config.embed_dim),
                  static_cast<std::size_t>(classes), rng) {}

SourceOnlyLoss SourceOnlyModel::objective(Tape& tape,
                                          const data::MiniBatch& batch) const {
  const QueryRows rows = QueryRows::from_batch(batch, classes_);
  Var z = extractor_.forward(tape, tape.constant(stack_features(batch)));
  Var probs = softmax(classifier_.forward(tape, z));
  QueryTerms t = query_losses(probs, rows);
  return {t.src, t.src.item(), probs.value()};
}

Tensor SourceOnlyModel::predict(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != extractor_.input_dim())
    throw CheckpointError("feature dimension does not match the model");
  Tape tape(false);
  Var z = extractor_.forward(tape, tape.constant(features));
  return softmax(classifier_.forward(tape, z)).value();
}

std::vector<Parameter*> SourceOnlyModel::parameters() {
  auto p = extractor_.parameters();
  p.push_back(&classifier_.weight);
  p.push_back(&classifier_.bias);
  return p;
}

}  // namespace msda
