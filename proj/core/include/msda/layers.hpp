#pragma once

#include <string>
#include <vector>

#include "msda/autodiff.hpp"
#include "msda/rng.hpp"

namespace msda {

// Affine map x W + b.
struct Linear {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double gain = 1.0);

  Var forward(Tape& tape, Var x) const;
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

/// Feature extractor f: D -> hidden (ReLU) -> d (tanh), so embeddings lie in
/// [-1, 1]^d.
class Extractor {
 public:
  Extractor() = default;
  Extractor(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim,
            Rng& rng);

  Var forward(Tape& tape, Var x) const;
  Tensor embed(const Tensor& x) const;

  std::size_t input_dim() const { return hidden_.weight.value.dim(0); }
  std::size_t embed_dim() const { return out_.weight.value.dim(1); }
  std::vector<Parameter*> parameters();

 private:
  Linear hidden_;
  Linear out_;
};

}  // namespace msda
