#include "msda/layers.hpp"

#include <cmath>

namespace msda {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, double gain)
    : weight(name + ".weight", Tensor({in, out})),
      bias(name + ".bias", Tensor({out}), /*wd=*/false) {
  std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(in)));
  for (auto& v : weight.value.values()) v = g(rng);
}

Var Linear::forward(Tape& tape, Var x) const {
  return add_bias(matmul(x, tape.leaf(weight)), tape.leaf(bias));
}

Extractor::Extractor(std::size_t input_dim, std::size_t hidden,
                     std::size_t embed_dim, Rng& rng)
    : hidden_("extractor.hidden", input_dim, hidden, rng, std::sqrt(2.0)),
      out_("extractor.out", hidden, embed_dim, rng) {}

Var Extractor::forward(Tape& tape, Var x) const {
  return tanh(out_.forward(tape, relu(hidden_.forward(tape, x))));
}

Tensor Extractor::embed(const Tensor& x) const {
  Tape tape(false);
  return forward(tape, tape.constant(x)).value();
}

std::vector<Parameter*> Extractor::parameters() {
  return {&hidden_.weight, &hidden_.bias, &out_.weight, &out_.bias};
}

}  // namespace msda
