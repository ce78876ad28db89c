#include "msda/rng.hpp"

#include <sstream>

#include "msda/errors.hpp"

namespace msda {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("malformed RNG state");
}

}  // namespace msda
