#include "dxlm/numcore/rng.hpp"

#include <sstream>

#include "dxlm/numcore/errors.hpp"

namespace dxlm {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_ << ' ' << normal_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_ >> normal_;
  if (!in) throw CheckpointError("rng: malformed state string");
}

}  // namespace dxlm
