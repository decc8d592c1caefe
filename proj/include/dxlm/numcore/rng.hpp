#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dxlm {

// Seeded generator whose full state can be serialized for checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal(double mean, double stddev) {
    return normal_(engine_, std::normal_distribution<double>::param_type(mean, stddev));
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace dxlm
