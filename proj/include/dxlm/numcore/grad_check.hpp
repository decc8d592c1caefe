#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dxlm/numcore/tensor.hpp"

namespace dxlm {

// 1e-4 in single precision, 1e-6 in double.
template <typename T>
constexpr T default_grad_eps() {
  return sizeof(T) == sizeof(float) ? T(1e-4) : T(1e-6);
}

template <typename T>
struct GradCheckOptions {
  T eps = default_grad_eps<T>();
  // 0 checks every entry; otherwise at most this many seeded-random entries
  // per parameter tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t sample_seed = 0;
};

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  T worst_analytic = T(0);
  T worst_numeric = T(0);
  std::vector<T> per_param_max;
  std::size_t entries_checked = 0;
};

// Compares reverse-mode gradients of `fn` against central differences:
// max over entries of |analytic - numeric| / max(1, |numeric|).
// `fn` must rebuild the graph from `params` on every call and be
// deterministic; two unperturbed evaluations that differ raise
// DeterminismError. Parameter grads are left cleared on return.
template <typename T>
GradCheckReport<T> grad_check_report(const std::function<Tensor<T>()>& fn,
                                     const std::vector<Tensor<T>>& params,
                                     const GradCheckOptions<T>& options = {});

template <typename T>
T grad_check(const std::function<Tensor<T>()>& fn, const std::vector<Tensor<T>>& params,
             T eps = default_grad_eps<T>());

}  // namespace dxlm
