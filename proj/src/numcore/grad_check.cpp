#include "dxlm/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dxlm/numcore/rng.hpp"

namespace dxlm {

namespace {

template <typename T>
T evaluate(const std::function<Tensor<T>()>& fn) {
  NoGradGuard no_grad;
  Tensor<T> loss = fn();
  if (loss.numel() != 1) {
    throw ContractError("grad_check: function must return a scalar, got " +
                        shape_str(loss.shape()));
  }
  return loss.item();
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

template <typename T>
GradCheckReport<T> grad_check_report(const std::function<Tensor<T>()>& fn,
                                     const std::vector<Tensor<T>>& params,
                                     const GradCheckOptions<T>& options) {
  if (!(options.eps > T(0))) throw ContractError("grad_check: eps must be positive");
  std::vector<Tensor<T>> ps = params;
  for (auto& p : ps) p.zero_grad();

  Tensor<T> loss = fn();
  if (loss.numel() != 1) {
    throw ContractError("grad_check: function must return a scalar, got " +
                        shape_str(loss.shape()));
  }
  const T base = loss.item();
  loss.backward();
  loss = Tensor<T>();

  const T again = evaluate(fn);
  if (again != base) {
    throw DeterminismError("grad_check: two evaluations differ (" + std::to_string(base) +
                           " vs " + std::to_string(again) + ")");
  }

  std::vector<std::vector<T>> analytic;
  analytic.reserve(ps.size());
  for (auto& p : ps) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), T(0));
    }
    p.zero_grad();
  }

  GradCheckReport<T> report;
  report.per_param_max.assign(ps.size(), T(0));
  Rng rng(options.sample_seed);
  const T eps = options.eps;
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    auto values = ps[pi].mutable_data();
    for (std::size_t i : pick_entries(values.size(), options.max_entries_per_param, rng)) {
      const T saved = values[i];
      values[i] = saved + eps;
      const T up = evaluate(fn);
      values[i] = saved - eps;
      const T down = evaluate(fn);
      values[i] = saved;
      const T numeric = (up - down) / (T(2) * eps);
      const T err = std::abs(analytic[pi][i] - numeric) / std::max(T(1), std::abs(numeric));
      ++report.entries_checked;
      report.per_param_max[pi] = std::max(report.per_param_max[pi], err);
      if (err > report.max_rel_err || report.entries_checked == 1) {
        report.max_rel_err = std::max(report.max_rel_err, err);
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = analytic[pi][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template <typename T>
T grad_check(const std::function<Tensor<T>()>& fn, const std::vector<Tensor<T>>& params, T eps) {
  GradCheckOptions<T> options;
  options.eps = eps;
  return grad_check_report(fn, params, options).max_rel_err;
}

template GradCheckReport<float> grad_check_report(const std::function<Tensor<float>()>&,
                                                  const std::vector<Tensor<float>>&,
                                                  const GradCheckOptions<float>&);
template GradCheckReport<double> grad_check_report(const std::function<Tensor<double>()>&,
                                                   const std::vector<Tensor<double>>&,
                                                   const GradCheckOptions<double>&);
template float grad_check(const std::function<Tensor<float>()>&,
                          const std::vector<Tensor<float>>&, float);
template double grad_check(const std::function<Tensor<double>()>&,
                           const std::vector<Tensor<double>>&, double);

}  // namespace dxlm
