#include "dxlm/harness/optim.hpp"

#include <cmath>
#include <numbers>

namespace dxlm::harness {

void validate(const TrainConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be positive and finite");
    }
  };
  positive(c.peak_lr, "peak_lr");
  positive(c.final_lr, "final_lr");
  positive(c.tail_lr, "tail_lr");
  positive(c.adam_eps, "adam_eps");
  positive(c.clip_norm, "clip_norm");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
  if (!(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (c.seq_len == 0) throw ConfigError("seq_len must be >= 1");
  if (c.total_steps == 0) throw ConfigError("total_steps must be >= 1");
  if (c.batch_schedule.empty() || c.batch_schedule.front().first != 0) {
    throw ConfigError("batch_schedule must start at step 0");
  }
  for (std::size_t i = 0; i < c.batch_schedule.size(); ++i) {
    if (c.batch_schedule[i].second == 0) throw ConfigError("batch sizes must be >= 1");
    if (i > 0 && c.batch_schedule[i].first <= c.batch_schedule[i - 1].first) {
      throw ConfigError("batch_schedule steps must be strictly increasing");
    }
  }
}

void apply_schedule_proportions(TrainConfig& c) {
  const double n = static_cast<double>(c.total_steps);
  auto at = [n](double fraction) { return static_cast<std::size_t>(std::llround(fraction * n)); };
  const std::size_t warm_end = at(0.01);
  const std::size_t const_end = std::max(warm_end, at(10.0 / 12.3));
  const std::size_t decay_end = std::max(const_end, at(11.8 / 12.3));
  const std::size_t tail_end = std::max(decay_end, at(12.133 / 12.3));
  c.warmup_steps = warm_end;
  c.constant_steps = const_end - warm_end;
  c.decay_steps = decay_end - const_end;
  c.tail_steps = tail_end - decay_end;
}

double lr_at(std::size_t step, const TrainConfig& c) {
  const double s = static_cast<double>(step);
  if (step < c.warmup_steps) return c.peak_lr * s / static_cast<double>(c.warmup_steps);
  std::size_t edge = c.warmup_steps + c.constant_steps;
  if (step < edge) return c.peak_lr;
  if (step < edge + c.decay_steps) {
    const double t = (s - static_cast<double>(edge)) / static_cast<double>(c.decay_steps);
    return c.final_lr + 0.5 * (c.peak_lr - c.final_lr) * (1.0 + std::cos(std::numbers::pi * t));
  }
  edge += c.decay_steps;
  if (step < edge + c.tail_steps) return c.final_lr;
  return c.tail_lr;
}

std::size_t batch_size_at(std::size_t step, const TrainConfig& c) {
  std::size_t size = c.batch_schedule.front().second;
  for (const auto& [from, b] : c.batch_schedule) {
    if (step >= from) size = b;
  }
  return size;
}

template <typename T>
AdamState<T> AdamState<T>::make(const nn::ParamList<T>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), T(0));
    s.v.emplace_back(p.tensor.numel(), T(0));
  }
  return s;
}

template <typename T>
double grad_norm(const nn::ParamList<T>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(const nn::ParamList<T>& params, double clip_norm) {
  const double norm = grad_norm(params);
  if (norm > clip_norm) {
    const T factor = static_cast<T>(clip_norm / norm);
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      auto t = p.tensor;
      for (T& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
void adamw_step(const nn::ParamList<T>& params, AdamState<T>& state, const TrainConfig& c,
                double lr) {
  if (state.m.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, model has " + std::to_string(params.size()));
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
  const T b1 = static_cast<T>(c.adam_beta1), b2 = static_cast<T>(c.adam_beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor;
    if (!p.requires_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto data = p.mutable_data();
    const bool has = p.has_grad();
    const T* g = has ? p.grad().data() : nullptr;
    const double decay = p.rank() >= 2 ? lr * c.weight_decay : 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T gj = has ? g[j] : T(0);
      if (!std::isfinite(gj)) {
        throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
      }
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      double w = static_cast<double>(data[j]);
      w -= decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + c.adam_eps);
      data[j] = static_cast<T>(w);
    }
    p.zero_grad();
  }
}

#define DXLM_INSTANTIATE_OPTIM(T)                                                              \
  template struct AdamState<T>;                                                                \
  template double grad_norm(const nn::ParamList<T>&);                                          \
  template double clip_grad_norm(const nn::ParamList<T>&, double);                             \
  template void adamw_step(const nn::ParamList<T>&, AdamState<T>&, const TrainConfig&, double);

DXLM_INSTANTIATE_OPTIM(float)
DXLM_INSTANTIATE_OPTIM(double)

}  // namespace dxlm::harness
