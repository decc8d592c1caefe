#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dxlm/nnblocks/nn.hpp"

namespace dxlm::harness {

struct TrainConfig {
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;

  double peak_lr = 2e-3;
  double final_lr = 2e-4;
  double tail_lr = 2e-4 * 7.3 / 22.0;
  std::size_t warmup_steps = 30;
  std::size_t constant_steps = 2409;
  std::size_t decay_steps = 439;
  std::size_t tail_steps = 81;  // at final_lr; every later step uses tail_lr

  // (first step, batch size) pairs in increasing step order, starting at 0.
  std::vector<std::pair<std::size_t, std::size_t>> batch_schedule{{0, 16}};
  std::size_t seq_len = 128;
  std::size_t total_steps = 3000;
  std::uint64_t seed = 1234;
};

void validate(const TrainConfig& c);

// Phase lengths for `total_steps` following the reference run's proportions:
// 1% warmup, constant until 81.3%, cosine decay over the next 14.63%, then
// 2.71% at final_lr and the rest at tail_lr.
void apply_schedule_proportions(TrainConfig& c);

// Linear warmup from 0, constant peak, cosine decay to final_lr, then the
// two-level constant tail (hard switch to tail_lr).
double lr_at(std::size_t step, const TrainConfig& c);

std::size_t batch_size_at(std::size_t step, const TrainConfig& c);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // one moment buffer per parameter
  std::uint64_t t = 0;

  static AdamState make(const nn::ParamList<T>& params);
};

// Global L2 norm of every gradient (missing gradients count as zero); if it
// exceeds clip_norm every gradient is scaled by clip_norm / norm. Returns the
// pre-clip norm. Throws NumericError naming the first non-finite gradient.
template <typename T>
double clip_grad_norm(const nn::ParamList<T>& params, double clip_norm);

template <typename T>
double grad_norm(const nn::ParamList<T>& params);

// Decoupled-weight-decay Adam step with bias correction, then zero grads.
// Decay applies to matrices only (rank >= 2). Parameters that do not require
// gradients are left untouched.
template <typename T>
void adamw_step(const nn::ParamList<T>& params, AdamState<T>& state, const TrainConfig& c,
                double lr);

}  // namespace dxlm::harness
