#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskattn/diffusion.hpp"
#include "maskattn/tensor.hpp"

// AdamW with decoupled weight decay, linear-warmup cosine learning-rate
// schedule, global-norm gradient clipping, and the two-phase training loop
// (backbone first, then only the gate heads on a frozen backbone).

namespace maskattn::optim {

struct AdamWConfig {
  double lr_peak = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  AdamWConfig cfg;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // parallel to the parameter list

  void init(const std::vector<Tensor>& params);
};

// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
// with bias-corrected moments. Parameters must match the state layout.
void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr);

struct LrSchedule {
  int warmup_steps = 100;
  int total_steps = 2000;
  double lr_peak = 1e-4;
};

// Linear 0 -> lr_peak over the warmup, then cosine decay to 0 at total_steps.
double lr_at(int step, const LrSchedule& sched);

// Scales every gradient by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

struct TrainConfig {
  int steps = 2000;
  int batch = 8;
  double clip_norm = 1.0;
  LrSchedule sched;
  AdamWConfig adamw;
};

struct StepRecord {
  int step;
  double lr;
  double loss;
};

using BatchFn = std::function<diff::LatentBatch(int step)>;
using StepHook = std::function<void(int step, const AdamWState& state)>;

// Runs loss -> backward -> clip -> adamw for cfg.steps steps, updating only
// parameters the filter accepts; everything else is frozen bitwise. Gradient
// bookkeeping is restricted to the trainable set by switching requires_grad,
// so frozen subgraphs cost nothing in backward. start_step > 0 resumes an
// interrupted run (the per-step batch stream makes the trace identical to an
// uninterrupted one). Returns one record per executed step.
std::vector<StepRecord> train_phase(diff::ToyUNet& model, const diff::NoiseSchedule& sched,
                                    const BatchFn& next_batch, const TrainConfig& cfg,
                                    const std::function<bool(const std::string&)>& trainable,
                                    const attn::GateRun& run, AdamWState& state,
                                    int start_step = 0, const StepHook& after_step = nullptr);

}  // namespace maskattn::optim
