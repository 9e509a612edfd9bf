#include "maskattn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace maskattn::optim {

void AdamWState::init(const std::vector<Tensor>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adamw_step: state holds " + std::to_string(state.m.size()) +
                                " slots for " + std::to_string(params.size()) + " parameters");
  if (lr < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  ++state.step;
  double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != p.numel())
      throw std::invalid_argument("adamw_step: slot " + std::to_string(i) + " sized " +
                                  std::to_string(state.m[i].size()) + " for parameter of " +
                                  std::to_string(p.numel()) + " elements");
    const std::vector<double>& g = p.grad();
    for (std::size_t j = 0; j < g.size(); ++j) {
      state.m[i][j] = state.cfg.beta1 * state.m[i][j] + (1.0 - state.cfg.beta1) * g[j];
      state.v[i][j] = state.cfg.beta2 * state.v[i][j] + (1.0 - state.cfg.beta2) * g[j] * g[j];
      double m_hat = state.m[i][j] / bc1;
      double v_hat = state.v[i][j] / bc2;
      p.data()[j] -= lr * (m_hat / (std::sqrt(v_hat) + state.cfg.eps) +
                           state.cfg.weight_decay * p.data()[j]);
    }
  }
}

double lr_at(int step, const LrSchedule& sched) {
  if (step < 0 || step > sched.total_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(sched.total_steps) + "]");
  if (sched.warmup_steps < 0 || sched.warmup_steps > sched.total_steps)
    throw std::invalid_argument("lr_at: warmup longer than the run");
  if (step < sched.warmup_steps)
    return sched.lr_peak * static_cast<double>(step) / sched.warmup_steps;
  if (sched.total_steps == sched.warmup_steps) return sched.lr_peak;
  double frac = static_cast<double>(step - sched.warmup_steps) /
                (sched.total_steps - sched.warmup_steps);
  return sched.lr_peak * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846));
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  auto global_norm = [&params] {
    double sq = 0.0;
    for (Tensor& p : params)
      for (double g : p.grad()) sq += g * g;
    return std::sqrt(sq);
  };
  double norm = global_norm();
  // Rounding can leave the rescaled norm a hair above the cap, so the scaling
  // repeats until the cap holds or the values stop moving. That makes a second
  // clip call a bitwise no-op instead of a last-ulp shuffle.
  for (double cur = norm; cur > max_norm;) {
    double s = max_norm / cur;
    bool moved = false;
    for (Tensor& p : params)
      for (double& g : p.grad()) {
        double next = g * s;
        moved |= next != g;
        g = next;
      }
    if (!moved) break;
    cur = global_norm();
  }
  return norm;
}

std::vector<StepRecord> train_phase(diff::ToyUNet& model, const diff::NoiseSchedule& sched,
                                    const BatchFn& next_batch, const TrainConfig& cfg,
                                    const std::function<bool(const std::string&)>& trainable,
                                    const attn::GateRun& run, AdamWState& state,
                                    int start_step, const StepHook& after_step) {
  auto named = diff::named_params(model);
  std::vector<Tensor> live;
  for (auto& [name, p] : named) {
    bool on = trainable(name);
    p.set_requires_grad(on);
    if (on) live.push_back(p);
  }
  if (live.empty() && cfg.steps > start_step)
    throw std::invalid_argument("train_phase: no trainable parameters selected");
  if (state.m.empty()) state.init(live);

  std::vector<StepRecord> trace;
  for (int step = start_step + 1; step <= cfg.steps; ++step) {
    diff::LatentBatch batch = next_batch(step);
    for (Tensor& p : live) p.zero_grad();
    Tape tape;
    Tensor loss = diff::training_loss(tape, model, batch, sched, run);
    tape.backward(loss);
    clip_grad_norm(live, cfg.clip_norm);
    double lr = lr_at(step, cfg.sched);
    adamw_step(live, state, lr);
    trace.push_back({step, lr, loss.item()});
    if (after_step) after_step(step, state);
  }
  // leave the model fully differentiable for whoever uses it next
  for (auto& [name, p] : named) p.set_requires_grad(true);
  return trace;
}

}  // namespace maskattn::optim
