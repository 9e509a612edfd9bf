#pragma once

#include <cstdint>
#include <string>

#include "maskattn/attention.hpp"
#include "maskattn/diffusion.hpp"
#include "maskattn/gate.hpp"
#include "maskattn/optim.hpp"

// Flat key=value run configuration. '#' starts a comment, blank lines are
// skipped, and unknown or repeated keys are hard errors so a typo cannot
// silently fall back to a default.
namespace maskattn::cfg {

// "auto" picks the mode that suits the command: backbone training and the
// plain sampling path run with gates forced open until a gate phase has
// happened, everything after that is learned. The other values force it.
enum class GateChoice { auto_mode, off, forced_open, learned };

const std::string& gate_choice_name(GateChoice c);
GateChoice parse_gate_choice(const std::string& word);

struct RunConfig {
  std::uint64_t seed = 1234;
  std::string out_dir = "out";

  // model geometry
  int latent_hw = 16;
  int c_stem = 16;
  int c_down = 32;
  int d_model = 64;
  int n_heads = 2;
  int n_sites = 2;
  int n_tokens = 8;
  int vocab = 32;

  // noise schedule
  int t_steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // optimizer
  double lr_peak = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;

  // training loop
  int warmup_steps = 100;
  int steps_phase1 = 2000;
  int steps_phase2 = 1000;
  int batch = 8;
  int checkpoint_every = 500;

  // gating
  double lambda_train = 10.0;
  double lambda_infer = 1e9;
  GateChoice gate_mode = GateChoice::auto_mode;

  void validate() const;

  diff::UNetGeometry geometry() const;
  diff::NoiseSchedule schedule() const;
  optim::AdamWConfig adamw() const;
  optim::LrSchedule lr_schedule(int phase_steps) const;

  // the gate mode a command should run with, given what "auto" means there
  gate::GateMode resolved_gate_mode(gate::GateMode when_auto) const;
  attn::GateRun gate_run(gate::GateMode when_auto, bool infer) const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical form: every key except out_dir, fixed order, shortest exact
// decimal for floats. Checkpoints store this text, so two runs agree on
// their configuration exactly when these strings match; out_dir is left
// out because where artifacts land is not part of the experiment.
std::string to_text(const RunConfig& c);

}  // namespace maskattn::cfg
