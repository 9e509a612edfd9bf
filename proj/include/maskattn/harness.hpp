#pragma once

#include <cstdint>
#include <string>

// The five CLI verbs, kept out of main() so tests can drive them in-process.
// Each command throws std::invalid_argument for usage and configuration
// problems; main maps that to exit code 1. A numeric-verification failure
// (grad-check breach) is reported through the return value instead, as exit
// code 2, because it is a finding, not a malfunction.
namespace maskattn::harness {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_verification = 2;

// The output directory, in order of precedence: the --out flag, the
// MASKATTN_OUT environment variable, the config's out_dir.
std::string resolve_out_dir(const std::string& flag, const std::string& config_out);

struct TrainArgs {
  std::string config_path;
  std::string phase = "backbone";  // backbone | gates
  std::string resume;              // checkpoint to continue from
  std::string out;                 // --out override, may be empty
};

struct SampleArgs {
  std::string checkpoint;
  std::string prompt;
  std::uint64_t seed = 1;
  std::string sampler = "ddim";  // ddim | ddpm
  int ddim_steps = 10;
  std::string gate_mode = "auto";
  std::string out;
};

struct InspectArgs {
  std::string checkpoint;
  std::string prompt;
  std::uint64_t seed = 1;
  int step = -1;  // diffusion timestep the inspected features sit at; -1 = t_steps/2
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  int n = 50;
  std::uint64_t seed = 1;
  std::string sampler = "ddim";
  int ddim_steps = 10;
  std::string gate_mode = "auto";
  bool ground_truth = false;  // score the reference renders instead of samples
  std::string out;
};

struct GradCheckArgs {
  std::string config_path;
  int seeds = 20;
};

int cmd_train(const TrainArgs& args);
int cmd_sample(const SampleArgs& args);
int cmd_inspect_masks(const InspectArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_grad_check(const GradCheckArgs& args);

}  // namespace maskattn::harness
