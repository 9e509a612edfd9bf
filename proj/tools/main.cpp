#include <cstdio>
#include <exception>

#include "CLI11.hpp"
#include "maskattn/harness.hpp"

int main(int argc, char** argv) {
  using namespace maskattn;

  CLI::App app{"toy latent diffusion with learnable binary gates on cross-attention"};
  app.require_subcommand(1);

  harness::TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "run one training phase");
  cmd_train->add_option("config", train.config_path, "key=value config file")->required();
  cmd_train->add_option("--phase", train.phase, "backbone or gates")->capture_default_str();
  cmd_train->add_option("--resume", train.resume, "checkpoint to continue from");
  cmd_train->add_option("--out", train.out, "output directory (beats MASKATTN_OUT and config)");

  harness::SampleArgs sample;
  CLI::App* cmd_sample = app.add_subcommand("sample", "denoise one prompt into a PPM image");
  cmd_sample->add_option("checkpoint", sample.checkpoint, "trained checkpoint")->required();
  cmd_sample->add_option("--prompt", sample.prompt, "e.g. \"red square left and blue circle right\"")
      ->required();
  cmd_sample->add_option("--seed", sample.seed, "sampling seed")->capture_default_str();
  cmd_sample->add_option("--sampler", sample.sampler, "ddim or ddpm")->capture_default_str();
  cmd_sample->add_option("--ddim-steps", sample.ddim_steps, "denoising strides for ddim")
      ->capture_default_str();
  cmd_sample->add_option("--gate-mode", sample.gate_mode, "auto, off, forced_open, or learned")
      ->capture_default_str();
  cmd_sample->add_option("--out", sample.out, "output directory");

  harness::InspectArgs inspect;
  CLI::App* cmd_inspect = app.add_subcommand("inspect-masks", "dump hard gates as PGM maps");
  cmd_inspect->add_option("checkpoint", inspect.checkpoint, "trained checkpoint")->required();
  cmd_inspect->add_option("--prompt", inspect.prompt, "scene caption to gate")->required();
  cmd_inspect->add_option("--seed", inspect.seed, "noise seed for the inspected latent")
      ->capture_default_str();
  cmd_inspect->add_option("--step", inspect.step, "diffusion timestep (default: t_steps/2)");
  cmd_inspect->add_option("--out", inspect.out, "output directory");

  harness::EvalArgs eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "score held-out two-object prompts");
  cmd_eval->add_option("checkpoint", eval.checkpoint, "trained checkpoint")->required();
  cmd_eval->add_option("--n", eval.n, "number of held-out scenes")->capture_default_str();
  cmd_eval->add_option("--seed", eval.seed, "scene choice and sampling seed")
      ->capture_default_str();
  cmd_eval->add_option("--sampler", eval.sampler, "ddim or ddpm")->capture_default_str();
  cmd_eval->add_option("--ddim-steps", eval.ddim_steps, "denoising strides for ddim")
      ->capture_default_str();
  cmd_eval->add_option("--gate-mode", eval.gate_mode, "auto, off, forced_open, or learned")
      ->capture_default_str();
  cmd_eval->add_flag("--ground-truth", eval.ground_truth,
                     "score the reference renders instead of model samples");
  cmd_eval->add_option("--out", eval.out, "output directory");

  harness::GradCheckArgs gc;
  CLI::App* cmd_gc = app.add_subcommand("grad-check", "finite-difference check of every graph");
  cmd_gc->add_option("config", gc.config_path, "key=value config file")->required();
  cmd_gc->add_option("--seeds", gc.seeds, "random draws per registered graph")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? harness::exit_ok : harness::exit_usage;
  }

  try {
    if (cmd_train->parsed()) return harness::cmd_train(train);
    if (cmd_sample->parsed()) return harness::cmd_sample(sample);
    if (cmd_inspect->parsed()) return harness::cmd_inspect_masks(inspect);
    if (cmd_eval->parsed()) return harness::cmd_eval(eval);
    if (cmd_gc->parsed()) return harness::cmd_grad_check(gc);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return harness::exit_usage;
  }
  return harness::exit_usage;
}
