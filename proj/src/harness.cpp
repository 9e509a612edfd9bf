#include "maskattn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskattn/checkpoint.hpp"
#include "maskattn/config.hpp"
#include "maskattn/diffusion.hpp"
#include "maskattn/grad_check.hpp"
#include "maskattn/image_io.hpp"
#include "maskattn/optim.hpp"
#include "maskattn/rng.hpp"
#include "maskattn/scenes.hpp"

namespace maskattn::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

diff::Sampler parse_sampler(const std::string& s) {
  if (s == "ddpm") return diff::Sampler::ddpm;
  if (s == "ddim") return diff::Sampler::ddim;
  throw std::invalid_argument("--sampler must be ddpm or ddim, got \"" + s + "\"");
}

// flag beats config; "auto" resolves against what the command would pick
gate::GateMode effective_gate_mode(const cfg::RunConfig& c, const std::string& flag,
                                   gate::GateMode when_auto) {
  cfg::GateChoice choice = cfg::parse_gate_choice(flag);
  if (choice == cfg::GateChoice::auto_mode) choice = c.gate_mode;
  cfg::RunConfig picked = c;
  picked.gate_mode = choice;
  return picked.resolved_gate_mode(when_auto);
}

const char* gate_mode_name(gate::GateMode m) {
  switch (m) {
    case gate::GateMode::learned: return "learned";
    case gate::GateMode::forced_open: return "forced_open";
    case gate::GateMode::off: return "off";
  }
  return "?";
}

// Everything a checkpoint-consuming command needs: the stored configuration
// and a model rebuilt from the stored parameters.
struct LoadedRun {
  ckpt::Checkpoint ck;
  cfg::RunConfig config;
  diff::ToyUNet model;
  diff::NoiseSchedule sched;
};

LoadedRun load_run(const std::string& path) {
  ckpt::Checkpoint ck = ckpt::read_checkpoint(path);
  cfg::RunConfig c = cfg::parse_config(ck.config_text);
  Rng init_rng = Rng(c.seed).fork("init");
  diff::ToyUNet model = diff::init_unet(init_rng, c.geometry(), c.t_steps);
  ckpt::load_params(ck, model);
  diff::NoiseSchedule sched = c.schedule();
  return {std::move(ck), std::move(c), std::move(model), std::move(sched)};
}

std::vector<int> prompt_tokens(const std::string& prompt, const cfg::RunConfig& c) {
  std::vector<int> tokens = scenes::parse_prompt(prompt);
  if (static_cast<int>(tokens.size()) != c.n_tokens)
    throw std::invalid_argument("model expects " + std::to_string(c.n_tokens) +
                                " tokens per prompt, captions carry " +
                                std::to_string(tokens.size()));
  for (int id : tokens)
    if (id >= c.vocab)
      throw std::invalid_argument("token id " + std::to_string(id) +
                                  " is outside the model vocabulary of " +
                                  std::to_string(c.vocab));
  return tokens;
}

Tensor scene_latent(const scenes::SceneSpec& s, int hw) {
  Tensor im = scenes::render_scene(s, hw);
  Tensor z0 = Tensor::zeros(im.shape());
  for (std::size_t i = 0; i < z0.numel(); ++i) z0.data()[i] = 2.0 * im.data()[i] - 1.0;
  return z0;
}

optim::BatchFn make_batches(const cfg::RunConfig& c, const Rng& data_root) {
  return [c, data_root](int step) {
    Rng sr = data_root.fork(static_cast<std::uint64_t>(step));
    diff::LatentBatch b;
    for (int i = 0; i < c.batch; ++i) {
      scenes::SceneSpec s = scenes::sample_train_scene(sr);
      b.tokens.push_back(scenes::caption_of(s));
      b.z0.push_back(scene_latent(s, c.latent_hw));
      b.t.push_back(static_cast<int>(sr.next_below(static_cast<std::uint64_t>(c.t_steps))));
      Tensor eps = Tensor::zeros({c.geometry().latent_ch, c.latent_hw, c.latent_hw});
      for (double& v : eps.data()) v = sr.normal();
      b.eps.push_back(std::move(eps));
    }
    return b;
  };
}

}  // namespace

std::string resolve_out_dir(const std::string& flag, const std::string& config_out) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MASKATTN_OUT"); env && *env) return env;
  return config_out;
}

int cmd_train(const TrainArgs& args) {
  cfg::RunConfig c = cfg::load_config(args.config_path);
  std::string out = resolve_out_dir(args.out, c.out_dir);
  fs::create_directories(out);

  bool gates_phase;
  if (args.phase == "backbone")
    gates_phase = false;
  else if (args.phase == "gates")
    gates_phase = true;
  else
    throw std::invalid_argument("--phase must be backbone or gates, got \"" + args.phase + "\"");
  const char* phase_name = gates_phase ? "gates" : "backbone";
  std::uint32_t phase_tag = gates_phase ? ckpt::phase_gates : ckpt::phase_backbone;
  int total = gates_phase ? c.steps_phase2 : c.steps_phase1;

  Rng root(c.seed);
  Rng init_rng = root.fork("init");
  diff::ToyUNet model = diff::init_unet(init_rng, c.geometry(), c.t_steps);
  diff::NoiseSchedule sched = c.schedule();

  std::function<bool(const std::string&)> trainable =
      gates_phase
          ? std::function<bool(const std::string&)>(
                [](const std::string& n) { return n.find(".gate.") != std::string::npos; })
          : std::function<bool(const std::string&)>(
                [](const std::string& n) { return n.find(".gate.") == std::string::npos; });
  std::vector<std::string> trainable_names;
  for (const auto& [name, p] : diff::named_params(model))
    if (trainable(name)) trainable_names.push_back(name);

  optim::AdamWState state;
  state.cfg = c.adamw();
  int start_step = 0;
  std::string cfg_text = cfg::to_text(c);

  if (!args.resume.empty()) {
    ckpt::Checkpoint ck = ckpt::read_checkpoint(args.resume);
    if (ck.config_text != cfg_text)
      throw std::invalid_argument(args.resume + " was produced with a different configuration");
    ckpt::load_params(ck, model);
    if (ck.phase == phase_tag) {
      if (static_cast<int>(ck.step) >= total)
        throw std::invalid_argument(args.resume + " already holds " + std::to_string(ck.step) +
                                    " of " + std::to_string(total) + " steps; nothing to train");
      start_step = static_cast<int>(ck.step);
      state = ckpt::restore_opt(ck, trainable_names, c.adamw());
    } else if (gates_phase && ck.phase == ckpt::phase_backbone) {
      // fresh gate phase on top of the trained backbone; optimizer starts clean
    } else {
      throw std::invalid_argument("--phase backbone cannot resume from a gates checkpoint");
    }
  } else if (gates_phase) {
    throw std::invalid_argument("--phase gates needs --resume with a backbone checkpoint");
  }

  attn::GateRun run =
      c.gate_run(gates_phase ? gate::GateMode::learned : gate::GateMode::forced_open, false);

  optim::TrainConfig tc;
  tc.steps = total;
  tc.batch = c.batch;
  tc.clip_norm = c.clip_norm;
  tc.sched = c.lr_schedule(total);
  tc.adamw = c.adamw();

  optim::BatchFn batches = make_batches(c, root.fork(gates_phase ? "data-gates" : "data-backbone"));
  optim::StepHook hook = [&](int step, const optim::AdamWState& st) {
    if (step % c.checkpoint_every != 0 || step == total) return;  // the final write covers total
    ckpt::Checkpoint snap = ckpt::snapshot(model, phase_tag, static_cast<std::uint64_t>(step),
                                           cfg_text);
    ckpt::attach_opt(snap, trainable_names, st);
    ckpt::write_checkpoint(out + "/" + phase_name + "_step" + std::to_string(step) + ".ckpt",
                           snap);
  };

  std::vector<optim::StepRecord> records =
      optim::train_phase(model, sched, batches, tc, trainable, run, state, start_step, hook);

  ckpt::Checkpoint fin =
      ckpt::snapshot(model, phase_tag, static_cast<std::uint64_t>(total), cfg_text);
  ckpt::attach_opt(fin, trainable_names, state);
  std::string fin_path = out + "/" + phase_name + "_final.ckpt";
  ckpt::write_checkpoint(fin_path, fin);

  std::string csv = "step,lr,loss\n";
  for (const auto& r : records)
    csv += std::to_string(r.step) + "," + fmt_g17(r.lr) + "," + fmt_g17(r.loss) + "\n";
  write_text(out + "/loss_" + phase_name + ".csv", csv);

  std::printf("%s phase (%s gates): steps %d..%d done, checkpoint %s\n", phase_name,
              gate_mode_name(run.mode), start_step + 1, total, fin_path.c_str());
  int k = std::min<int>(100, static_cast<int>(records.size()));
  if (k > 0) {
    double first = 0.0, last = 0.0;
    for (int i = 0; i < k; ++i) {
      first += records[static_cast<std::size_t>(i)].loss;
      last += records[records.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    first /= k;
    last /= k;
    std::printf("loss: first-%d mean %.6f, last-%d mean %.6f (ratio %.4f)\n", k, first, k, last,
                last / first);
  }
  return exit_ok;
}

int cmd_sample(const SampleArgs& args) {
  if (args.ddim_steps < 1) throw std::invalid_argument("--ddim-steps must be at least 1");
  LoadedRun run = load_run(args.checkpoint);
  std::vector<int> tokens = prompt_tokens(args.prompt, run.config);
  diff::Sampler kind = parse_sampler(args.sampler);
  gate::GateMode mode =
      effective_gate_mode(run.config, args.gate_mode,
                          run.ck.phase == ckpt::phase_gates ? gate::GateMode::learned
                                                            : gate::GateMode::forced_open);
  attn::GateRun gr{mode, attn::GatePath::hard, run.config.lambda_infer};

  Tensor z = diff::sample(run.model, run.sched, tokens, args.seed, kind, gr, args.ddim_steps);
  Tensor im = img::latent_to_image(z);

  std::string out = resolve_out_dir(args.out, run.config.out_dir);
  fs::create_directories(out);
  std::string path =
      out + "/sample_" + args.sampler + "_seed" + std::to_string(args.seed) + ".ppm";
  img::write_ppm(path, img::planes_to_rgb8(im));
  std::printf("wrote %s (gates %s)\n", path.c_str(), gate_mode_name(mode));

  try {
    scenes::SceneSpec s = scenes::scene_of_caption(tokens);
    scenes::ComplianceReport rep = scenes::compliance_score(im, s);
    std::printf("compliance: presence %.3f binding %.3f placement %.3f total %.3f\n",
                rep.presence, rep.binding, rep.placement, rep.total);
  } catch (const std::invalid_argument&) {
    // prompt is valid vocabulary but not a scene caption; nothing to score
  }
  return exit_ok;
}

int cmd_inspect_masks(const InspectArgs& args) {
  LoadedRun run = load_run(args.checkpoint);
  const cfg::RunConfig& c = run.config;
  std::vector<int> tokens = prompt_tokens(args.prompt, c);
  scenes::SceneSpec scene = scenes::scene_of_caption(tokens);

  int t = args.step < 0 ? c.t_steps / 2 : args.step;
  if (t < 0 || t >= c.t_steps)
    throw std::invalid_argument("--step must lie in [0, " + std::to_string(c.t_steps) + ")");

  Rng rng = Rng(args.seed).fork("inspect");
  Tensor z0 = scene_latent(scene, c.latent_hw);
  Tensor eps = Tensor::zeros(z0.shape());
  for (double& v : eps.data()) v = rng.normal();
  Tensor z_t = diff::q_sample(z0, t, eps, run.sched);

  attn::GateRun gr{gate::GateMode::learned, attn::GatePath::hard, c.lambda_infer};
  std::vector<attn::BlockTrace> traces;
  Tape tape;
  diff::unet_forward(tape, run.model, z_t, t, tokens, gr, &traces);
  tape.clear();

  std::string out = resolve_out_dir(args.out, c.out_dir);
  fs::create_directories(out);
  int mid = c.geometry().mid_hw();
  int n = mid * mid;
  std::string stats = "site,token,word,open,locations\n";
  for (std::size_t s = 0; s < traces.size(); ++s) {
    const Tensor& hard = traces[s].map.hard;
    std::printf("site %zu: fallback rows %zu\n", s, traces[s].fallback_rows);
    for (int j = 0; j < c.n_tokens; ++j) {
      img::Image8 pgm;
      pgm.width = mid;
      pgm.height = mid;
      pgm.channels = 1;
      pgm.pixels.resize(static_cast<std::size_t>(n));
      int open = 0;
      for (int i = 0; i < n; ++i) {
        bool on = hard.data()[static_cast<std::size_t>(i) * c.n_tokens + j] == 1.0;
        pgm.pixels[static_cast<std::size_t>(i)] = on ? 255 : 0;
        open += on;
      }
      const std::string& word = scenes::word_of(tokens[static_cast<std::size_t>(j)]);
      std::string path = out + "/mask_site" + std::to_string(s) + "_tok" + std::to_string(j) +
                         "_" + word + ".pgm";
      img::write_pgm(path, pgm);
      std::printf("  token %d %-8s open %d/%d (%.3f)\n", j, word.c_str(), open, n,
                  static_cast<double>(open) / n);
      stats += std::to_string(s) + "," + std::to_string(j) + "," + word + "," +
               std::to_string(open) + "," + std::to_string(n) + "\n";
    }
    std::printf("  open tokens per location:\n");
    for (int y = 0; y < mid; ++y) {
      std::printf("   ");
      for (int x = 0; x < mid; ++x) {
        int count = 0;
        for (int j = 0; j < c.n_tokens; ++j)
          count += hard.data()[(static_cast<std::size_t>(y) * mid + x) * c.n_tokens + j] == 1.0;
        std::printf(" %d", count);
      }
      std::printf("\n");
    }
  }
  write_text(out + "/mask_stats.csv", stats);
  std::printf("wrote %zu mask maps and %s\n", traces.size() * static_cast<std::size_t>(c.n_tokens),
              (out + "/mask_stats.csv").c_str());
  return exit_ok;
}

int cmd_eval(const EvalArgs& args) {
  if (args.n < 1) throw std::invalid_argument("--n must be at least 1");
  if (args.ddim_steps < 1) throw std::invalid_argument("--ddim-steps must be at least 1");
  LoadedRun run = load_run(args.checkpoint);
  const cfg::RunConfig& c = run.config;
  diff::Sampler kind = parse_sampler(args.sampler);
  gate::GateMode mode =
      effective_gate_mode(c, args.gate_mode,
                          run.ck.phase == ckpt::phase_gates ? gate::GateMode::learned
                                                            : gate::GateMode::forced_open);
  attn::GateRun gr{mode, attn::GatePath::hard, c.lambda_infer};

  std::vector<int> pool = scenes::held_out_two_object_indices();
  if (args.n > static_cast<int>(pool.size()))
    throw std::invalid_argument("--n " + std::to_string(args.n) + " exceeds the " +
                                std::to_string(pool.size()) + " held-out two-object scenes");
  Rng choice = Rng(args.seed).fork("eval-choice");
  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[choice.next_below(i)]);
  pool.resize(static_cast<std::size_t>(args.n));

  Rng seeder = Rng(args.seed).fork("eval-sample");
  std::string csv = "index,caption,presence,binding,placement,total\n";
  std::string records;
  double sum_p = 0.0, sum_b = 0.0, sum_pl = 0.0, sum_t = 0.0;
  for (int idx : pool) {
    scenes::SceneSpec scene = scenes::scene_by_index(idx);
    std::vector<int> tokens = scenes::caption_of(scene);
    std::uint64_t scene_seed = seeder.fork(static_cast<std::uint64_t>(idx)).next_u64();
    Tensor im;
    if (args.ground_truth) {
      im = scenes::render_scene(scene, c.latent_hw);
    } else {
      Tensor z = diff::sample(run.model, run.sched, tokens, scene_seed, kind, gr, args.ddim_steps);
      im = img::latent_to_image(z);
    }
    scenes::ComplianceReport rep = scenes::compliance_score(im, scene);
    csv += std::to_string(idx) + "," + scenes::caption_text(scene) + "," + fmt_g17(rep.presence) +
           "," + fmt_g17(rep.binding) + "," + fmt_g17(rep.placement) + "," + fmt_g17(rep.total) +
           "\n";
    records += scenes::to_record(scene, scene_seed) + "\n";
    sum_p += rep.presence;
    sum_b += rep.binding;
    sum_pl += rep.placement;
    sum_t += rep.total;
  }
  double n = args.n;
  csv += "aggregate,," + fmt_g17(sum_p / n) + "," + fmt_g17(sum_b / n) + "," +
         fmt_g17(sum_pl / n) + "," + fmt_g17(sum_t / n) + "\n";

  std::string out = resolve_out_dir(args.out, c.out_dir);
  fs::create_directories(out);
  std::string tag = args.ground_truth ? "ground_truth" : gate_mode_name(mode);
  std::string csv_path = out + "/eval_" + tag + ".csv";
  write_text(csv_path, csv);
  write_text(out + "/eval_scenes.txt", records);
  std::printf("eval (%s, %d scenes): presence %.4f binding %.4f placement %.4f total %.4f\n",
              tag.c_str(), args.n, sum_p / n, sum_b / n, sum_pl / n, sum_t / n);
  std::printf("wrote %s\n", csv_path.c_str());
  return exit_ok;
}

int cmd_grad_check(const GradCheckArgs& args) {
  cfg::RunConfig c = cfg::load_config(args.config_path);
  std::vector<gradcheck::Report> reports = gradcheck::run_registry(c.seed, args.seeds);
  const gradcheck::Report* worst_fail = nullptr;
  std::printf("%-28s %12s %10s  result\n", "graph", "max_rel_err", "threshold");
  for (const auto& r : reports) {
    std::printf("%-28s %12.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_err, r.threshold,
                r.pass ? "pass" : "FAIL");
    if (!r.pass && (!worst_fail || r.max_rel_err > worst_fail->max_rel_err)) worst_fail = &r;
  }
  if (worst_fail) {
    std::printf("gradient check FAILED, worst: %s (%.3e over %.0e)\n", worst_fail->name.c_str(),
                worst_fail->max_rel_err, worst_fail->threshold);
    return exit_verification;
  }
  std::printf("all %zu gradient checks passed (%d seeds each)\n", reports.size(), args.seeds);
  return exit_ok;
}

}  // namespace maskattn::harness
