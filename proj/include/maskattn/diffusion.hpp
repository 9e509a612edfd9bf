#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maskattn/attention.hpp"
#include "maskattn/rng.hpp"
#include "maskattn/tensor.hpp"

// Denoising diffusion on small image latents with a toy UNet whose mid stage
// hosts the gated cross-attention blocks. The model predicts the Gaussian
// noise that forward diffusion added; training minimizes the MSE against it.

namespace maskattn::diff {

struct NoiseSchedule {
  int t_steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bar;
};

NoiseSchedule make_schedule(int t_steps, double beta_start, double beta_end);

struct UNetGeometry {
  int latent_hw = 16;  // input is latent_ch x latent_hw x latent_hw
  int latent_ch = 3;
  int c_stem = 16;     // channels after conv-in
  int c_down = 32;     // channels after the first downsample
  int d_model = 64;    // mid-stage channels, also the attention width
  int n_heads = 2;
  int n_sites = 2;     // gated attention blocks at the mid stage
  int n_tokens = 8;
  int vocab = 32;

  int d_ff() const { return 4 * d_model; }
  int mid_hw() const { return latent_hw / 4; }
  attn::AttnConfig attn_config() const { return {d_model, n_heads, n_tokens}; }
  void validate() const;
};

struct ToyUNet {
  UNetGeometry geo;
  int t_steps = 0;
  Tensor conv_in_w, conv_in_b;
  Tensor down1_w, down1_b;
  Tensor down2_w, down2_b;
  Tensor temb_w, temb_b;  // projection of the sinusoidal timestep table
  std::vector<attn::MaskAttnBlock> blocks;
  Tensor up1_w, up1_b;
  Tensor up2_w, up2_b;
  Tensor conv_out_w, conv_out_b;
  Tensor tok_emb;  // [vocab, d_model], learned

  // Constant buffers, not trained: the sinusoidal table and the normalized
  // coordinate planes appended to the input so the network can tell locations
  // apart (prompts reference image regions).
  Tensor sin_table;  // [t_steps, d_model]
  Tensor coords;     // [2, latent_hw, latent_hw] in [-1, 1]
};

ToyUNet init_unet(Rng& rng, const UNetGeometry& geo, int t_steps);

// Parameters in a fixed order shared by serialization, gradient clipping, and
// the optimizer. Gate-head parameters carry ".gate." in their name.
std::vector<std::pair<std::string, Tensor>> named_params(const ToyUNet& m);

// sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) eps
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

Tensor unet_forward(Tape& tape, const ToyUNet& m, const Tensor& z_t, int t,
                    const std::vector<int>& tokens, const attn::GateRun& run,
                    std::vector<attn::BlockTrace>* traces = nullptr);

struct LatentBatch {
  std::vector<Tensor> z0;
  std::vector<int> t;
  std::vector<Tensor> eps;
  std::vector<std::vector<int>> tokens;

  std::size_t size() const { return z0.size(); }
  void validate() const;
};

// Mean over the batch of per-sample MSE between eps and the model's estimate
// of it from the noised latent.
Tensor training_loss(Tape& tape, const ToyUNet& m, const LatentBatch& b, const NoiseSchedule& s,
                     const attn::GateRun& run);

enum class Sampler { ddpm, ddim };

// Iterative denoising from a seeded Gaussian draw. The ddim variant skips
// through the schedule deterministically in `ddim_steps` strides; ddpm walks
// every step with fresh posterior noise from the same seeded stream.
Tensor sample(const ToyUNet& m, const NoiseSchedule& s, const std::vector<int>& tokens,
              std::uint64_t seed, Sampler kind, const attn::GateRun& run, int ddim_steps = 10);

}  // namespace maskattn::diff
