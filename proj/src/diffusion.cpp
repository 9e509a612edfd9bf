#include "maskattn/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace maskattn::diff {

namespace {

Tensor normal_init(Rng& rng, std::vector<int> shape, double stddev, std::string name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = stddev * rng.normal();
  t.set_name(std::move(name));
  return t;
}

Tensor zeros_param(std::vector<int> shape, std::string name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  t.set_name(std::move(name));
  return t;
}

Tensor conv_init(Rng& rng, int cout, int cin, std::string name) {
  return normal_init(rng, {cout, cin, 3, 3}, 1.0 / std::sqrt(9.0 * cin), std::move(name));
}

void check_t(int t, int t_steps) {
  if (t < 0 || t >= t_steps)
    throw std::invalid_argument("diffusion: step " + std::to_string(t) + " outside schedule of " +
                                std::to_string(t_steps) + " steps");
}

}  // namespace

NoiseSchedule make_schedule(int t_steps, double beta_start, double beta_end) {
  if (t_steps < 1)
    throw std::invalid_argument("make_schedule: need at least 1 step, got " + std::to_string(t_steps));
  if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start < beta_end < 1, got " +
                                std::to_string(beta_start) + ", " + std::to_string(beta_end));
  NoiseSchedule s;
  s.t_steps = t_steps;
  s.betas.resize(static_cast<std::size_t>(t_steps));
  s.alphas.resize(static_cast<std::size_t>(t_steps));
  s.alpha_bar.resize(static_cast<std::size_t>(t_steps));
  double prod = 1.0;
  for (int t = 0; t < t_steps; ++t) {
    double frac = t_steps == 1 ? 0.0 : static_cast<double>(t) / (t_steps - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

void UNetGeometry::validate() const {
  if (latent_hw < 4 || latent_hw % 4 != 0)
    throw std::invalid_argument("geometry: latent size must be a positive multiple of 4 for two "
                                "downsamples, got " + std::to_string(latent_hw));
  if (latent_ch < 1 || c_stem < 1 || c_down < 1 || n_sites < 1 || vocab < 1)
    throw std::invalid_argument("geometry: channel/site/vocab counts must be positive");
  attn_config().validate();
}

ToyUNet init_unet(Rng& rng, const UNetGeometry& geo, int t_steps) {
  geo.validate();
  if (t_steps < 1)
    throw std::invalid_argument("init_unet: schedule length must be positive");
  ToyUNet m;
  m.geo = geo;
  m.t_steps = t_steps;
  int d = geo.d_model;
  int in_ch = geo.latent_ch + 2;  // latent plus two coordinate planes
  m.conv_in_w = conv_init(rng, geo.c_stem, in_ch, "conv_in.w");
  m.conv_in_b = zeros_param({geo.c_stem}, "conv_in.b");
  m.down1_w = conv_init(rng, geo.c_down, geo.c_stem, "down1.w");
  m.down1_b = zeros_param({geo.c_down}, "down1.b");
  m.down2_w = conv_init(rng, d, geo.c_down, "down2.w");
  m.down2_b = zeros_param({d}, "down2.b");
  m.temb_w = normal_init(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), "temb.w");
  m.temb_b = zeros_param({d}, "temb.b");
  attn::AttnConfig acfg = geo.attn_config();
  for (int i = 0; i < geo.n_sites; ++i) {
    attn::MaskAttnBlock blk = attn::init_block(rng, acfg, geo.d_ff());
    std::string prefix = "blocks." + std::to_string(i) + ".";
    blk.w_q.set_name(prefix + "w_q");
    blk.w_k.set_name(prefix + "w_k");
    blk.w_v.set_name(prefix + "w_v");
    blk.w_o.set_name(prefix + "w_o");
    blk.ffn_w1.set_name(prefix + "ffn_w1");
    blk.ffn_b1.set_name(prefix + "ffn_b1");
    blk.ffn_w2.set_name(prefix + "ffn_w2");
    blk.ffn_b2.set_name(prefix + "ffn_b2");
    blk.gate_head.proj_tok.set_name(prefix + "gate.proj_tok");
    blk.gate_head.proj_feat.set_name(prefix + "gate.proj_feat");
    blk.gate_head.bias.set_name(prefix + "gate.bias");
    blk.gate_head.scale.set_name(prefix + "gate.scale");
    m.blocks.push_back(std::move(blk));
  }
  m.up1_w = conv_init(rng, geo.c_down, d, "up1.w");
  m.up1_b = zeros_param({geo.c_down}, "up1.b");
  m.up2_w = conv_init(rng, geo.c_stem, geo.c_down, "up2.w");
  m.up2_b = zeros_param({geo.c_stem}, "up2.b");
  m.conv_out_w = conv_init(rng, geo.latent_ch, geo.c_stem, "conv_out.w");
  m.conv_out_b = zeros_param({geo.latent_ch}, "conv_out.b");
  m.tok_emb = normal_init(rng, {geo.vocab, d}, 1.0 / std::sqrt(static_cast<double>(d)), "tok_emb");

  m.sin_table = Tensor::zeros({t_steps, d});
  for (int t = 0; t < t_steps; ++t) {
    for (int i = 0; i < d / 2; ++i) {
      double freq = std::exp(-std::log(10000.0) * (2.0 * i / d));
      m.sin_table.data()[static_cast<std::size_t>(t) * d + 2 * i] = std::sin(t * freq);
      m.sin_table.data()[static_cast<std::size_t>(t) * d + 2 * i + 1] = std::cos(t * freq);
    }
  }
  int hw = geo.latent_hw;
  m.coords = Tensor::zeros({2, hw, hw});
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      m.coords.data()[static_cast<std::size_t>(y) * hw + x] = 2.0 * x / (hw - 1) - 1.0;
      m.coords.data()[static_cast<std::size_t>(hw) * hw + static_cast<std::size_t>(y) * hw + x] =
          2.0 * y / (hw - 1) - 1.0;
    }
  }
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_params(const ToyUNet& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto put = [&out](const Tensor& t) { out.emplace_back(t.name(), t); };
  put(m.conv_in_w);
  put(m.conv_in_b);
  put(m.down1_w);
  put(m.down1_b);
  put(m.down2_w);
  put(m.down2_b);
  put(m.temb_w);
  put(m.temb_b);
  for (const attn::MaskAttnBlock& blk : m.blocks) {
    put(blk.w_q);
    put(blk.w_k);
    put(blk.w_v);
    put(blk.w_o);
    put(blk.ffn_w1);
    put(blk.ffn_b1);
    put(blk.ffn_w2);
    put(blk.ffn_b2);
    put(blk.gate_head.proj_tok);
    put(blk.gate_head.proj_feat);
    put(blk.gate_head.bias);
    put(blk.gate_head.scale);
  }
  put(m.up1_w);
  put(m.up1_b);
  put(m.up2_w);
  put(m.up2_b);
  put(m.conv_out_w);
  put(m.conv_out_b);
  put(m.tok_emb);
  return out;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
  check_t(t, s.t_steps);
  if (z0.shape() != eps.shape())
    throw std::invalid_argument("q_sample: shape mismatch " + shape_str(z0.shape()) + " vs " +
                                shape_str(eps.shape()));
  double a = std::sqrt(s.alpha_bar[t]);
  double b = std::sqrt(1.0 - s.alpha_bar[t]);
  Tensor out = Tensor::zeros(z0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a * z0.data()[i] + b * eps.data()[i];
  return out;
}

Tensor unet_forward(Tape& tape, const ToyUNet& m, const Tensor& z_t, int t,
                    const std::vector<int>& tokens, const attn::GateRun& run,
                    std::vector<attn::BlockTrace>* traces) {
  const UNetGeometry& g = m.geo;
  check_t(t, m.t_steps);
  if (z_t.ndim() != 3 || z_t.dim(0) != g.latent_ch || z_t.dim(1) != g.latent_hw ||
      z_t.dim(2) != g.latent_hw)
    throw std::invalid_argument("unet_forward: latent shape " + shape_str(z_t.shape()) +
                                " does not match geometry");
  if (static_cast<int>(tokens.size()) != g.n_tokens)
    throw std::invalid_argument("unet_forward: expected " + std::to_string(g.n_tokens) +
                                " tokens, got " + std::to_string(tokens.size()));

  int hw = g.latent_hw;
  Tensor x_in = Tensor::zeros({g.latent_ch + 2, hw, hw});
  std::copy(z_t.data().begin(), z_t.data().end(), x_in.data().begin());
  std::copy(m.coords.data().begin(), m.coords.data().end(),
            x_in.data().begin() + z_t.numel());

  Tensor h0 = ops::gelu(tape, ops::conv3x3(tape, x_in, m.conv_in_w, m.conv_in_b, 1));
  Tensor h1 = ops::gelu(tape, ops::conv3x3(tape, h0, m.down1_w, m.down1_b, 2));
  Tensor h2 = ops::gelu(tape, ops::conv3x3(tape, h1, m.down2_w, m.down2_b, 2));

  Tensor trow = Tensor::from({1, g.d_model},
                             {m.sin_table.data().begin() + static_cast<std::size_t>(t) * g.d_model,
                              m.sin_table.data().begin() + static_cast<std::size_t>(t + 1) * g.d_model});
  Tensor temb = ops::reshape(tape, ops::linear(tape, trow, m.temb_w, m.temb_b), {g.d_model});
  h2 = ops::add_channel_bias(tape, h2, temb);

  Tensor x = ops::flatten_hw(tape, h2);
  Tensor tok = ops::embed(tape, m.tok_emb, tokens);
  attn::AttnConfig acfg = g.attn_config();
  if (traces) traces->clear();
  for (const attn::MaskAttnBlock& blk : m.blocks) {
    attn::BlockTrace trace;
    x = attn::block_forward(tape, x, tok, blk, acfg, run, traces ? &trace : nullptr);
    if (traces) traces->push_back(std::move(trace));
  }
  Tensor h3 = ops::unflatten_nc(tape, x, g.mid_hw(), g.mid_hw());

  Tensor u1 = ops::gelu(tape, ops::conv3x3(tape, ops::upsample2x(tape, h3), m.up1_w, m.up1_b, 1));
  u1 = ops::add(tape, u1, h1);
  Tensor u2 = ops::gelu(tape, ops::conv3x3(tape, ops::upsample2x(tape, u1), m.up2_w, m.up2_b, 1));
  u2 = ops::add(tape, u2, h0);
  return ops::conv3x3(tape, u2, m.conv_out_w, m.conv_out_b, 1);
}

void LatentBatch::validate() const {
  if (z0.size() != t.size() || z0.size() != eps.size() || z0.size() != tokens.size())
    throw std::invalid_argument("batch: field lengths differ");
  if (z0.empty()) throw std::invalid_argument("batch: empty");
}

Tensor training_loss(Tape& tape, const ToyUNet& m, const LatentBatch& b, const NoiseSchedule& s,
                     const attn::GateRun& run) {
  b.validate();
  Tensor total;
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor z_t = q_sample(b.z0[i], b.t[i], b.eps[i], s);
    Tensor eps_hat = unet_forward(tape, m, z_t, b.t[i], b.tokens[i], run);
    Tensor l = ops::mse(tape, eps_hat, b.eps[i]);
    total = total.defined() ? ops::add(tape, total, l) : l;
  }
  return ops::scale(tape, total, 1.0 / static_cast<double>(b.size()));
}

Tensor sample(const ToyUNet& m, const NoiseSchedule& s, const std::vector<int>& tokens,
              std::uint64_t seed, Sampler kind, const attn::GateRun& run, int ddim_steps) {
  Rng rng(seed);
  int hw = m.geo.latent_hw;
  Tensor z = Tensor::zeros({m.geo.latent_ch, hw, hw});
  for (double& v : z.data()) v = rng.normal();
  Tape tape;

  auto predict = [&](const Tensor& z_t, int t) {
    Tensor eps_hat = unet_forward(tape, m, z_t, t, tokens, run);
    tape.clear();
    return eps_hat;
  };

  if (kind == Sampler::ddpm) {
    for (int t = s.t_steps - 1; t >= 0; --t) {
      Tensor eps_hat = predict(z, t);
      double inv_sqrt_a = 1.0 / std::sqrt(s.alphas[t]);
      double coef = s.betas[t] / std::sqrt(1.0 - s.alpha_bar[t]);
      Tensor next = Tensor::zeros(z.shape());
      for (std::size_t i = 0; i < z.numel(); ++i)
        next.data()[i] = inv_sqrt_a * (z.data()[i] - coef * eps_hat.data()[i]);
      if (t > 0) {
        double var = s.betas[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
        double sigma = std::sqrt(var);
        for (double& v : next.data()) v += sigma * rng.normal();
      }
      z = next;
    }
    return z;
  }

  // ddim: deterministic jumps over an evenly spaced subset of the schedule
  if (ddim_steps < 1) throw std::invalid_argument("sample: ddim_steps must be positive");
  int n = std::min(ddim_steps, s.t_steps);
  std::vector<int> taus(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    taus[j] = n == 1 ? 0 : static_cast<int>(std::llround(static_cast<double>(j) * (s.t_steps - 1) / (n - 1)));
  for (int j = n - 1; j >= 0; --j) {
    int t = taus[j];
    Tensor eps_hat = predict(z, t);
    double sa = std::sqrt(s.alpha_bar[t]);
    double sb = std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor x0 = Tensor::zeros(z.shape());
    for (std::size_t i = 0; i < z.numel(); ++i)
      x0.data()[i] = (z.data()[i] - sb * eps_hat.data()[i]) / sa;
    if (j == 0) {
      z = x0;
    } else {
      int tp = taus[j - 1];
      double pa = std::sqrt(s.alpha_bar[tp]);
      double pb = std::sqrt(1.0 - s.alpha_bar[tp]);
      for (std::size_t i = 0; i < z.numel(); ++i)
        z.data()[i] = pa * x0.data()[i] + pb * eps_hat.data()[i];
    }
  }
  return z;
}

}  // namespace maskattn::diff
