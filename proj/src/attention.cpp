#include "maskattn/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace maskattn::attn {

namespace {

Tensor normal_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace

void AttnConfig::validate() const {
  if (n_heads < 1 || d_model < 1 || n_tokens < 1)
    throw std::invalid_argument("attention config: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("attention config: d_model " + std::to_string(d_model) +
                                " not divisible by " + std::to_string(n_heads) + " heads");
}

MaskAttnBlock init_block(Rng& rng, const AttnConfig& cfg, int d_ff) {
  cfg.validate();
  int d = cfg.d_model;
  double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  MaskAttnBlock blk;
  blk.w_q = normal_init(rng, {d, d}, proj_std);
  blk.w_k = normal_init(rng, {d, d}, proj_std);
  blk.w_v = normal_init(rng, {d, d}, proj_std);
  blk.w_o = normal_init(rng, {d, d}, proj_std);
  blk.ffn_w1 = normal_init(rng, {d, d_ff}, proj_std);
  blk.ffn_b1 = Tensor::zeros({d_ff}, true);
  blk.ffn_w2 = normal_init(rng, {d_ff, d}, 1.0 / std::sqrt(static_cast<double>(d_ff)));
  blk.ffn_b2 = Tensor::zeros({d}, true);
  blk.gate_head = gate::init_gate_head(rng, d, d);
  return blk;
}

Tensor masked_cross_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& m, std::size_t* fully_masked_rows) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw std::invalid_argument("masked_cross_attention: q, k, v must be matrices");
  if (q.dim(1) != k.dim(1))
    throw std::invalid_argument("masked_cross_attention: q width " + shape_str(q.shape()) +
                                " vs k width " + shape_str(k.shape()));
  if (k.dim(0) != v.dim(0))
    throw std::invalid_argument("masked_cross_attention: k rows " + shape_str(k.shape()) +
                                " vs v rows " + shape_str(v.shape()));
  if (m.ndim() != 2 || m.dim(0) != q.dim(0) || m.dim(1) != k.dim(0))
    throw std::invalid_argument("masked_cross_attention: mask " + shape_str(m.shape()) +
                                " does not cover " + std::to_string(q.dim(0)) + "x" +
                                std::to_string(k.dim(0)) + " pairs");
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = ops::scale(tape, ops::matmul_nt(tape, q, k), inv_sqrt_d);
  Tensor weights = ops::softmax_with_bias(tape, scores, m, fully_masked_rows);
  return ops::matmul(tape, weights, v);
}

Tensor multi_head_forward(Tape& tape, const Tensor& x, const Tensor& tok, const Tensor& m,
                          const MaskAttnBlock& blk, const AttnConfig& cfg) {
  cfg.validate();
  Tensor q = ops::matmul(tape, x, blk.w_q);
  Tensor k = ops::matmul(tape, tok, blk.w_k);
  Tensor v = ops::matmul(tape, tok, blk.w_v);
  int dh = cfg.d_head();
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    Tensor qh = ops::split_cols(tape, q, h * dh, dh);
    Tensor kh = ops::split_cols(tape, k, h * dh, dh);
    Tensor vh = ops::split_cols(tape, v, h * dh, dh);
    heads.push_back(masked_cross_attention(tape, qh, kh, vh, m));
  }
  Tensor merged = cfg.n_heads == 1 ? heads[0] : ops::concat_cols(tape, heads);
  return ops::matmul(tape, merged, blk.w_o);
}

Tensor ffn_residual(Tape& tape, const Tensor& a, const MaskAttnBlock& blk) {
  Tensor h = ops::gelu(tape, ops::linear(tape, a, blk.ffn_w1, blk.ffn_b1));
  Tensor out = ops::linear(tape, h, blk.ffn_w2, blk.ffn_b2);
  return ops::add(tape, out, a);
}

Tensor block_forward(Tape& tape, const Tensor& x, const Tensor& tok, const MaskAttnBlock& blk,
                     const AttnConfig& cfg, const GateRun& run, BlockTrace* trace) {
  Tensor mask_bias;
  std::size_t fallback = 0;
  gate::GateMap map;
  if (run.mode == gate::GateMode::off) {
    mask_bias = Tensor::zeros({x.dim(0), tok.dim(0)});
  } else if (run.mode == gate::GateMode::forced_open) {
    // The gate head still runs (so inspection sees its probabilities), but the
    // mask is built from an all-open map: lambda*1 - lambda == 0.0 exactly, so
    // the attention arithmetic is bit-for-bit the ungated computation.
    map = gate_forward(tape, x, tok, blk.gate_head);
    map.hard = Tensor::full({x.dim(0), tok.dim(0)}, 1.0);
    mask_bias = gate::build_mask(tape, map.hard, run.lambda).bias;
  } else {
    map = gate_forward(tape, x, tok, blk.gate_head);
    if (run.path == GatePath::soft) {
      mask_bias = ops::affine(tape, map.probs, run.lambda, -run.lambda);
    } else {
      gate::MaskMatrix mm = gate::build_mask(tape, map.hard, run.lambda);
      mask_bias = mm.bias;
      fallback = mm.fallback_rows;
    }
  }
  if (trace) {
    trace->map = map;
    trace->fallback_rows = fallback;
  }
  Tensor a = multi_head_forward(tape, x, tok, mask_bias, blk, cfg);
  return ffn_residual(tape, a, blk);
}

}  // namespace maskattn::attn
