#pragma once

#include <cstddef>

#include "maskattn/gate.hpp"
#include "maskattn/rng.hpp"
#include "maskattn/tensor.hpp"

// Gated multi-head cross-attention. Queries come from latent grid locations,
// keys and values from text-token embeddings; the gate module contributes an
// additive bias on the attention logits before softmax. The block finishes
// with a residual two-layer GELU feed-forward on the attention output.

namespace maskattn::attn {

struct AttnConfig {
  int d_model = 64;
  int n_heads = 2;
  int n_tokens = 8;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

struct MaskAttnBlock {
  Tensor w_q, w_k, w_v, w_o;       // [d_model, d_model], no bias
  Tensor ffn_w1, ffn_b1;           // [d_model, d_ff], [d_ff]
  Tensor ffn_w2, ffn_b2;           // [d_ff, d_model], [d_model]
  gate::GateHead gate_head;
};

// Selects which gate path block_forward takes. The soft path replaces the
// hard threshold with the bias lambda*(probs - 1): finite differences cannot
// see through a piecewise-constant threshold, so gradient checking needs a
// smooth surrogate with the same endpoints (probs -> 1 gives bias 0,
// probs -> 0 gives -lambda).
enum class GatePath { hard, soft };

struct GateRun {
  gate::GateMode mode = gate::GateMode::learned;
  GatePath path = GatePath::hard;
  double lambda = 10.0;
};

// Observability for one block invocation: the gate map that produced the mask
// and how many fully-closed rows were rewritten.
struct BlockTrace {
  gate::GateMap map;  // tensors undefined when the mode skips the head
  std::size_t fallback_rows = 0;
};

MaskAttnBlock init_block(Rng& rng, const AttnConfig& cfg, int d_ff);

// Single-head primitive: softmax(q k^T / sqrt(d) + m) v with d = q's width.
// If fully_masked_rows is given, rows of m that are entirely negative are
// counted (callers routing masks through gate::build_mask never produce any).
Tensor masked_cross_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& m, std::size_t* fully_masked_rows = nullptr);

// Per-head projected masked_cross_attention over column slices, concatenated
// and output-projected. The mask is shared by all heads.
Tensor multi_head_forward(Tape& tape, const Tensor& x, const Tensor& tok, const Tensor& m,
                          const MaskAttnBlock& blk, const AttnConfig& cfg);

// GELU(a w1 + b1) w2 + b2 + a
Tensor ffn_residual(Tape& tape, const Tensor& a, const MaskAttnBlock& blk);

// Full gated block: gate -> mask -> attention -> residual FFN.
Tensor block_forward(Tape& tape, const Tensor& x, const Tensor& tok, const MaskAttnBlock& blk,
                     const AttnConfig& cfg, const GateRun& run, BlockTrace* trace = nullptr);

}  // namespace maskattn::attn
