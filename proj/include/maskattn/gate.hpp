#pragma once

#include <cstddef>

#include "maskattn/rng.hpp"
#include "maskattn/tensor.hpp"

// Learnable binary gates over (location, token) pairs. A bilinear head scores
// every pair, sigmoid gives open probabilities, hard thresholding at 0.5
// yields {0,1} gates, and the gates become an additive attention bias that is
// 0 where open and -lambda where closed. The threshold step uses a
// straight-through estimator so gradients keep flowing to the head.

namespace maskattn::gate {

struct GateHead {
  Tensor proj_tok;   // [d_model, c] token embedding into feature space
  Tensor proj_feat;  // [c, c] feature projection
  Tensor bias;       // [1] shared offset on the pre-sigmoid score
  Tensor scale;      // [1] temperature on the pre-sigmoid score
};

struct GateMap {
  Tensor probs;  // [n, t] open probabilities, strictly in (0,1)
  Tensor hard;   // [n, t] thresholded gates in {0,1}, straight-through in backward
};

struct MaskMatrix {
  Tensor bias;  // [n, t] additive attention bias, entries in {0, -lambda}
  double lambda_used = 0.0;
  std::size_t fallback_rows = 0;  // rows that were fully closed and rewritten to open
};

// How the hosting block applies gating.
enum class GateMode {
  learned,      // run the head, threshold, mask
  forced_open,  // run the head for observability, but mask with all gates open
  off,          // no gating at all (ungated baseline); the head never runs
};

// Heads start near all-open: a positive score offset keeps every gate above
// the 0.5 threshold at step 0, so an untrained head leaves the hosting block's
// behavior untouched.
GateHead init_gate_head(Rng& rng, int d_model, int c);

// probs(i,t) = sigmoid(scale * <proj_feat . x_i, proj_tok . e_t> + bias) for
// x rows over locations and tok rows over text tokens; hard = probs > 0.5.
GateMap gate_forward(Tape& tape, const Tensor& x, const Tensor& tok, const GateHead& head);

// bias(i,t) = -lambda * (1 - hard(i,t)). A row with every gate closed would
// leave the downstream softmax without support, so such rows are rewritten to
// all-open (bias 0) and counted.
MaskMatrix build_mask(Tape& tape, const Tensor& hard, double lambda);

}  // namespace maskattn::gate
