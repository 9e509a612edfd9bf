#include "maskattn/gate.hpp"

#include <stdexcept>

namespace maskattn::gate {

namespace {

Tensor normal_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace

GateHead init_gate_head(Rng& rng, int d_model, int c) {
  GateHead head;
  head.proj_tok = normal_init(rng, {d_model, c}, 0.02);
  head.proj_feat = normal_init(rng, {c, c}, 0.02);
  head.bias = Tensor::from({1}, {2.0}, true);
  head.scale = Tensor::from({1}, {1.0}, true);
  return head;
}

GateMap gate_forward(Tape& tape, const Tensor& x, const Tensor& tok, const GateHead& head) {
  if (x.ndim() != 2 || x.dim(1) != head.proj_feat.dim(0))
    throw std::invalid_argument("gate_forward: features " + shape_str(x.shape()) +
                                " do not match head projection " + shape_str(head.proj_feat.shape()));
  if (tok.ndim() != 2 || tok.dim(0) < 1 || tok.dim(1) != head.proj_tok.dim(0))
    throw std::invalid_argument("gate_forward: tokens " + shape_str(tok.shape()) +
                                " do not match head projection " + shape_str(head.proj_tok.shape()));
  Tensor f = ops::matmul(tape, x, head.proj_feat);    // [n, c]
  Tensor u = ops::matmul(tape, tok, head.proj_tok);   // [t, c]
  Tensor score = ops::matmul_nt(tape, f, u);          // [n, t]
  score = ops::scalar_affine(tape, score, head.scale, head.bias);
  GateMap map;
  map.probs = ops::sigmoid(tape, score);
  map.hard = ops::binarize_ste(tape, map.probs);
  return map;
}

MaskMatrix build_mask(Tape& tape, const Tensor& hard, double lambda) {
  if (hard.ndim() != 2)
    throw std::invalid_argument("build_mask: gates must be [n, t], got " + shape_str(hard.shape()));
  if (!(lambda > 0.0))
    throw std::invalid_argument("build_mask: lambda must be positive, got " + std::to_string(lambda));
  int n = hard.dim(0), t = hard.dim(1);
  MaskMatrix mask;
  mask.lambda_used = lambda;
  Tensor raw = ops::affine(tape, hard, lambda, -lambda);
  // Find rows with every gate closed; their bias is forced back to zero so the
  // softmax keeps full support there. The multiplier is constant, so closed
  // rows also stop sending gradient into the head, which is consistent with
  // their bias no longer affecting the output.
  std::vector<int> dead_rows;
  for (int i = 0; i < n; ++i) {
    bool all_closed = true;
    for (int j = 0; j < t && all_closed; ++j)
      all_closed = hard.data()[static_cast<std::size_t>(i) * t + j] == 0.0;
    if (all_closed) dead_rows.push_back(i);
  }
  mask.fallback_rows = dead_rows.size();
  if (dead_rows.empty()) {
    mask.bias = raw;
    return mask;
  }
  Tensor keep = Tensor::full({n, t}, 1.0);
  for (int i : dead_rows)
    for (int j = 0; j < t; ++j) keep.data()[static_cast<std::size_t>(i) * t + j] = 0.0;
  mask.bias = ops::mul(tape, raw, keep);
  return mask;
}

}  // namespace maskattn::gate
