#include "maskattn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maskattn/attention.hpp"
#include "maskattn/rng.hpp"

namespace maskattn::gradcheck {

double grad_check(const GraphFn& f, const std::vector<Tensor>& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  std::vector<Tensor> ps = params;  // shared handles, same underlying nodes

  Tape tape;
  Tensor loss = f(tape);
  if (loss.numel() != 1)
    throw std::invalid_argument("grad_check: graph must produce a scalar, got " +
                                shape_str(loss.shape()));
  for (Tensor& p : ps) p.zero_grad();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(ps.size());
  for (Tensor& p : ps)
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));

  // Finite differences only need forward values; dropping requires_grad keeps
  // the re-evaluations from recording closures.
  std::vector<bool> saved;
  saved.reserve(ps.size());
  for (Tensor& p : ps) {
    saved.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  auto eval = [&f]() {
    Tape t;
    return f(t).item();
  };
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    std::vector<double>& x = ps[pi].data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double x0 = x[i];
      x[i] = x0 + h;
      double up = eval();
      x[i] = x0 - h;
      double down = eval();
      x[i] = x0;
      double fd = (up - down) / (2.0 * h);
      double g = analytic[pi][i];
      max_rel = std::max(max_rel, std::abs(g - fd) / std::max(1.0, std::abs(g)));
    }
  }
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].set_requires_grad(saved[i]);
  return max_rel;
}

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double s = 1.0, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = s * rng.normal();
  return t;
}

// Constant {0,-lambda} mask with at least one open slot per row.
Tensor random_mask(Rng& rng, int n, int t, double lambda) {
  Tensor m = Tensor::zeros({n, t});
  for (int i = 0; i < n; ++i) {
    int open = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(t)));
    for (int j = 0; j < t; ++j)
      if (j != open && rng.uniform() < 0.5)
        m.data()[static_cast<std::size_t>(i) * t + j] = -lambda;
  }
  return m;
}

std::vector<Tensor> block_params(const attn::MaskAttnBlock& blk) {
  return {blk.w_q,          blk.w_k,           blk.w_v,
          blk.w_o,          blk.ffn_w1,        blk.ffn_b1,
          blk.ffn_w2,       blk.ffn_b2,        blk.gate_head.proj_tok,
          blk.gate_head.proj_feat, blk.gate_head.bias, blk.gate_head.scale};
}

std::vector<Entry> make_registry() {
  std::vector<Entry> reg;
  auto entry = [&reg](std::string name, double threshold,
                      std::function<double(Rng&)> body) {
    reg.push_back({name, threshold, [name, body](std::uint64_t seed) {
                     Rng rng = Rng(seed).fork(name);
                     return body(rng);
                   }});
  };

  entry("matmul", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {4, 3}), b = randn(rng, {3, 5});
    Tensor tgt = randn(rng, {4, 5}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::matmul(t, a, b), tgt); }, {a, b});
  });

  entry("matmul_nt", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {4, 3}), b = randn(rng, {5, 3});
    Tensor tgt = randn(rng, {4, 5}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::matmul_nt(t, a, b), tgt); }, {a, b});
  });

  entry("linear", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {4, 3}), w = randn(rng, {3, 5}), b = randn(rng, {5});
    Tensor tgt = randn(rng, {4, 5}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::linear(t, x, w, b), tgt); }, {x, w, b});
  });

  entry("elementwise", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {3, 4}), b = randn(rng, {3, 4});
    Tensor c = randn(rng, {3, 4}), d = randn(rng, {3, 4});
    Tensor tgt = randn(rng, {3, 4}, 1.0, false);
    return grad_check(
        [=](Tape& t) {
          Tensor lhs = ops::mul(t, a, b);
          Tensor rhs = ops::sub(t, ops::scale(t, c, 0.5), ops::affine(t, d, 1.5, -0.25));
          return ops::mse(t, ops::add(t, lhs, rhs), tgt);
        },
        {a, b, c, d});
  });

  entry("scalar_affine", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {3, 4});
    Tensor s = randn(rng, {1}, 0.5), b = randn(rng, {1}, 0.5);
    Tensor tgt = randn(rng, {3, 4}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::scalar_affine(t, a, s, b), tgt); }, {a, s, b});
  });

  entry("sigmoid", 1e-5, [](Rng& rng) {
    Tensor x = randn(rng, {3, 4}, 2.0);
    Tensor tgt = randn(rng, {3, 4}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, ops::sigmoid(t, x), tgt); }, {x});
  });

  entry("gelu", 1e-5, [](Rng& rng) {
    Tensor x = randn(rng, {3, 4}, 1.5);
    Tensor tgt = randn(rng, {3, 4}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, ops::gelu(t, x), tgt); }, {x});
  });

  entry("softmax_with_bias", 1e-5, [](Rng& rng) {
    Tensor logits = randn(rng, {3, 5}, 2.0);
    Tensor bias = randn(rng, {3, 5}, 1.0);
    Tensor tgt = randn(rng, {3, 5}, 0.3, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::softmax_with_bias(t, logits, bias), tgt); },
        {logits, bias});
  });

  entry("mse", 1e-7, [](Rng& rng) {
    Tensor pred = randn(rng, {3, 4});
    Tensor tgt = randn(rng, {3, 4}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, pred, tgt); }, {pred});
  });

  entry("embed", 1e-7, [](Rng& rng) {
    Tensor table = randn(rng, {6, 4});
    std::vector<int> ids = {0, 2, 5, 2};  // repeated id checks accumulation
    Tensor tgt = randn(rng, {4, 4}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, ops::embed(t, table, ids), tgt); },
                      {table});
  });

  entry("transpose", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {3, 5});
    Tensor tgt = randn(rng, {5, 3}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, ops::transpose(t, a), tgt); }, {a});
  });

  entry("reshape", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {3, 4});
    Tensor tgt = randn(rng, {2, 6}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::reshape(t, a, {2, 6}), tgt); }, {a});
  });

  entry("split_concat", 1e-7, [](Rng& rng) {
    Tensor a = randn(rng, {4, 5});
    Tensor tgt = randn(rng, {4, 5}, 1.0, false);
    return grad_check(
        [=](Tape& t) {
          // swapped halves so the graph is not an identity
          Tensor right = ops::split_cols(t, a, 2, 3);
          Tensor left = ops::split_cols(t, a, 0, 2);
          return ops::mse(t, ops::concat_cols(t, {right, left}), tgt);
        },
        {a});
  });

  entry("flatten_unflatten", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {3, 4, 4});
    Tensor w = randn(rng, {3, 3});
    Tensor tgt = randn(rng, {3, 4, 4}, 1.0, false);
    return grad_check(
        [=](Tape& t) {
          Tensor u = ops::matmul(t, ops::flatten_hw(t, x), w);
          return ops::mse(t, ops::unflatten_nc(t, u, 4, 4), tgt);
        },
        {x, w});
  });

  entry("conv3x3_s1", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {2, 5, 5});
    Tensor w = randn(rng, {3, 2, 3, 3}, 0.5);
    Tensor b = randn(rng, {3}, 0.5);
    Tensor tgt = randn(rng, {3, 5, 5}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::conv3x3(t, x, w, b, 1), tgt); }, {x, w, b});
  });

  entry("conv3x3_s2", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {2, 6, 6});
    Tensor w = randn(rng, {3, 2, 3, 3}, 0.5);
    Tensor b = randn(rng, {3}, 0.5);
    Tensor tgt = randn(rng, {3, 3, 3}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::conv3x3(t, x, w, b, 2), tgt); }, {x, w, b});
  });

  entry("conv3x3_nobias", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {2, 4, 4});
    Tensor w = randn(rng, {2, 2, 3, 3}, 0.5);
    Tensor tgt = randn(rng, {2, 4, 4}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::conv3x3(t, x, w, Tensor(), 1), tgt); }, {x, w});
  });

  entry("upsample2x", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {2, 3, 3});
    Tensor tgt = randn(rng, {2, 6, 6}, 1.0, false);
    return grad_check([=](Tape& t) { return ops::mse(t, ops::upsample2x(t, x), tgt); }, {x});
  });

  entry("add_channel_bias", 1e-7, [](Rng& rng) {
    Tensor x = randn(rng, {2, 4, 4});
    Tensor v = randn(rng, {2});
    Tensor tgt = randn(rng, {2, 4, 4}, 1.0, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, ops::add_channel_bias(t, x, v), tgt); }, {x, v});
  });

  entry("masked_cross_attention", 1e-5, [](Rng& rng) {
    Tensor q = randn(rng, {4, 6}), k = randn(rng, {3, 6}), v = randn(rng, {3, 6});
    Tensor m = random_mask(rng, 4, 3, 10.0);
    Tensor tgt = randn(rng, {4, 6}, 0.5, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, attn::masked_cross_attention(t, q, k, v, m), tgt); },
        {q, k, v});
  });

  entry("ffn_residual", 1e-5, [](Rng& rng) {
    attn::AttnConfig cfg{8, 2, 3};
    attn::MaskAttnBlock blk = attn::init_block(rng, cfg, 16);
    Tensor a = randn(rng, {4, 8});
    Tensor tgt = randn(rng, {4, 8}, 0.5, false);
    return grad_check(
        [=](Tape& t) { return ops::mse(t, attn::ffn_residual(t, a, blk), tgt); },
        {a, blk.ffn_w1, blk.ffn_b1, blk.ffn_w2, blk.ffn_b2});
  });

  entry("multi_head_forward", 1e-5, [](Rng& rng) {
    attn::AttnConfig cfg{8, 2, 3};
    attn::MaskAttnBlock blk = attn::init_block(rng, cfg, 16);
    Tensor x = randn(rng, {5, 8}), tok = randn(rng, {3, 8});
    Tensor m = random_mask(rng, 5, 3, 10.0);
    Tensor tgt = randn(rng, {5, 8}, 0.5, false);
    return grad_check(
        [=](Tape& t) {
          return ops::mse(t, attn::multi_head_forward(t, x, tok, m, blk, cfg), tgt);
        },
        {x, tok, blk.w_q, blk.w_k, blk.w_v, blk.w_o});
  });

  entry("gated_block_train_lambda", 1e-5, [](Rng& rng) {
    attn::AttnConfig cfg{8, 2, 3};
    attn::MaskAttnBlock blk = attn::init_block(rng, cfg, 16);
    Tensor x = randn(rng, {5, 8}), tok = randn(rng, {3, 8});
    Tensor tgt = randn(rng, {5, 8}, 0.5, false);
    attn::GateRun run;
    run.mode = gate::GateMode::learned;
    run.path = attn::GatePath::soft;
    run.lambda = 10.0;
    std::vector<Tensor> params = {x, tok};
    for (const Tensor& p : block_params(blk)) params.push_back(p);
    return grad_check(
        [=](Tape& t) {
          return ops::mse(t, attn::block_forward(t, x, tok, blk, cfg, run), tgt);
        },
        params);
  });

  return reg;
}

}  // namespace

const std::vector<Entry>& registry() {
  static const std::vector<Entry> reg = make_registry();
  return reg;
}

std::vector<Report> run_registry(std::uint64_t seed, int seeds) {
  if (seeds < 1) throw std::invalid_argument("run_registry: need at least one seed");
  std::vector<Report> out;
  Rng root(seed);
  for (const Entry& e : registry()) {
    Report r;
    r.name = e.name;
    r.threshold = e.threshold;
    for (int i = 0; i < seeds; ++i)
      r.max_rel_err = std::max(r.max_rel_err, e.run(root.fork(e.name).fork(i).next_u64()));
    r.pass = r.max_rel_err < e.threshold;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace maskattn::gradcheck
