#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "maskattn/gate.hpp"
#include "maskattn/rng.hpp"
#include "support/oracles.hpp"

using namespace maskattn;

namespace {

Tensor randt(Rng& rng, std::vector<int> shape, bool grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

// 1x1 head on 1x1 inputs, every value chosen so the gate lands open
struct ToyGraph {
  gate::GateHead head;
  Tensor x, tok, target;
  double a = 0.8, b = -0.6, w_f = 0.7, w_t = 0.9, sc = 1.2, bi = 0.4, tgt = 1.5;

  ToyGraph() {
    head.proj_feat = Tensor::from({1, 1}, {w_f}, true);
    head.proj_tok = Tensor::from({1, 1}, {w_t}, true);
    head.scale = Tensor::from({1}, {sc}, true);
    head.bias = Tensor::from({1}, {bi}, true);
    x = Tensor::from({1, 1}, {a});
    tok = Tensor::from({1, 1}, {b});
    target = Tensor::from({1, 1}, {tgt});
  }

  // runs forward+backward at the given lambda and returns the four head grads
  std::vector<double> grads(double lambda) {
    for (Tensor* p : {&head.proj_feat, &head.proj_tok, &head.scale, &head.bias}) p->zero_grad();
    Tape tape;
    gate::GateMap map = gate::gate_forward(tape, x, tok, head);
    gate::MaskMatrix mm = gate::build_mask(tape, map.hard, lambda);
    Tensor loss = ops::mse(tape, mm.bias, target);
    tape.backward(loss);
    return {head.proj_feat.grad()[0], head.proj_tok.grad()[0], head.scale.grad()[0],
            head.bias.grad()[0]};
  }
};

}  // namespace

TEST_CASE("freshly initialised head opens every gate") {
  Rng rng(401);
  gate::GateHead head = gate::init_gate_head(rng, 8, 8);
  CHECK(head.bias.data()[0] == 2.0);
  CHECK(head.scale.data()[0] == 1.0);
  Tensor x = randt(rng, {5, 8}), tok = randt(rng, {4, 8});
  Tape tape;
  gate::GateMap map = gate::gate_forward(tape, x, tok, head);
  for (double p : map.probs.data()) {
    CHECK(p > 0.8);
    CHECK(p < 0.95);
  }
  for (double h : map.hard.data()) CHECK(h == 1.0);
}

TEST_CASE("all-zero head sits exactly on the threshold and stays closed") {
  gate::GateHead head;
  head.proj_feat = Tensor::zeros({4, 4}, true);
  head.proj_tok = Tensor::zeros({4, 4}, true);
  head.scale = Tensor::zeros({1}, true);
  head.bias = Tensor::zeros({1}, true);
  Rng rng(402);
  Tensor x = randt(rng, {3, 4}), tok = randt(rng, {2, 4});
  Tape tape;
  gate::GateMap map = gate::gate_forward(tape, x, tok, head);
  for (double p : map.probs.data()) CHECK(p == 0.5);
  for (double h : map.hard.data()) CHECK(h == 0.0);
}

TEST_CASE("large bias with zero scale opens gates regardless of content") {
  gate::GateHead head;
  Rng rng(403);
  head.proj_feat = randt(rng, {4, 4}, true);
  head.proj_tok = randt(rng, {4, 4}, true);
  head.scale = Tensor::zeros({1}, true);
  head.bias = Tensor::from({1}, {10.0}, true);
  Tensor x = randt(rng, {3, 4}), tok = randt(rng, {2, 4});
  Tape tape;
  gate::GateMap map = gate::gate_forward(tape, x, tok, head);
  for (double p : map.probs.data()) CHECK(p > 0.9999);
  for (double h : map.hard.data()) CHECK(h == 1.0);
}

TEST_CASE("gate scores match the dot-product formula") {
  Rng rng(404);
  int n = 2, t = 3, d = 4, c = 4;
  gate::GateHead head;
  head.proj_feat = randt(rng, {d, c}, true);
  head.proj_tok = randt(rng, {d, c}, true);
  head.scale = Tensor::from({1}, {0.7}, true);
  head.bias = Tensor::from({1}, {-0.2}, true);
  Tensor x = randt(rng, {n, d}), tok = randt(rng, {t, d});
  Tape tape;
  gate::GateMap map = gate::gate_forward(tape, x, tok, head);

  auto f = oracle::matmul(x.data(), head.proj_feat.data(), n, d, c);
  auto u = oracle::matmul(tok.data(), head.proj_tok.data(), t, d, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < t; ++j) {
      double s = 0.0;
      for (int p = 0; p < c; ++p)
        s += f[static_cast<std::size_t>(i) * c + p] * u[static_cast<std::size_t>(j) * c + p];
      s = 0.7 * s - 0.2;
      double want = 1.0 / (1.0 + std::exp(-s));
      double got = map.probs.data()[static_cast<std::size_t>(i) * t + j];
      CHECK(std::abs(got - want) <= 1e-12);
      CHECK(map.hard.data()[static_cast<std::size_t>(i) * t + j] == (got > 0.5 ? 1.0 : 0.0));
    }
}

TEST_CASE("binarisation stays in lockstep with the probabilities") {
  Rng rng(405);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 1 + static_cast<int>(rng.next_below(6));
    int t = 1 + static_cast<int>(rng.next_below(6));
    gate::GateHead head;
    head.proj_feat = randt(rng, {3, 3}, true);
    head.proj_tok = randt(rng, {3, 3}, true);
    head.scale = Tensor::from({1}, {rng.normal()}, true);
    head.bias = Tensor::from({1}, {rng.normal()}, true);
    Tensor x = randt(rng, {n, 3}), tok = randt(rng, {t, 3});
    Tape tape;
    gate::GateMap map = gate::gate_forward(tape, x, tok, head);
    for (std::size_t i = 0; i < map.probs.numel(); ++i)
      CHECK(map.hard.data()[i] == (map.probs.data()[i] > 0.5 ? 1.0 : 0.0));

    gate::GateMap again = gate::gate_forward(tape, x, tok, head);
    CHECK(bitwise_equal(map.probs, again.probs));
    CHECK(bitwise_equal(map.hard, again.hard));
  }
}

TEST_CASE("mask entries are exactly zero or minus lambda") {
  Tape tape;
  Tensor all_open = Tensor::full({3, 4}, 1.0);
  gate::MaskMatrix open = gate::build_mask(tape, all_open, 1e9);
  CHECK(open.fallback_rows == 0);
  for (double b : open.bias.data()) CHECK(b == 0.0);

  Tensor mixed = Tensor::from({2, 3}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  gate::MaskMatrix mm = gate::build_mask(tape, mixed, 10.0);
  CHECK(mm.fallback_rows == 0);
  CHECK(mm.lambda_used == 10.0);
  std::vector<double> want{0.0, -10.0, 0.0, -10.0, -10.0, 0.0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(mm.bias.data()[i] == want[i]);
}

TEST_CASE("a fully closed row falls back to no masking") {
  Tape tape;
  Tensor hard = Tensor::from({3, 2}, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
  gate::MaskMatrix mm = gate::build_mask(tape, hard, 7.5);
  CHECK(mm.fallback_rows == 1);
  std::vector<double> want{0.0, -7.5, 0.0, 0.0, -7.5, 0.0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(mm.bias.data()[i] == want[i]);
}

TEST_CASE("mask rejects bad arguments") {
  Tape tape;
  Tensor hard = Tensor::full({2, 2}, 1.0);
  CHECK_THROWS_AS(gate::build_mask(tape, hard, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gate::build_mask(tape, hard, -3.0), std::invalid_argument);
  CHECK_THROWS_AS(gate::build_mask(tape, Tensor::full({4}, 1.0), 1.0), std::invalid_argument);
  gate::GateHead head;
  head.proj_feat = Tensor::zeros({4, 4}, true);
  head.proj_tok = Tensor::zeros({4, 4}, true);
  head.scale = Tensor::zeros({1}, true);
  head.bias = Tensor::zeros({1}, true);
  Tensor x = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(gate::gate_forward(tape, x, Tensor::zeros({2, 4}), head), std::invalid_argument);
  CHECK_THROWS_AS(gate::gate_forward(tape, Tensor::zeros({2, 4}), Tensor::zeros({2, 3}), head),
                  std::invalid_argument);
}

TEST_CASE("soft surrogate at lambda zero sends no gradient into the head") {
  Rng rng(406);
  gate::GateHead head = gate::init_gate_head(rng, 4, 4);
  Tensor x = randt(rng, {2, 4}), tok = randt(rng, {3, 4});
  Tape tape;
  gate::GateMap map = gate::gate_forward(tape, x, tok, head);
  Tensor bias = ops::affine(tape, map.probs, 0.0, 0.0);
  Tensor loss = ops::mse(tape, bias, Tensor::full({2, 3}, 1.0));
  tape.backward(loss);
  for (Tensor* p : {&head.proj_feat, &head.proj_tok, &head.scale, &head.bias})
    for (double g : p->grad()) CHECK(g == 0.0);
}

TEST_CASE("straight-through gradients follow the hand-derived chain") {
  ToyGraph toy;
  double lambda = 10.0;
  auto got = toy.grads(lambda);

  // forward pieces recomputed by hand
  double f = toy.a * toy.w_f;
  double u = toy.b * toy.w_t;
  double raw = f * u;
  double s = toy.sc * raw + toy.bi;
  double p = 1.0 / (1.0 + std::exp(-s));
  REQUIRE(p > 0.5);  // the gate is open, so the mask entry is exactly zero

  // loss = (M - target)^2 with M = lambda*1 - lambda = 0, and the straight-through
  // estimator passes d(loss)/d(hard) = lambda * d(loss)/d(M) straight to the
  // probability, so every head gradient carries one factor of lambda
  double dM = 2.0 * (0.0 - toy.tgt);
  double ds = dM * lambda * p * (1.0 - p);
  double want_bias = ds;
  double want_scale = ds * raw;
  double want_wf = ds * toy.sc * u * toy.a;
  double want_wt = ds * toy.sc * f * toy.b;

  CHECK(std::abs(got[0] - want_wf) <= 1e-12 * std::abs(want_wf));
  CHECK(std::abs(got[1] - want_wt) <= 1e-12 * std::abs(want_wt));
  CHECK(std::abs(got[2] - want_scale) <= 1e-12 * std::abs(want_scale));
  CHECK(std::abs(got[3] - want_bias) <= 1e-12 * std::abs(want_bias));
}

TEST_CASE("doubling lambda exactly doubles every head gradient") {
  ToyGraph toy;
  auto g1 = toy.grads(10.0);
  auto g2 = toy.grads(20.0);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(g2[i] == 2.0 * g1[i]);
    CHECK(std::abs(g2[i] - 2.0 * g1[i]) <= 1e-10 * std::abs(g1[i]));
  }
}
