#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maskattn/tensor.hpp"

// Central finite-difference verification of the backward pass. A graph is a
// callable that builds a scalar loss on a tape from a fixed set of parameter
// tensors; grad_check perturbs every coordinate of every parameter by +-h and
// compares the difference quotient against the tape's analytic gradient.
namespace maskattn::gradcheck {

using GraphFn = std::function<Tensor(Tape&)>;

// max over all coordinates of |analytic - fd| / max(1, |analytic|)
double grad_check(const GraphFn& f, const std::vector<Tensor>& params, double h = 1e-6);

// One registered graph. build(seed) draws fresh random inputs, so running an
// entry twice with different seeds checks different points.
struct Entry {
  std::string name;
  double threshold;
  std::function<double(std::uint64_t seed)> run;
};

struct Report {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Every differentiable op plus the composed graphs up to the full gated
// attention block. The hard gate threshold is excluded by construction: a
// piecewise-constant step has no finite-difference signal, so composed
// entries run the smooth gate surrogate (same endpoints, see attention.hpp).
const std::vector<Entry>& registry();

// Runs each entry over `seeds` derived seeds and keeps the worst error.
std::vector<Report> run_registry(std::uint64_t seed, int seeds = 20);

}  // namespace maskattn::gradcheck
