#include "maskattn/tensor.hpp"

#include <stdexcept>

#include "maskattn/kernels.hpp"

namespace maskattn {

std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(data.size()) + " elements");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: tensor has shape " + shape_str(n_->shape) + ", not scalar");
  return n_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (n_->grad.empty()) n_->grad.assign(n_->data.size(), 0.0);
  return n_->grad;
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) n_->grad.assign(n_->data.size(), 0.0);
}

void Tape::backward(Tensor loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  loss.grad()[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

namespace ops {
namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

// True when this node's grad buffer was never touched downstream, meaning the
// incoming gradient is identically zero and the step can be skipped.
bool no_incoming(const NodePtr& n) { return n->grad.empty(); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(a.shape()));
}

bool any_grad(const Tensor& a, const Tensor& b) { return a.requires_grad() || b.requires_grad(); }

Tensor result(std::vector<int> shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

}  // namespace

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_error("matmul: inner dimensions differ", a, b);
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = result({m, n}, any_grad(a, b));
  kern::matmul_nn(a.data().data(), b.data().data(), y.data().data(), m, k, n, false);
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), bn = b.node(), yn = y.node();
  t.push([an, bn, yn, m, k, n] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    if (an->requires_grad) {
      ensure_grad(an);
      kern::matmul_nt(dy, bn->data.data(), an->grad.data(), m, n, k, true);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      kern::matmul_tn(an->data.data(), dy, bn->grad.data(), m, k, n, true);
    }
  });
  return y;
}

Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) shape_error("matmul_nt: inner dimensions differ", a, b);
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor y = result({m, n}, any_grad(a, b));
  kern::matmul_nt(a.data().data(), b.data().data(), y.data().data(), m, k, n, false);
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), bn = b.node(), yn = y.node();
  t.push([an, bn, yn, m, k, n] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    if (an->requires_grad) {
      ensure_grad(an);
      kern::matmul_nn(dy, bn->data.data(), an->grad.data(), m, n, k, true);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      kern::matmul_tn(dy, an->data.data(), bn->grad.data(), m, n, k, true);
    }
  });
  return y;
}

Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix("linear", x);
  require_matrix("linear", w);
  if (x.dim(1) != w.dim(0)) shape_error("linear: input width vs weight rows", x, w);
  if (b.ndim() != 1 || b.dim(0) != w.dim(1)) shape_error("linear: bias vs weight cols", b, w);
  int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor y = result({m, n}, x.requires_grad() || w.requires_grad() || b.requires_grad());
  kern::matmul_nn(x.data().data(), w.data().data(), y.data().data(), m, k, n, false);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y.data()[static_cast<std::size_t>(i) * n + j] += b.data()[j];
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), wn = w.node(), bn = b.node(), yn = y.node();
  t.push([xn, wn, bn, yn, m, k, n] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    if (xn->requires_grad) {
      ensure_grad(xn);
      kern::matmul_nt(dy, wn->data.data(), xn->grad.data(), m, n, k, true);
    }
    if (wn->requires_grad) {
      ensure_grad(wn);
      kern::matmul_tn(xn->data.data(), dy, wn->grad.data(), m, k, n, true);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) bn->grad[j] += dy[static_cast<std::size_t>(i) * n + j];
    }
  });
  return y;
}

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  Tensor y = result(a.shape(), any_grad(a, b));
  kern::ew_add(a.data().data(), b.data().data(), y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), bn = b.node(), yn = y.node();
  t.push([an, bn, yn] {
    if (no_incoming(yn)) return;
    if (an->requires_grad) {
      ensure_grad(an);
      kern::ew_axpy(1.0, yn->grad.data(), an->grad.data(), yn->grad.size());
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      kern::ew_axpy(1.0, yn->grad.data(), bn->grad.data(), yn->grad.size());
    }
  });
  return y;
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  Tensor y = result(a.shape(), any_grad(a, b));
  kern::ew_sub(a.data().data(), b.data().data(), y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), bn = b.node(), yn = y.node();
  t.push([an, bn, yn] {
    if (no_incoming(yn)) return;
    if (an->requires_grad) {
      ensure_grad(an);
      kern::ew_axpy(1.0, yn->grad.data(), an->grad.data(), yn->grad.size());
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      kern::ew_axpy(-1.0, yn->grad.data(), bn->grad.data(), yn->grad.size());
    }
  });
  return y;
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  Tensor y = result(a.shape(), any_grad(a, b));
  kern::ew_mul(a.data().data(), b.data().data(), y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), bn = b.node(), yn = y.node();
  t.push([an, bn, yn] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    std::size_t n = yn->grad.size();
    if (an->requires_grad) {
      ensure_grad(an);
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += dy[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += dy[i] * an->data[i];
    }
  });
  return y;
}

Tensor scale(Tape& t, const Tensor& a, double alpha) {
  Tensor y = result(a.shape(), a.requires_grad());
  kern::ew_scale(a.data().data(), alpha, y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn, alpha] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    kern::ew_axpy(alpha, yn->grad.data(), an->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor affine(Tape& t, const Tensor& a, double alpha, double beta) {
  Tensor y = result(a.shape(), a.requires_grad());
  for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = alpha * a.data()[i] + beta;
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn, alpha] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    kern::ew_axpy(alpha, yn->grad.data(), an->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor scalar_affine(Tape& t, const Tensor& a, const Tensor& s, const Tensor& b) {
  if (s.numel() != 1 || b.numel() != 1)
    throw std::invalid_argument("scalar_affine: scale and shift must be scalars, got " +
                                shape_str(s.shape()) + " and " + shape_str(b.shape()));
  double sv = s.data()[0], bv = b.data()[0];
  Tensor y = result(a.shape(), a.requires_grad() || s.requires_grad() || b.requires_grad());
  for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = sv * a.data()[i] + bv;
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), sn = s.node(), bn = b.node(), yn = y.node();
  t.push([an, sn, bn, yn, sv] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    std::size_t n = yn->grad.size();
    if (an->requires_grad) {
      ensure_grad(an);
      kern::ew_axpy(sv, dy, an->grad.data(), n);
    }
    if (sn->requires_grad) {
      ensure_grad(sn);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += dy[i] * an->data[i];
      sn->grad[0] += acc;
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += dy[i];
      bn->grad[0] += acc;
    }
  });
  return y;
}

Tensor sigmoid(Tape& t, const Tensor& a) {
  Tensor y = result(a.shape(), a.requires_grad());
  kern::ew_sigmoid(a.data().data(), y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    kern::ew_sigmoid_bwd(yn->data.data(), yn->grad.data(), an->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor gelu(Tape& t, const Tensor& a) {
  Tensor y = result(a.shape(), a.requires_grad());
  kern::ew_gelu(a.data().data(), y.data().data(), y.numel());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    kern::ew_gelu_bwd(an->data.data(), yn->grad.data(), an->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor softmax_with_bias(Tape& t, const Tensor& logits, const Tensor& bias,
                         std::size_t* fully_masked_rows) {
  require_matrix("softmax_with_bias", logits);
  if (logits.shape() != bias.shape()) shape_error("softmax_with_bias", logits, bias);
  int rows = logits.dim(0), cols = logits.dim(1);
  Tensor y = result(logits.shape(), any_grad(logits, bias));
  kern::softmax_bias_rows(logits.data().data(), bias.data().data(), y.data().data(), rows, cols);
  if (fully_masked_rows) {
    for (int r = 0; r < rows; ++r) {
      bool all_masked = true;
      for (int c = 0; c < cols && all_masked; ++c)
        all_masked = bias.data()[static_cast<std::size_t>(r) * cols + c] < 0.0;
      if (all_masked) ++*fully_masked_rows;
    }
  }
  if (!y.requires_grad()) return y;
  NodePtr ln = logits.node(), bn = bias.node(), yn = y.node();
  t.push([ln, bn, yn, rows, cols] {
    if (no_incoming(yn)) return;
    if (ln->requires_grad) {
      ensure_grad(ln);
      kern::softmax_rows_bwd(yn->data.data(), yn->grad.data(), ln->grad.data(), rows, cols);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      kern::softmax_rows_bwd(yn->data.data(), yn->grad.data(), bn->grad.data(), rows, cols);
    }
  });
  return y;
}

Tensor binarize_ste(Tape& t, const Tensor& probs) {
  Tensor y = result(probs.shape(), probs.requires_grad());
  for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = probs.data()[i] > 0.5 ? 1.0 : 0.0;
  if (!y.requires_grad()) return y;
  NodePtr pn = probs.node(), yn = y.node();
  t.push([pn, yn] {
    if (no_incoming(yn)) return;
    ensure_grad(pn);
    kern::ew_axpy(1.0, yn->grad.data(), pn->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor transpose(Tape& t, const Tensor& a) {
  require_matrix("transpose", a);
  int m = a.dim(0), n = a.dim(1);
  Tensor y = result({n, m}, a.requires_grad());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      y.data()[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn, m, n] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<std::size_t>(i) * n + j] += yn->grad[static_cast<std::size_t>(j) * m + i];
  });
  return y;
}

Tensor reshape(Tape& t, const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: shape " + shape_str(shape) + " does not hold " +
                                std::to_string(a.numel()) + " elements");
  Tensor y = Tensor::from(std::move(shape), a.data(), a.requires_grad());
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    kern::ew_axpy(1.0, yn->grad.data(), an->grad.data(), yn->grad.size());
  });
  return y;
}

Tensor split_cols(Tape& t, const Tensor& a, int start, int len) {
  require_matrix("split_cols", a);
  int m = a.dim(0), n = a.dim(1);
  if (start < 0 || len <= 0 || start + len > n)
    throw std::invalid_argument("split_cols: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") outside " + shape_str(a.shape()));
  Tensor y = result({m, len}, a.requires_grad());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      y.data()[static_cast<std::size_t>(i) * len + j] =
          a.data()[static_cast<std::size_t>(i) * n + start + j];
  if (!y.requires_grad()) return y;
  NodePtr an = a.node(), yn = y.node();
  t.push([an, yn, m, n, start, len] {
    if (no_incoming(yn)) return;
    ensure_grad(an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        an->grad[static_cast<std::size_t>(i) * n + start + j] +=
            yn->grad[static_cast<std::size_t>(i) * len + j];
  });
  return y;
}

Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int m = parts[0].dim(0), total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_matrix("concat_cols", p);
    if (p.dim(0) != m) shape_error("concat_cols: row counts differ", parts[0], p);
    total += p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tensor y = result({m, total}, rg);
  int off = 0;
  for (const Tensor& p : parts) {
    int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        y.data()[static_cast<std::size_t>(i) * total + off + j] =
            p.data()[static_cast<std::size_t>(i) * w + j];
    off += w;
  }
  if (!rg) return y;
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  NodePtr yn = y.node();
  t.push([nodes, yn, m, total] {
    if (no_incoming(yn)) return;
    int off = 0;
    for (const NodePtr& pn : nodes) {
      int w = pn->shape[1];
      if (pn->requires_grad) {
        ensure_grad(pn);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            pn->grad[static_cast<std::size_t>(i) * w + j] +=
                yn->grad[static_cast<std::size_t>(i) * total + off + j];
      }
      off += w;
    }
  });
  return y;
}

Tensor mse(Tape& t, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error("mse", pred, target);
  std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  Tensor y = Tensor::from({1}, {acc / static_cast<double>(n)}, pred.requires_grad());
  if (!y.requires_grad()) return y;
  NodePtr pn = pred.node(), tn = target.node(), yn = y.node();
  t.push([pn, tn, yn, n] {
    if (no_incoming(yn)) return;
    ensure_grad(pn);
    double c = 2.0 * yn->grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) pn->grad[i] += c * (pn->data[i] - tn->data[i]);
  });
  return y;
}

Tensor embed(Tape& t, const Tensor& table, const std::vector<int>& ids) {
  require_matrix("embed", table);
  int vocab = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw std::invalid_argument("embed: token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
  int m = static_cast<int>(ids.size());
  Tensor y = result({m, d}, table.requires_grad());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      y.data()[static_cast<std::size_t>(i) * d + j] =
          table.data()[static_cast<std::size_t>(ids[i]) * d + j];
  if (!y.requires_grad()) return y;
  NodePtr tn = table.node(), yn = y.node();
  t.push([tn, yn, ids, m, d] {
    if (no_incoming(yn)) return;
    ensure_grad(tn);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j)
        tn->grad[static_cast<std::size_t>(ids[i]) * d + j] +=
            yn->grad[static_cast<std::size_t>(i) * d + j];
  });
  return y;
}

Tensor conv3x3(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  if (x.ndim() != 3) throw std::invalid_argument("conv3x3: input must be [c,h,w], got " + shape_str(x.shape()));
  if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("conv3x3: weight must be [co,ci,3,3], got " + shape_str(w.shape()));
  if (w.dim(1) != x.dim(0)) shape_error("conv3x3: channel mismatch", x, w);
  if (stride != 1 && stride != 2)
    throw std::invalid_argument("conv3x3: stride must be 1 or 2, got " + std::to_string(stride));
  int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
  int ho = kern::conv_out_dim(h, stride), wo = kern::conv_out_dim(wd, stride);
  bool has_b = b.defined();
  if (has_b && (b.ndim() != 1 || b.dim(0) != cout)) shape_error("conv3x3: bias vs weight", b, w);
  Tensor y = result({cout, ho, wo},
                    x.requires_grad() || w.requires_grad() || (has_b && b.requires_grad()));
  kern::conv3x3_fwd(x.data().data(), w.data().data(), has_b ? b.data().data() : nullptr,
                    y.data().data(), cin, h, wd, cout, stride);
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), wn = w.node(), yn = y.node();
  NodePtr bn = has_b ? b.node() : nullptr;
  t.push([xn, wn, bn, yn, cin, h, wd, cout, stride, ho, wo] {
    if (no_incoming(yn)) return;
    const double* dy = yn->grad.data();
    if (xn->requires_grad) {
      ensure_grad(xn);
      kern::conv3x3_bwd_input(dy, wn->data.data(), xn->grad.data(), cin, h, wd, cout, stride);
    }
    if (wn->requires_grad) {
      ensure_grad(wn);
      kern::conv3x3_bwd_weight(xn->data.data(), dy, wn->grad.data(), cin, h, wd, cout, stride);
    }
    if (bn && bn->requires_grad) {
      ensure_grad(bn);
      kern::conv3x3_bwd_bias(dy, bn->grad.data(), cout, ho, wo);
    }
  });
  return y;
}

Tensor upsample2x(Tape& t, const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("upsample2x: input must be [c,h,w], got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y = result({c, 2 * h, 2 * w}, x.requires_grad());
  kern::upsample2x_fwd(x.data().data(), y.data().data(), c, h, w);
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), yn = y.node();
  t.push([xn, yn, c, h, w] {
    if (no_incoming(yn)) return;
    ensure_grad(xn);
    kern::upsample2x_bwd(yn->grad.data(), xn->grad.data(), c, h, w);
  });
  return y;
}

Tensor add_channel_bias(Tape& t, const Tensor& x, const Tensor& v) {
  if (x.ndim() != 3) throw std::invalid_argument("add_channel_bias: input must be [c,h,w], got " + shape_str(x.shape()));
  if (v.numel() != static_cast<std::size_t>(x.dim(0))) shape_error("add_channel_bias", x, v);
  int c = x.dim(0);
  std::size_t hw = x.numel() / static_cast<std::size_t>(c);
  Tensor y = result(x.shape(), any_grad(x, v));
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i)
      y.data()[ch * hw + i] = x.data()[ch * hw + i] + v.data()[static_cast<std::size_t>(ch)];
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), vn = v.node(), yn = y.node();
  t.push([xn, vn, yn, c, hw] {
    if (no_incoming(yn)) return;
    if (xn->requires_grad) {
      ensure_grad(xn);
      kern::ew_axpy(1.0, yn->grad.data(), xn->grad.data(), yn->grad.size());
    }
    if (vn->requires_grad) {
      ensure_grad(vn);
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += yn->grad[ch * hw + i];
        vn->grad[static_cast<std::size_t>(ch)] += acc;
      }
    }
  });
  return y;
}

Tensor flatten_hw(Tape& t, const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("flatten_hw: input must be [c,h,w], got " + shape_str(x.shape()));
  int c = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor y = result({n, c}, x.requires_grad());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i)
      y.data()[static_cast<std::size_t>(i) * c + ch] = x.data()[static_cast<std::size_t>(ch) * n + i];
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), yn = y.node();
  t.push([xn, yn, c, n] {
    if (no_incoming(yn)) return;
    ensure_grad(xn);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < n; ++i)
        xn->grad[static_cast<std::size_t>(ch) * n + i] += yn->grad[static_cast<std::size_t>(i) * c + ch];
  });
  return y;
}

Tensor unflatten_nc(Tape& t, const Tensor& x, int h, int w) {
  require_matrix("unflatten_nc", x);
  if (x.dim(0) != h * w)
    throw std::invalid_argument("unflatten_nc: " + std::to_string(h) + "x" + std::to_string(w) +
                                " grid does not match " + shape_str(x.shape()));
  int n = x.dim(0), c = x.dim(1);
  Tensor y = result({c, h, w}, x.requires_grad());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i)
      y.data()[static_cast<std::size_t>(ch) * n + i] = x.data()[static_cast<std::size_t>(i) * c + ch];
  if (!y.requires_grad()) return y;
  NodePtr xn = x.node(), yn = y.node();
  t.push([xn, yn, c, n] {
    if (no_incoming(yn)) return;
    ensure_grad(xn);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < n; ++i)
        xn->grad[static_cast<std::size_t>(i) * c + ch] += yn->grad[static_cast<std::size_t>(ch) * n + i];
  });
  return y;
}

}  // namespace ops
}  // namespace maskattn
