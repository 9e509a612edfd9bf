#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Dense f64 tensors with tape-based reverse-mode autodiff. A Tensor is a
// shared handle to a node holding shape, flat row-major data, and a lazily
// allocated gradient buffer. Ops in maskattn::ops compute forward results
// eagerly and push a backward closure onto the caller's Tape; Tape::backward
// replays the closures in reverse creation order, which is a valid
// topological order because operands always exist before their consumers.

namespace maskattn {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string name;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  std::size_t numel() const { return n_->data.size(); }

  std::vector<double>& data() { return n_->data; }
  const std::vector<double>& data() const { return n_->data; }
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }
  const std::string& name() const { return n_->name; }
  void set_name(std::string v) { n_->name = std::move(v); }

  // Allocates the gradient buffer (zero-filled) on first call.
  std::vector<double>& grad();
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return n_; }

 private:
  std::shared_ptr<TensorNode> n_;
};

std::string shape_str(const std::vector<int>& s);
std::size_t shape_numel(const std::vector<int>& s);

class Tape {
 public:
  void push(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded steps in reverse order,
  // then resets the tape. Loss must be a scalar.
  void backward(Tensor loss);

  void clear() { steps_.clear(); }
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

namespace ops {

// c = a[m,k] * b[k,n]
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
// c = a[m,k] * b[n,k]^T -> [m,n]
Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b);
// x[m,in] * w[in,out] + broadcast b[out]
Tensor linear(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double alpha);
// alpha*a + beta, elementwise with scalar constants
Tensor affine(Tape& t, const Tensor& a, double alpha, double beta);
// s[1]*a + b[1] with learnable scalar tensors s and b
Tensor scalar_affine(Tape& t, const Tensor& a, const Tensor& s, const Tensor& b);

Tensor sigmoid(Tape& t, const Tensor& a);
Tensor gelu(Tape& t, const Tensor& a);

// Row-wise softmax of (logits + bias). If fully_masked_rows is given, rows
// whose bias entries are all negative are counted into it; the softmax value
// is still computed (the gate layer rewrites such rows before they get here).
Tensor softmax_with_bias(Tape& t, const Tensor& logits, const Tensor& bias,
                         std::size_t* fully_masked_rows = nullptr);

// Hard threshold probs > 0.5 to {0,1}; backward is the identity map
// (straight-through), passing the upstream gradient to probs unchanged.
Tensor binarize_ste(Tape& t, const Tensor& probs);

Tensor transpose(Tape& t, const Tensor& a);
Tensor reshape(Tape& t, const Tensor& a, std::vector<int> shape);
Tensor split_cols(Tape& t, const Tensor& a, int start, int len);
Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts);

// Mean of (pred - target)^2 over all elements; target carries no gradient.
Tensor mse(Tape& t, const Tensor& pred, const Tensor& target);

// Select rows of table[vocab, d] by token id.
Tensor embed(Tape& t, const Tensor& table, const std::vector<int>& ids);

// 3x3 conv over x[cin,h,w], zero padding 1. b may be undefined for no bias.
Tensor conv3x3(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor upsample2x(Tape& t, const Tensor& x);
// x[c,h,w] + v[c] broadcast over the spatial grid
Tensor add_channel_bias(Tape& t, const Tensor& x, const Tensor& v);
// [c,h,w] -> [h*w, c] token layout and back
Tensor flatten_hw(Tape& t, const Tensor& x);
Tensor unflatten_nc(Tape& t, const Tensor& x, int h, int w);

}  // namespace ops
}  // namespace maskattn
