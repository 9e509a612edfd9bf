#pragma once

#include <cstddef>

// Dense kernels behind the tensor ops. Every kernel has an OpenMP-parallel
// entry point (the default) and a serial reference in kern::serial with the
// same signature. Parallel loops split only over independent output elements
// and keep the per-element accumulation order of the serial version, so both
// paths produce bitwise-identical results; tests check that, and
// bench_kernels compares their throughput.
//
// Matrix layouts are row-major. The `acc` flag accumulates into the output
// instead of overwriting it (used by gradient accumulation).

namespace maskattn::kern {

// c[m x n] = a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
// c[k x n] = a[m x k]^T * b[m x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

void ew_add(const double* a, const double* b, double* y, std::size_t n);
void ew_sub(const double* a, const double* b, double* y, std::size_t n);
void ew_mul(const double* a, const double* b, double* y, std::size_t n);
void ew_scale(const double* a, double alpha, double* y, std::size_t n);
void ew_axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x

void ew_sigmoid(const double* x, double* y, std::size_t n);
// dx += dy * y*(1-y), sigmoid output y
void ew_sigmoid_bwd(const double* y, const double* dy, double* dx, std::size_t n);
void ew_gelu(const double* x, double* y, std::size_t n);
// dx += dy * (Phi(x) + x*phi(x))
void ew_gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n);

// Row-wise softmax of (logits + bias) with per-row max subtraction.
void softmax_bias_rows(const double* logits, const double* bias, double* y, int rows, int cols);
// dlogits += dy-term; same term also applies to dbias (caller passes the same
// buffer twice or calls once per operand).
void softmax_rows_bwd(const double* y, const double* dy, double* dx, int rows, int cols);

// 3x3 convolution, zero padding 1, stride 1 or 2.
// x[cin, h, w], wgt[cout, cin, 3, 3], bias[cout] (nullable), y[cout, ho, wo]
void conv3x3_fwd(const double* x, const double* wgt, const double* bias, double* y,
                 int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_input(const double* dy, const double* wgt, double* dx,
                       int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_weight(const double* x, const double* dy, double* dwgt,
                        int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_bias(const double* dy, double* dbias, int cout, int ho, int wo);

// Nearest-neighbour 2x upsample of [c, h, w].
void upsample2x_fwd(const double* x, double* y, int c, int h, int w);
void upsample2x_bwd(const double* dy, double* dx, int c, int h, int w);

inline int conv_out_dim(int in, int stride) { return (in + 2 - 3) / stride + 1; }

namespace serial {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void ew_add(const double* a, const double* b, double* y, std::size_t n);
void ew_sub(const double* a, const double* b, double* y, std::size_t n);
void ew_mul(const double* a, const double* b, double* y, std::size_t n);
void ew_scale(const double* a, double alpha, double* y, std::size_t n);
void ew_axpy(double alpha, const double* x, double* y, std::size_t n);
void ew_sigmoid(const double* x, double* y, std::size_t n);
void ew_sigmoid_bwd(const double* y, const double* dy, double* dx, std::size_t n);
void ew_gelu(const double* x, double* y, std::size_t n);
void ew_gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_bias_rows(const double* logits, const double* bias, double* y, int rows, int cols);
void softmax_rows_bwd(const double* y, const double* dy, double* dx, int rows, int cols);
void conv3x3_fwd(const double* x, const double* wgt, const double* bias, double* y,
                 int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_input(const double* dy, const double* wgt, double* dx,
                       int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_weight(const double* x, const double* dy, double* dwgt,
                        int cin, int h, int w, int cout, int stride);
void conv3x3_bwd_bias(const double* dy, double* dbias, int cout, int ho, int wo);
void upsample2x_fwd(const double* x, double* y, int c, int h, int w);
void upsample2x_bwd(const double* dy, double* dx, int c, int h, int w);
}  // namespace serial

}  // namespace maskattn::kern
