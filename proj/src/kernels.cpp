#include "maskattn/kernels.hpp"

#include <cmath>

// All *_bwd kernels accumulate into their destination buffer; callers zero the
// gradient storage once and let every consumer add its contribution.

namespace maskattn::kern {

namespace {
constexpr double inv_sqrt2 = 0.70710678118654752440;
constexpr double inv_sqrt2pi = 0.39894228040143267794;
}  // namespace

// ---- parallel entry points ----

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[p * n + j] : 0.0;
      for (int i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      c[p * n + j] = s;
    }
  }
}

void ew_add(const double* a, const double* b, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void ew_sub(const double* a, const double* b, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void ew_mul(const double* a, const double* b, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void ew_scale(const double* a, double alpha, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * alpha;
}

void ew_axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void ew_sigmoid(const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void ew_sigmoid_bwd(const double* y, const double* dy, double* dx, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

void ew_gelu(const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
}

void ew_gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
    double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

void softmax_bias_rows(const double* logits, const double* bias, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* lr = logits + static_cast<std::size_t>(r) * cols;
    const double* br = bias + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = lr[0] + br[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, lr[j] + br[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(lr[j] + br[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

void softmax_rows_bwd(const double* y, const double* dy, double* dx, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* yr = y + static_cast<std::size_t>(r) * cols;
    const double* dyr = dy + static_cast<std::size_t>(r) * cols;
    double* dxr = dx + static_cast<std::size_t>(r) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
    for (int j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

void conv3x3_fwd(const double* x, const double* wgt, const double* bias, double* y,
                 int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < cout; ++oc) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < cin; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              s += x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                   wgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] = s;
      }
    }
  }
}

// Backward passes gather into each destination element instead of scattering
// from each source element, so output elements stay independent and the
// parallel split cannot reorder any accumulation.
void conv3x3_bwd_input(const double* dy, const double* wgt, double* dx,
                       int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ic = 0; ic < cin; ++ic) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        double s = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          int ty = iy + 1 - ky;
          if (ty < 0 || ty % stride != 0) continue;
          int oy = ty / stride;
          if (oy >= ho) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int tx = ix + 1 - kx;
            if (tx < 0 || tx % stride != 0) continue;
            int ox = tx / stride;
            if (ox >= wo) continue;
            for (int oc = 0; oc < cout; ++oc) {
              s += dy[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] *
                   wgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx];
            }
          }
        }
        dx[(static_cast<std::size_t>(ic) * h + iy) * w + ix] += s;
      }
    }
  }
}

void conv3x3_bwd_weight(const double* x, const double* dy, double* dwgt,
                        int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int oc = 0; oc < cout; ++oc) {
    for (int ic = 0; ic < cin; ++ic) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double s = 0.0;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              s += x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                   dy[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox];
            }
          }
          dwgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx] += s;
        }
      }
    }
  }
}

void conv3x3_bwd_bias(const double* dy, double* dbias, int cout, int ho, int wo) {
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < cout; ++oc) {
    double s = 0.0;
    const double* row = dy + static_cast<std::size_t>(oc) * ho * wo;
    for (int i = 0; i < ho * wo; ++i) s += row[i];
    dbias[oc] += s;
  }
}

void upsample2x_fwd(const double* x, double* y, int c, int h, int w) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < 2 * h; ++oy) {
      for (int ox = 0; ox < 2 * w; ++ox) {
        y[(static_cast<std::size_t>(ch) * 2 * h + oy) * 2 * w + ox] =
            x[(static_cast<std::size_t>(ch) * h + oy / 2) * w + ox / 2];
      }
    }
  }
}

void upsample2x_bwd(const double* dy, double* dx, int c, int h, int w) {
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        double s = 0.0;
        for (int oy = 2 * iy; oy < 2 * iy + 2; ++oy)
          for (int ox = 2 * ix; ox < 2 * ix + 2; ++ox)
            s += dy[(static_cast<std::size_t>(ch) * 2 * h + oy) * 2 * w + ox];
        dx[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += s;
      }
    }
  }
}

// ---- serial reference ----

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      double s = acc ? c[p * n + j] : 0.0;
      for (int i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      c[p * n + j] = s;
    }
  }
}

void ew_add(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void ew_sub(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void ew_mul(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void ew_scale(const double* a, double alpha, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * alpha;
}

void ew_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void ew_sigmoid(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void ew_sigmoid_bwd(const double* y, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

void ew_gelu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
}

void ew_gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
    double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

void softmax_bias_rows(const double* logits, const double* bias, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* lr = logits + static_cast<std::size_t>(r) * cols;
    const double* br = bias + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = lr[0] + br[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, lr[j] + br[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(lr[j] + br[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

void softmax_rows_bwd(const double* y, const double* dy, double* dx, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* yr = y + static_cast<std::size_t>(r) * cols;
    const double* dyr = dy + static_cast<std::size_t>(r) * cols;
    double* dxr = dx + static_cast<std::size_t>(r) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
    for (int j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

void conv3x3_fwd(const double* x, const double* wgt, const double* bias, double* y,
                 int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
  for (int oc = 0; oc < cout; ++oc) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < cin; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              s += x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                   wgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] = s;
      }
    }
  }
}

void conv3x3_bwd_input(const double* dy, const double* wgt, double* dx,
                       int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
  for (int ic = 0; ic < cin; ++ic) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        double s = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          int ty = iy + 1 - ky;
          if (ty < 0 || ty % stride != 0) continue;
          int oy = ty / stride;
          if (oy >= ho) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int tx = ix + 1 - kx;
            if (tx < 0 || tx % stride != 0) continue;
            int ox = tx / stride;
            if (ox >= wo) continue;
            for (int oc = 0; oc < cout; ++oc) {
              s += dy[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox] *
                   wgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx];
            }
          }
        }
        dx[(static_cast<std::size_t>(ic) * h + iy) * w + ix] += s;
      }
    }
  }
}

void conv3x3_bwd_weight(const double* x, const double* dy, double* dwgt,
                        int cin, int h, int w, int cout, int stride) {
  int ho = conv_out_dim(h, stride), wo = conv_out_dim(w, stride);
  for (int oc = 0; oc < cout; ++oc) {
    for (int ic = 0; ic < cin; ++ic) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double s = 0.0;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= w) continue;
              s += x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                   dy[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox];
            }
          }
          dwgt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx] += s;
        }
      }
    }
  }
}

void conv3x3_bwd_bias(const double* dy, double* dbias, int cout, int ho, int wo) {
  for (int oc = 0; oc < cout; ++oc) {
    double s = 0.0;
    const double* row = dy + static_cast<std::size_t>(oc) * ho * wo;
    for (int i = 0; i < ho * wo; ++i) s += row[i];
    dbias[oc] += s;
  }
}

void upsample2x_fwd(const double* x, double* y, int c, int h, int w) {
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < 2 * h; ++oy) {
      for (int ox = 0; ox < 2 * w; ++ox) {
        y[(static_cast<std::size_t>(ch) * 2 * h + oy) * 2 * w + ox] =
            x[(static_cast<std::size_t>(ch) * h + oy / 2) * w + ox / 2];
      }
    }
  }
}

void upsample2x_bwd(const double* dy, double* dx, int c, int h, int w) {
  for (int ch = 0; ch < c; ++ch) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        double s = 0.0;
        for (int oy = 2 * iy; oy < 2 * iy + 2; ++oy)
          for (int ox = 2 * ix; ox < 2 * ix + 2; ++ox)
            s += dy[(static_cast<std::size_t>(ch) * 2 * h + oy) * 2 * w + ox];
        dx[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += s;
      }
    }
  }
}

}  // namespace serial

}  // namespace maskattn::kern
