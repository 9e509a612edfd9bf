#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Reference implementations the test suites compare the library against.
// Everything here is deliberately naive and self-contained: plain loops and
// textbook formulas, sharing no code with the library under test.

namespace oracle {

// c[m x n] = a[m x k] * b[k x n]
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  return c;
}

// Row-wise softmax restricted to the open entries; closed entries are exactly
// 0. Uses max subtraction over the open subset only.
inline std::vector<double> restricted_softmax(const std::vector<double>& logits,
                                              const std::vector<char>& open, int rows, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int i = 0; i < rows; ++i) {
    double mx = -1e300;
    bool any = false;
    for (int j = 0; j < cols; ++j)
      if (open[static_cast<std::size_t>(i) * cols + j]) {
        mx = std::max(mx, logits[static_cast<std::size_t>(i) * cols + j]);
        any = true;
      }
    if (!any) throw std::invalid_argument("restricted_softmax: row without open entries");
    double denom = 0.0;
    for (int j = 0; j < cols; ++j)
      if (open[static_cast<std::size_t>(i) * cols + j])
        denom += std::exp(logits[static_cast<std::size_t>(i) * cols + j] - mx);
    for (int j = 0; j < cols; ++j)
      if (open[static_cast<std::size_t>(i) * cols + j])
        out[static_cast<std::size_t>(i) * cols + j] =
            std::exp(logits[static_cast<std::size_t>(i) * cols + j] - mx) / denom;
  }
  return out;
}

// Standard normal CDF by Simpson quadrature of the density, avoiding erf so
// the check is independent of how the library computes GELU.
inline double normal_cdf(double x) {
  double a = std::abs(x);
  int panels = 4000;  // Simpson error ~ (a/panels)^4, far below 1e-13 here
  double h = a / (2 * panels);
  auto pdf = [](double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * 3.14159265358979323846); };
  double s = pdf(0.0) + pdf(a);
  for (int i = 1; i < 2 * panels; ++i) s += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
  double integral = s * h / 3.0;
  return x >= 0.0 ? 0.5 + integral : 0.5 - integral;
}

// One AdamW coordinate with decoupled weight decay, the textbook recurrence.
struct ScalarAdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  double m = 0.0, v = 0.0;
  long step = 0;

  double update(double theta, double g, double lr) {
    ++step;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(step)));
    double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(step)));
    return theta - lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta);
  }
};

// 3x3 convolution with zero padding 1, direct six-loop form. bias may be
// empty for the no-bias case.
inline std::vector<double> conv3x3(const std::vector<double>& x, const std::vector<double>& w,
                                   const std::vector<double>& bias, int cin, int h, int wd,
                                   int cout, int stride) {
  int ho = (h + 2 - 3) / stride + 1;
  int wo = (wd + 2 - 3) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout) * ho * wo, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy * stride + ky - 1;
              int ix = ox * stride + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x[(static_cast<std::size_t>(ci) * h + iy) * wd + ix] *
                     w[((static_cast<std::size_t>(co) * cin + ci) * 3 + ky) * 3 + kx];
            }
        y[(static_cast<std::size_t>(co) * ho + oy) * wo + ox] = acc;
      }
  return y;
}

inline std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::filesystem::path p = std::filesystem::temp_directory_path() /
                            ("maskattn_" + tag + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace oracle
