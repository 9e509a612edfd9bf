#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "maskattn/kernels.hpp"
#include "maskattn/rng.hpp"

// Times each kernel in its OpenMP form against the serial reference and
// verifies that both produce bitwise identical output. The parallel kernels
// only split independent output elements across threads, never an
// accumulation, which is why the comparison is memcmp and not a tolerance.

using namespace maskattn;

namespace {

std::vector<double> randv(Rng& rng, std::size_t n, double s = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = s * rng.normal();
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

struct Row {
  std::string name;
  double serial_ms;
  double parallel_ms;
  bool identical;
};

void report(const std::vector<Row>& rows) {
  std::printf("%-24s %12s %12s %9s  bitwise\n", "kernel", "serial ms", "openmp ms", "speedup");
  bool all_ok = true;
  for (const Row& r : rows) {
    std::printf("%-24s %12.3f %12.3f %8.2fx  %s\n", r.name.c_str(), r.serial_ms, r.parallel_ms,
                r.serial_ms / r.parallel_ms, r.identical ? "yes" : "NO");
    all_ok = all_ok && r.identical;
  }
  if (!all_ok) std::printf("MISMATCH: parallel kernels diverged from the serial reference\n");
}

}  // namespace

int main() {
  Rng rng(20240817);
  std::vector<Row> rows;

  {
    const int m = 128, k = 128, n = 128;
    std::vector<double> a = randv(rng, static_cast<std::size_t>(m) * k);
    std::vector<double> b = randv(rng, static_cast<std::size_t>(k) * n);
    std::vector<double> cs(static_cast<std::size_t>(m) * n), cp(cs.size());
    double s = time_ms([&] { kern::serial::matmul_nn(a.data(), b.data(), cs.data(), m, k, n, false); }, 20);
    double p = time_ms([&] { kern::matmul_nn(a.data(), b.data(), cp.data(), m, k, n, false); }, 20);
    rows.push_back({"matmul_nn 128^3", s, p,
                    std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0});
  }

  {
    const int m = 128, k = 128, n = 128;
    std::vector<double> a = randv(rng, static_cast<std::size_t>(m) * k);
    std::vector<double> b = randv(rng, static_cast<std::size_t>(n) * k);
    std::vector<double> cs(static_cast<std::size_t>(m) * n), cp(cs.size());
    double s = time_ms([&] { kern::serial::matmul_nt(a.data(), b.data(), cs.data(), m, k, n, false); }, 20);
    double p = time_ms([&] { kern::matmul_nt(a.data(), b.data(), cp.data(), m, k, n, false); }, 20);
    rows.push_back({"matmul_nt 128^3", s, p,
                    std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0});
  }

  {
    const int cin = 16, h = 32, w = 32, cout = 32;
    std::vector<double> x = randv(rng, static_cast<std::size_t>(cin) * h * w);
    std::vector<double> wt = randv(rng, static_cast<std::size_t>(cout) * cin * 9, 0.2);
    std::vector<double> bias = randv(rng, cout, 0.2);
    std::vector<double> ys(static_cast<std::size_t>(cout) * h * w), yp(ys.size());
    double s = time_ms(
        [&] { kern::serial::conv3x3_fwd(x.data(), wt.data(), bias.data(), ys.data(), cin, h, w, cout, 1); },
        10);
    double p = time_ms(
        [&] { kern::conv3x3_fwd(x.data(), wt.data(), bias.data(), yp.data(), cin, h, w, cout, 1); },
        10);
    rows.push_back({"conv3x3 16->32 @32x32", s, p,
                    std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0});
  }

  {
    const int cin = 16, h = 32, w = 32, cout = 32;
    const int ho = kern::conv_out_dim(h, 1), wo = kern::conv_out_dim(w, 1);
    std::vector<double> x = randv(rng, static_cast<std::size_t>(cin) * h * w);
    std::vector<double> wt = randv(rng, static_cast<std::size_t>(cout) * cin * 9, 0.2);
    std::vector<double> dy = randv(rng, static_cast<std::size_t>(cout) * ho * wo);
    std::vector<double> dxs(x.size()), dxp(x.size());
    double s = time_ms(
        [&] {
          std::fill(dxs.begin(), dxs.end(), 0.0);
          kern::serial::conv3x3_bwd_input(dy.data(), wt.data(), dxs.data(), cin, h, w, cout, 1);
        },
        10);
    double p = time_ms(
        [&] {
          std::fill(dxp.begin(), dxp.end(), 0.0);
          kern::conv3x3_bwd_input(dy.data(), wt.data(), dxp.data(), cin, h, w, cout, 1);
        },
        10);
    rows.push_back({"conv3x3 bwd input", s, p,
                    std::memcmp(dxs.data(), dxp.data(), dxs.size() * sizeof(double)) == 0});
  }

  {
    const int rows_n = 256, cols = 256;
    std::vector<double> logits = randv(rng, static_cast<std::size_t>(rows_n) * cols, 2.0);
    std::vector<double> bias(logits.size(), 0.0);
    for (std::size_t i = 0; i < bias.size(); i += 3) bias[i] = -10.0;
    std::vector<double> ys(logits.size()), yp(logits.size());
    double s = time_ms(
        [&] { kern::serial::softmax_bias_rows(logits.data(), bias.data(), ys.data(), rows_n, cols); },
        50);
    double p = time_ms(
        [&] { kern::softmax_bias_rows(logits.data(), bias.data(), yp.data(), rows_n, cols); }, 50);
    rows.push_back({"softmax_bias 256x256", s, p,
                    std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0});
  }

  {
    const std::size_t n = 1u << 20;
    std::vector<double> x = randv(rng, n);
    std::vector<double> ys(n), yp(n);
    double s = time_ms([&] { kern::serial::ew_gelu(x.data(), ys.data(), n); }, 10);
    double p = time_ms([&] { kern::ew_gelu(x.data(), yp.data(), n); }, 10);
    rows.push_back(
        {"gelu 1M", s, p, std::memcmp(ys.data(), yp.data(), n * sizeof(double)) == 0});
  }

  {
    const int c = 32, h = 64, w = 64;
    std::vector<double> x = randv(rng, static_cast<std::size_t>(c) * h * w);
    std::vector<double> ys(static_cast<std::size_t>(c) * h * 2 * w * 2), yp(ys.size());
    double s = time_ms([&] { kern::serial::upsample2x_fwd(x.data(), ys.data(), c, h, w); }, 20);
    double p = time_ms([&] { kern::upsample2x_fwd(x.data(), yp.data(), c, h, w); }, 20);
    rows.push_back({"upsample2x 32x64x64", s, p,
                    std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0});
  }

  report(rows);
  return 0;
}
