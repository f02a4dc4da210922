// Times the OpenMP kernels against their serial references and checks that
// the two produce identical results.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "mmd/common.hpp"
#include "mmd/kernels.hpp"

using namespace mmd;
using Clock = std::chrono::steady_clock;

namespace {

double seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

template <typename F>
double time_best(F&& fn, int iters) {
  double best = 1e300;
  for (int i = 0; i < iters; ++i) {
    auto t0 = Clock::now();
    fn();
    best = std::min(best, seconds(t0, Clock::now()));
  }
  return best;
}

std::vector<float> randv(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void report(const char* name, double flops, double serial_s, double parallel_s,
            double max_diff) {
  std::printf("%-18s serial %8.2f ms (%7.2f MFLOP/s)  omp %8.2f ms "
              "(%7.2f MFLOP/s)  speedup %.2fx  max|diff| %.1e\n",
              name, serial_s * 1e3, flops / serial_s / 1e6, parallel_s * 1e3,
              flops / parallel_s / 1e6, serial_s / parallel_s, max_diff);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::i64 n = argc > 1 ? std::stoll(argv[1]) : 256;
  int iters = argc > 2 ? std::stoi(argv[2]) : 5;
  Rng rng(7);

  {
    auto a = randv(n * n, rng), b = randv(n * n, rng);
    std::vector<float> c1(n * n), c2(n * n);
    double s = time_best(
        [&] { kernels::serial::matmul_nn(a.data(), b.data(), c1.data(), n, n, n, false); },
        iters);
    double p = time_best(
        [&] { kernels::parallel::matmul_nn(a.data(), b.data(), c2.data(), n, n, n, false); },
        iters);
    report("matmul_nn", 2.0 * n * n * n, s, p, max_abs_diff(c1, c2));
  }
  {
    auto a = randv(n * n, rng), b = randv(n * n, rng);
    std::vector<float> c1(n * n), c2(n * n);
    double s = time_best(
        [&] { kernels::serial::matmul_nt(a.data(), b.data(), c1.data(), n, n, n, false); },
        iters);
    double p = time_best(
        [&] { kernels::parallel::matmul_nt(a.data(), b.data(), c2.data(), n, n, n, false); },
        iters);
    report("matmul_nt", 2.0 * n * n * n, s, p, max_abs_diff(c1, c2));
  }
  {
    kernels::i64 rows = 64 * n, cols = 128;
    auto x = randv(rows * cols, rng);
    std::vector<float> y1(rows * cols), y2(rows * cols);
    std::vector<kernels::i64> prefix(rows);
    for (kernels::i64 r = 0; r < rows; ++r) prefix[r] = 1 + (r % cols);
    double s = time_best(
        [&] { kernels::serial::softmax_rows(x.data(), y1.data(), rows, cols, prefix.data()); },
        iters);
    double p = time_best(
        [&] { kernels::parallel::softmax_rows(x.data(), y2.data(), rows, cols, prefix.data()); },
        iters);
    report("softmax_rows", 4.0 * rows * cols, s, p, max_abs_diff(y1, y2));
  }
  {
    kernels::i64 rows = 64 * n, cols = 128;
    auto x = randv(rows * cols, rng);
    auto g = randv(cols, rng), b = randv(cols, rng);
    std::vector<float> y1(rows * cols), y2(rows * cols);
    std::vector<float> m1(rows), m2(rows), r1(rows), r2(rows);
    double s = time_best(
        [&] {
          kernels::serial::layer_norm_forward(x.data(), g.data(), b.data(),
                                              y1.data(), m1.data(), r1.data(),
                                              rows, cols, 1e-5f);
        },
        iters);
    double p = time_best(
        [&] {
          kernels::parallel::layer_norm_forward(x.data(), g.data(), b.data(),
                                                y2.data(), m2.data(), r2.data(),
                                                rows, cols, 1e-5f);
        },
        iters);
    report("layer_norm", 8.0 * rows * cols, s, p, max_abs_diff(y1, y2));
  }
  {
    kernels::i64 count = 4 * n * n;
    auto x = randv(count, rng);
    std::vector<float> y1(count), y2(count);
    double s = time_best(
        [&] { kernels::serial::gelu_forward(x.data(), y1.data(), count); },
        iters);
    double p = time_best(
        [&] { kernels::parallel::gelu_forward(x.data(), y2.data(), count); },
        iters);
    report("gelu", 10.0 * count, s, p, max_abs_diff(y1, y2));
  }
  {
    kernels::i64 count = 4 * n * n;
    auto g = randv(count, rng);
    auto p1 = randv(count, rng);
    auto p2 = p1;
    std::vector<float> m1(count, 0), v1(count, 0), m2(count, 0), v2(count, 0);
    double s = time_best(
        [&] {
          kernels::serial::adam_step(p1.data(), g.data(), m1.data(), v1.data(),
                                     count, 1e-3f, 0.9f, 0.999f, 1e-8f, 0.1f,
                                     0.001f);
        },
        iters);
    double p = time_best(
        [&] {
          kernels::parallel::adam_step(p2.data(), g.data(), m2.data(),
                                       v2.data(), count, 1e-3f, 0.9f, 0.999f,
                                       1e-8f, 0.1f, 0.001f);
        },
        iters);
    report("adam_step", 10.0 * count, s, p, max_abs_diff(p1, p2));
  }
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp; both paths run serially\n");
#endif
  return 0;
}
