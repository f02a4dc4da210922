#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "mmd/common.hpp"
#include "mmd/kernels.hpp"

using namespace mmd;

namespace {

std::vector<double> randv(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct ParallelGuard {
  bool saved = kernels::parallel_enabled();
  ~ParallelGuard() { kernels::set_parallel(saved); }
};

}  // namespace

// The OpenMP kernels accumulate each output element in the same order as
// the serial references, so outputs must agree bit-for-bit.
TEST_CASE("matmul variants: parallel matches serial exactly") {
  Rng rng(7);
  const kernels::i64 m = 33, k = 17, n = 29;
  auto a = randv(m * k, rng), b = randv(k * n, rng);
  auto bt = randv(n * k, rng), at = randv(k * m, rng);

  std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
  kernels::serial::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, true);
  kernels::parallel::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, true);
  CHECK(c1 == c2);

  kernels::serial::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
  kernels::parallel::matmul_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
  CHECK(c1 == c2);

  kernels::serial::matmul_tn(at.data(), b.data(), c1.data(), m, k, n, false);
  kernels::parallel::matmul_tn(at.data(), b.data(), c2.data(), m, k, n, false);
  CHECK(c1 == c2);
}

TEST_CASE("row kernels: parallel matches serial exactly") {
  Rng rng(13);
  const kernels::i64 rows = 19, cols = 23;
  auto x = randv(rows * cols, rng);
  std::vector<kernels::i64> prefix(rows);
  for (kernels::i64 r = 0; r < rows; ++r) prefix[r] = 1 + (r % cols);

  std::vector<double> y1(rows * cols), y2(rows * cols);
  kernels::serial::softmax_rows(x.data(), y1.data(), rows, cols, prefix.data());
  kernels::parallel::softmax_rows(x.data(), y2.data(), rows, cols,
                                  prefix.data());
  CHECK(y1 == y2);

  auto dy = randv(rows * cols, rng);
  std::vector<double> dx1(rows * cols, 0.0), dx2(rows * cols, 0.0);
  kernels::serial::softmax_backward_rows(y1.data(), dy.data(), dx1.data(),
                                         rows, cols, prefix.data());
  kernels::parallel::softmax_backward_rows(y1.data(), dy.data(), dx2.data(),
                                           rows, cols, prefix.data());
  CHECK(dx1 == dx2);

  auto gain = randv(cols, rng), bias = randv(cols, rng);
  std::vector<double> m1(rows), m2(rows), r1(rows), r2(rows);
  kernels::serial::layer_norm_forward(x.data(), gain.data(), bias.data(),
                                      y1.data(), m1.data(), r1.data(), rows,
                                      cols, 1e-5);
  kernels::parallel::layer_norm_forward(x.data(), gain.data(), bias.data(),
                                        y2.data(), m2.data(), r2.data(), rows,
                                        cols, 1e-5);
  CHECK(y1 == y2);
  CHECK(m1 == m2);
  CHECK(r1 == r2);

  std::fill(dx1.begin(), dx1.end(), 0.0);
  std::fill(dx2.begin(), dx2.end(), 0.0);
  kernels::serial::layer_norm_backward_dx(x.data(), gain.data(), m1.data(),
                                          r1.data(), dy.data(), dx1.data(),
                                          rows, cols);
  kernels::parallel::layer_norm_backward_dx(x.data(), gain.data(), m1.data(),
                                            r1.data(), dy.data(), dx2.data(),
                                            rows, cols);
  CHECK(dx1 == dx2);

  kernels::serial::gelu_forward(x.data(), y1.data(), rows * cols);
  kernels::parallel::gelu_forward(x.data(), y2.data(), rows * cols);
  CHECK(y1 == y2);
}

TEST_CASE("adam kernel: parallel matches serial exactly") {
  Rng rng(29);
  const kernels::i64 n = 257;
  auto g = randv(n, rng);
  auto p1 = randv(n, rng);
  auto p2 = p1;
  std::vector<double> m1(n, 0), v1(n, 0), m2(n, 0), v2(n, 0);
  kernels::serial::adam_step(p1.data(), g.data(), m1.data(), v1.data(), n,
                             1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001);
  kernels::parallel::adam_step(p2.data(), g.data(), m2.data(), v2.data(), n,
                               1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001);
  CHECK(p1 == p2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);
}

TEST_CASE("dispatch honors the runtime switch") {
  ParallelGuard guard;
  kernels::set_parallel(false);
  CHECK_FALSE(kernels::parallel_enabled());
  kernels::set_parallel(true);
  CHECK(kernels::parallel_enabled());
}

TEST_CASE("softmax rows are distributions over the prefix") {
  Rng rng(31);
  const kernels::i64 rows = 12, cols = 12;
  auto x = randv(rows * cols, rng);
  std::vector<kernels::i64> prefix(rows);
  for (kernels::i64 r = 0; r < rows; ++r) prefix[r] = r + 1;
  std::vector<double> y(rows * cols);
  kernels::softmax_rows(x.data(), y.data(), rows, cols, prefix.data());
  for (kernels::i64 r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (kernels::i64 j = 0; j < cols; ++j) {
      if (j <= r)
        sum += y[r * cols + j];
      else
        CHECK(y[r * cols + j] == 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}
