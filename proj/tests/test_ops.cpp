#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "fdnflow/conv.hpp"
#include "fdnflow/optim.hpp"
#include "gradcheck.hpp"

using namespace fdnflow;

namespace {

// Direct nested-loop convolution, independent of the im2col/GEMM path.
std::vector<double> conv2d_oracle(const std::vector<double>& in, int Cin, int H,
                                  int W, const std::vector<double>& wt, int Cout,
                                  int k, const std::vector<double>& bias,
                                  int stride, int pad) {
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(Cout) * Ho * Wo);
  for (int co = 0; co < Cout; ++co)
    for (int oi = 0; oi < Ho; ++oi)
      for (int oj = 0; oj < Wo; ++oj) {
        double acc = bias[co];
        for (int ci = 0; ci < Cin; ++ci)
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              const int ii = oi * stride + ki - pad;
              const int jj = oj * stride + kj - pad;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              acc += in[(static_cast<std::size_t>(ci) * H + ii) * W + jj] *
                     wt[((static_cast<std::size_t>(co) * Cin + ci) * k + ki) * k + kj];
            }
        out[(static_cast<std::size_t>(co) * Ho + oi) * Wo + oj] = acc;
      }
  return out;
}

// Zero-insertion + kernel application oracle for the stride-2 2x2
// transposed convolution.
std::vector<double> deconv_oracle(const std::vector<double>& in, int Cin, int H,
                                  int W, const std::vector<double>& wt, int Cout,
                                  const std::vector<double>& bias) {
  const int Ho = 2 * H, Wo = 2 * W;
  std::vector<double> out(static_cast<std::size_t>(Cout) * Ho * Wo);
  for (int co = 0; co < Cout; ++co)
    for (int i = 0; i < Ho * Wo; ++i)
      out[static_cast<std::size_t>(co) * Ho * Wo + i] = bias[co];
  for (int ci = 0; ci < Cin; ++ci)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int co = 0; co < Cout; ++co)
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              out[(static_cast<std::size_t>(co) * Ho + 2 * i + a) * Wo + 2 * j + b] +=
                  in[(static_cast<std::size_t>(ci) * H + i) * W + j] *
                  wt[((static_cast<std::size_t>(ci) * Cout + co) * 2 + a) * 2 + b];
  return out;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 against the nested-loop oracle") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == 9.0);  // center
  CHECK(y.data()[0] == 4.0);  // corners
  CHECK(y.data()[2] == 4.0);
  CHECK(y.data()[6] == 4.0);
  CHECK(y.data()[8] == 4.0);
  CHECK(y.data() == conv2d_oracle(x.data(), 1, 3, 3, w.data(), 1, 3, b.data(), 1, 1));
}

TEST_CASE("conv2d: delta kernel is the identity") {
  std::mt19937_64 gen(1);
  Tensor x = testutil::random_tensor({1, 1, 5, 6}, gen, 0, 1, false);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.data()[4] = 1.0;  // center tap
  Tensor y = conv2d(x, w, Tensor::zeros({1}), 1, 1);
  CHECK(y.data() == x.data());
}

TEST_CASE("conv2d: zero weight with bias 0.7") {
  Tensor x = Tensor::full({1, 2, 4, 4}, 3.0);
  Tensor y = conv2d(x, Tensor::zeros({3, 2, 3, 3}),
                    Tensor::full({3}, 0.7), 1, 1);
  for (double v : y.data()) CHECK(v == 0.7);
}

TEST_CASE("conv2d: channel mismatch is rejected") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 2, 3, 3}), Tensor::zeros({2}), 1, 1),
                  std::invalid_argument);
}

TEST_CASE("conv2d matches oracle on random shapes") {
  std::mt19937_64 gen(17);
  for (int rep = 0; rep < 25; ++rep) {
    const int Cin = 1 + static_cast<int>(gen() % 3);
    const int Cout = 1 + static_cast<int>(gen() % 3);
    const int k = 1 + 2 * static_cast<int>(gen() % 2);  // 1 or 3
    const int H = k + static_cast<int>(gen() % 5);
    const int W = k + static_cast<int>(gen() % 5);
    const int pad = k == 3 ? 1 : 0;
    Tensor x = testutil::random_tensor({1, Cin, H, W}, gen, -1, 1, false);
    Tensor w = testutil::random_tensor({Cout, Cin, k, k}, gen, -1, 1, false);
    Tensor b = testutil::random_tensor({Cout}, gen, -1, 1, false);
    Tensor y = conv2d(x, w, b, 1, pad);
    auto ref = conv2d_oracle(x.data(), Cin, H, W, w.data(), Cout, k, b.data(), 1, pad);
    REQUIRE(y.data().size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv_transpose2d: single pixel broadcasts through the kernel") {
  const double v = 2.75;
  Tensor x = Tensor::full({1, 1, 1, 1}, v);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv_transpose2d(x, w, Tensor::zeros({1}));
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double o : y.data()) CHECK(o == v);
}

TEST_CASE("conv_transpose2d: zero input gives bias") {
  std::mt19937_64 gen(2);
  Tensor x = Tensor::zeros({1, 2, 3, 3});
  Tensor w = testutil::random_tensor({2, 1, 2, 2}, gen, -1, 1, false);
  Tensor y = conv_transpose2d(x, w, Tensor::full({1}, 0.3));
  for (double o : y.data()) CHECK(o == 0.3);
}

TEST_CASE("conv_transpose2d: 2x2 input tiles into 2x2 blocks") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv_transpose2d(x, w, Tensor::zeros({1}));
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.data() == deconv_oracle(x.data(), 1, 2, 2, w.data(), 1, {0.0}));
  CHECK(y.data() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2,
                                        3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("conv_transpose2d matches oracle on random inputs") {
  std::mt19937_64 gen(23);
  for (int rep = 0; rep < 20; ++rep) {
    const int Cin = 1 + static_cast<int>(gen() % 3);
    const int Cout = 1 + static_cast<int>(gen() % 3);
    const int H = 1 + static_cast<int>(gen() % 4);
    const int W = 1 + static_cast<int>(gen() % 4);
    Tensor x = testutil::random_tensor({1, Cin, H, W}, gen, -1, 1, false);
    Tensor w = testutil::random_tensor({Cin, Cout, 2, 2}, gen, -1, 1, false);
    Tensor b = testutil::random_tensor({Cout}, gen, -1, 1, false);
    auto ref = deconv_oracle(x.data(), Cin, H, W, w.data(), Cout, b.data());
    Tensor y = conv_transpose2d(x, w, b);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("maxpool2d basics") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(x).data() == std::vector<double>{4.0});

  Tensor c = Tensor::full({1, 1, 4, 4}, 1.5, true);
  Tensor y = maxpool2d(c);
  for (double v : y.data()) CHECK(v == 1.5);
  sum(y).backward();
  double total = 0.0;
  for (double g : c.grad()) total += g;
  CHECK(total == 4.0);  // one unit per window

  CHECK_THROWS_AS(maxpool2d(Tensor::zeros({1, 1, 3, 4})), std::invalid_argument);
}

TEST_CASE("maxpool2d ties route to the first element in row-major order") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 5.0, true);
  sum(maxpool2d(x)).backward();
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("batchnorm2d: constant channel maps to beta") {
  BatchNormState st = BatchNormState::init(1);
  Tensor x = Tensor::full({1, 1, 3, 3}, 4.2);
  Tensor y = batchnorm2d(x, Tensor::full({1}, 1.0), Tensor::full({1}, 0.25), st, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("batchnorm2d: symmetric +-1 channel") {
  BatchNormState st = BatchNormState::init(1);
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {-1, 1, -1, 1});
  Tensor y = batchnorm2d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, true);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(y.data()[i] == doctest::Approx((i % 2 ? 1.0 : -1.0) * expect).epsilon(1e-12));
}

TEST_CASE("batchnorm2d: gamma=0 collapses to beta") {
  BatchNormState st = BatchNormState::init(2);
  std::mt19937_64 gen(4);
  Tensor x = testutil::random_tensor({1, 2, 3, 3}, gen, -2, 2, false);
  Tensor y = batchnorm2d(x, Tensor::zeros({2}), Tensor::full({2}, -0.5), st, true);
  for (double v : y.data()) CHECK(v == -0.5);
}

TEST_CASE("batchnorm2d: running statistics update with momentum 0.1") {
  BatchNormState st = BatchNormState::init(1);
  Tensor x = Tensor::from_data({1, 1, 1, 2}, {1.0, 3.0});  // mean 2, var 1
  batchnorm2d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, true);
  CHECK(st.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(st.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));

  // eval mode leaves stats untouched and uses them for normalization
  auto saved = st.running_mean;
  batchnorm2d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, false);
  CHECK(st.running_mean == saved);
}

TEST_CASE("batchnorm2d rejects degenerate inputs") {
  BatchNormState st = BatchNormState::init(1);
  CHECK_THROWS_AS(batchnorm2d(Tensor::zeros({1, 1, 1, 1}), Tensor::full({1}, 1.0),
                              Tensor::zeros({1}), st, true),
                  std::invalid_argument);
}

TEST_CASE("bilinear_resize: 2x2 corners land exactly on a 4x4 grid") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {0, 1, 2, 3});
  Tensor y = bilinear_resize(x, 4, 4);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[3] == 1.0);
  CHECK(y.data()[12] == 2.0);
  CHECK(y.data()[15] == 3.0);
}

TEST_CASE("bilinear_resize: identity and constants") {
  std::mt19937_64 gen(6);
  Tensor x = testutil::random_tensor({1, 2, 3, 5}, gen, 0, 1, false);
  CHECK(bilinear_resize(x, 3, 5).data() == x.data());

  Tensor c = Tensor::full({1, 1, 3, 3}, 0.8);
  Tensor r = bilinear_resize(c, 7, 2);
  for (double v : r.data()) CHECK(v == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  std::vector<Tensor> params{p};
  AdamState st = AdamState::init(params);
  adam_step(params, st, 1e-4);
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(st.step_count == 1);
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
  Tensor p = Tensor::from_data({1}, {0.0}, true);
  p.grad()[0] = 0.37;
  std::vector<Tensor> params{p};
  AdamState st = AdamState::init(params);
  adam_step(params, st, 1e-4);
  // bias-corrected first step: -lr * g / (|g| + eps*sqrt(1-beta2))
  CHECK(p.data()[0] == doctest::Approx(-1e-4).epsilon(1e-6));
  CHECK(p.grad()[0] == 0.37);  // grads untouched: caller zeroes
}

TEST_CASE("adam: per-step update magnitude never exceeds lr*(1+tol)") {
  std::mt19937_64 gen(99);
  Tensor p = Tensor::zeros({8}, true);
  std::vector<Tensor> params{p};
  AdamState st = AdamState::init(params);
  std::vector<double> prev = p.data();
  for (int step = 0; step < 200; ++step) {
    for (double& g : p.grad()) g = uniform(gen, -10.0, 10.0);
    adam_step(params, st, 1e-4);
    for (std::size_t i = 0; i < p.numel(); ++i)
      CHECK(std::abs(p.data()[i] - prev[i]) <= 1e-4 * (1.0 + 1e-6));
    prev = p.data();
    p.zero_grad();
  }
}

TEST_CASE("adam rejects mismatched state") {
  Tensor p = Tensor::zeros({3}, true);
  std::vector<Tensor> params{p};
  AdamState st = AdamState::init(params);
  st.first_moment[0].resize(2);
  CHECK_THROWS_AS(adam_step(params, st, 1e-4), std::invalid_argument);
}

TEST_CASE("gradcheck: conv2d") {
  std::mt19937_64 gen(31);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = testutil::random_tensor({1, 2, 4, 4}, gen);
    Tensor w = testutil::random_tensor({2, 2, 3, 3}, gen);
    Tensor b = testutil::random_tensor({2}, gen);
    auto stats = testutil::grad_check(
        {x, w, b}, [&] { return mean(square(conv2d(x, w, b, 1, 1))); });
    CHECK(stats.failed == 0);
    CHECK(stats.checked > 0);
  }
}

TEST_CASE("gradcheck: conv_transpose2d") {
  std::mt19937_64 gen(32);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = testutil::random_tensor({1, 2, 3, 3}, gen);
    Tensor w = testutil::random_tensor({2, 1, 2, 2}, gen);
    Tensor b = testutil::random_tensor({1}, gen);
    auto stats = testutil::grad_check(
        {x, w, b}, [&] { return mean(square(conv_transpose2d(x, w, b))); });
    CHECK(stats.failed == 0);
  }
}

TEST_CASE("gradcheck: maxpool2d and bilinear_resize") {
  std::mt19937_64 gen(33);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = testutil::random_tensor({1, 2, 4, 4}, gen);
    auto s1 = testutil::grad_check({x}, [&] { return mean(square(maxpool2d(x))); });
    CHECK(s1.failed == 0);
    Tensor y = testutil::random_tensor({1, 1, 3, 3}, gen);
    auto s2 = testutil::grad_check(
        {y}, [&] { return mean(square(bilinear_resize(y, 5, 4))); });
    CHECK(s2.failed == 0);
  }
}

TEST_CASE("gradcheck: batchnorm2d in training mode") {
  std::mt19937_64 gen(34);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = testutil::random_tensor({1, 2, 3, 3}, gen);
    Tensor g = testutil::random_tensor({2}, gen, 0.5, 1.5);
    Tensor b = testutil::random_tensor({2}, gen);
    auto stats = testutil::grad_check({x, g, b}, [&] {
      BatchNormState st = BatchNormState::init(2);  // fresh: stats are not differentiated
      return mean(square(batchnorm2d(x, g, b, st, true)));
    });
    CHECK(stats.failed == 0);
  }
}

TEST_CASE("shape round-trips: identity conv and deconv-of-pool") {
  std::mt19937_64 gen(35);
  for (int H : {4, 6, 8}) {
    for (int W : {4, 10}) {
      Tensor x = testutil::random_tensor({1, 1, H, W}, gen, 0, 1, false);
      Tensor id = Tensor::zeros({1, 1, 3, 3});
      id.data()[4] = 1.0;
      CHECK(conv2d(x, id, Tensor::zeros({1}), 1, 1).data() == x.data());

      Tensor pooled = maxpool2d(x);
      Tensor up = conv_transpose2d(pooled, Tensor::full({1, 1, 2, 2}, 1.0),
                                   Tensor::zeros({1}));
      CHECK(up.shape() == x.shape());
    }
  }
}
