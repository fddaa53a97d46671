#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tody/errors.hpp"
#include "tody/kernels.hpp"
#include "tody/rng.hpp"
#include "tody/tensor.hpp"

using namespace tody;
using tody::testing::check_gradients;

namespace {

Tensor<double> rand_t(Shape s, Rng& rng, double lo = -1, double hi = 1, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = u(rng);
  auto t = Tensor<double>::from(std::move(s), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor<double> probe(const Tensor<double>& y) {
  std::vector<double> w(static_cast<std::size_t>(y.numel()));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return ops::sum_all(ops::mul(y, Tensor<double>::from(y.shape(), std::move(w))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("matmul forward matches hand computation") {
  auto x = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from({2, 1}, {5, 6});
  auto y = ops::matmul(x, w);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.at({0, 0}) == 17);
  CHECK(y.at({1, 0}) == 39);
}

TEST_CASE("matmul shape mismatch is a shape error") {
  auto x = Tensor<double>::zeros({2, 3});
  auto w = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(ops::matmul(x, w), ShapeError);
}

TEST_CASE("gradient checks of individual operations") {
  Rng rng(11);
  SUBCASE("matmul") {
    auto x = rand_t({3, 2, 4}, rng), w = rand_t({4, 5}, rng);
    CHECK(check_gradients({x, w}, [&] { return probe(ops::matmul(x, w)); }).max_rel < kTol);
  }
  SUBCASE("bmm") {
    auto a = rand_t({2, 3, 4}, rng), b = rand_t({2, 4, 5}, rng), bt = rand_t({2, 5, 4}, rng);
    CHECK(check_gradients({a, b}, [&] { return probe(ops::bmm(a, b, false)); }).max_rel < kTol);
    CHECK(check_gradients({a, bt}, [&] { return probe(ops::bmm(a, bt, true)); }).max_rel < kTol);
  }
  SUBCASE("broadcasting arithmetic") {
    auto a = rand_t({3, 4}, rng), b = rand_t({4}, rng), c = rand_t({3, 4}, rng);
    CHECK(check_gradients({a, b}, [&] { return probe(ops::add(a, b)); }).max_rel < kTol);
    CHECK(check_gradients({a, b}, [&] { return probe(ops::sub(a, b)); }).max_rel < kTol);
    CHECK(check_gradients({a, c}, [&] { return probe(ops::mul(a, c)); }).max_rel < kTol);
    CHECK(check_gradients({a, b}, [&] { return probe(ops::mul(a, b)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::add_scalar(ops::scale(a, 1.7), 0.2)); }).max_rel < kTol);
    auto r = rand_t({3}, rng);
    CHECK(check_gradients({a, r}, [&] { return probe(ops::mul_rows(a, r)); }).max_rel < kTol);
  }
  SUBCASE("pointwise") {
    auto a = rand_t({3, 4}, rng), p = rand_t({3, 4}, rng, 0.2, 2.0);
    CHECK(check_gradients({a}, [&] { return probe(ops::relu(a)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::exp(a)); }).max_rel < kTol);
    CHECK(check_gradients({p}, [&] { return probe(ops::log(p)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::sigmoid(a)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::sin(a)); }).max_rel < kTol);
  }
  SUBCASE("shape operations") {
    auto a = rand_t({3, 4}, rng), b = rand_t({3, 2}, rng), c = rand_t({2, 4}, rng);
    CHECK(check_gradients({a, b}, [&] { return probe(ops::concat<double>({a, b})); }).max_rel < kTol);
    CHECK(check_gradients({a, c}, [&] { return probe(ops::concat_rows<double>({a, c})); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::slice_cols(a, 1, 3)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::reshape(a, {2, 6})); }).max_rel < kTol);
  }
  SUBCASE("indexing and segments") {
    auto a = rand_t({4, 3}, rng);
    const std::vector<std::int64_t> idx{2, 0, -1, 2, 3};
    CHECK(check_gradients({a}, [&] { return probe(ops::gather_rows(a, idx)); }).max_rel < kTol);
    const std::vector<std::int64_t> to{1, 1, 0, 4};
    CHECK(check_gradients({a}, [&] { return probe(ops::scatter_rows(a, to, 5)); }).max_rel < kTol);
    const std::vector<std::int64_t> off{0, 2, 2, 4};
    CHECK(check_gradients({a}, [&] { return probe(ops::segment_sum(a, off)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::segment_max(a, off)); }).max_rel < kTol);
    auto s = rand_t({4}, rng);
    CHECK(check_gradients({s}, [&] { return probe(ops::segment_softmax(s, off)); }).max_rel < kTol);
  }
  SUBCASE("reductions") {
    auto a = rand_t({3, 4}, rng);
    CHECK(check_gradients({a}, [&] { return probe(ops::reduce_sum(a)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::reduce_mean(a)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return probe(ops::reduce_max(a)); }).max_rel < kTol);
    CHECK(check_gradients({a}, [&] { return ops::mean_all(ops::mul(a, a)); }).max_rel < kTol);
  }
  SUBCASE("masked softmax and layer norm") {
    auto a = rand_t({2, 3, 3}, rng);
    const Mask m{1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0, 1, 1};
    CHECK(check_gradients({a}, [&] { return probe(ops::masked_softmax(a, m)); }).max_rel < kTol);
    auto x = rand_t({2, 3, 5}, rng), g = rand_t({5}, rng), b = rand_t({5}, rng);
    CHECK(check_gradients({x, g, b}, [&] { return probe(ops::layer_norm(x, g, b)); }).max_rel < kTol);
  }
  SUBCASE("losses") {
    auto p = rand_t({6}, rng, 0.05, 0.95);
    const std::vector<double> y{1, 0, 0, 1, 1, 0};
    CHECK(check_gradients({p}, [&] { return ops::bce_loss(p, std::span<const double>(y)); }).max_rel < kTol);
    auto logits = rand_t({4, 5}, rng, -2, 2);
    const std::vector<int> labels{0, 4, 2, 2};
    CHECK(check_gradients({logits}, [&] { return ops::ce_loss(logits, std::span<const int>(labels)); }).max_rel <
          kTol);
  }
}

TEST_CASE("fully masked softmax rows are zero") {
  auto a = Tensor<double>::from({1, 3}, {1, 2, 3});
  auto y = ops::masked_softmax(a, Mask{0, 0, 0});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("gradients accumulate on leaves until cleared") {
  auto a = Tensor<double>::from({2}, {1, 2});
  a.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    GradientTape<double> tape;
    tape.backward(ops::sum_all(ops::scale(a, 3.0)));
  }
  CHECK(a.grad()[0] == 6.0);
  a.zero_grad();
  CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("backward needs a scalar loss") {
  auto a = Tensor<double>::from({2}, {1, 2});
  a.set_requires_grad(true);
  GradientTape<double> tape;
  CHECK_THROWS_AS(tape.backward(ops::scale(a, 2.0)), ContractError);
}

TEST_CASE("no tape, no recording") {
  auto a = Tensor<double>::from({2}, {1, 2});
  a.set_requires_grad(true);
  GradientTape<double> tape;
  {
    NoGrad<double> off;
    (void)ops::exp(a);
  }
  CHECK(tape.size() == 0);
  (void)ops::exp(a);
  CHECK(tape.size() == 1);
}

TEST_CASE("bce and ce loss values") {
  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(ops::bce_loss(Tensor<double>::from({1}, {0.5}), std::span<const double>(one)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ops::bce_loss(Tensor<double>::from({1}, {0.9}), std::span<const double>(zero)).item() ==
        doctest::Approx(-std::log(0.1)).epsilon(1e-12));
  CHECK(ops::bce_loss(Tensor<double>::from({1}, {1.0 - 1e-7}), std::span<const double>(one)).item() < 1e-6);
  // Exact 0 and 1 are clamped rather than producing infinities.
  CHECK(std::isfinite(ops::bce_loss(Tensor<double>::from({1}, {0.0}), std::span<const double>(one)).item()));
  const std::vector<int> y0{0};
  CHECK(ops::ce_loss(Tensor<double>::from({1, 2}, {0, 0}), std::span<const int>(y0)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ops::ce_loss(Tensor<double>::from({1, 2}, {10, -10}), std::span<const int>(y0)).item() < 1e-8);
  const std::vector<int> bad{2};
  CHECK_THROWS_AS(ops::ce_loss(Tensor<double>::from({1, 2}, {0, 0}), std::span<const int>(bad)), ContractError);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> dim(1, 70);
    const int m = dim(rng), k = dim(rng), n = dim(rng);
    std::vector<double> a(static_cast<std::size_t>(m * k)), b(static_cast<std::size_t>(k * n)),
        bt(static_cast<std::size_t>(n * k)), at(static_cast<std::size_t>(k * m));
    for (auto* v : {&a, &b, &bt, &at}) {
      for (auto& x : *v) x = u(rng);
    }
    std::vector<double> c1(static_cast<std::size_t>(m * n), 0.5), c2 = c1;
    kernels::serial::gemm_nn(a.data(), b.data(), c1.data(), m, k, n, true);
    kernels::omp::gemm_nn(a.data(), b.data(), c2.data(), m, k, n, true);
    CHECK(c1 == c2);
    kernels::serial::gemm_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
    kernels::omp::gemm_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);
    kernels::serial::gemm_tn(at.data(), b.data(), c1.data(), k, m, n, true);
    kernels::omp::gemm_tn(at.data(), b.data(), c2.data(), k, m, n, true);
    CHECK(c1 == c2);

    std::vector<unsigned char> mask(static_cast<std::size_t>(m * n));
    for (auto& x : mask) x = static_cast<unsigned char>(rng() % 3 != 0);
    std::vector<double> s1(static_cast<std::size_t>(m * n)), s2 = s1;
    kernels::serial::masked_softmax_rows(c1.data(), mask.data(), s1.data(), m, n);
    kernels::omp::masked_softmax_rows(c1.data(), mask.data(), s2.data(), m, n);
    CHECK(s1 == s2);

    std::vector<double> g(static_cast<std::size_t>(n), 1.3), bb(static_cast<std::size_t>(n), -0.2);
    std::vector<double> y1(static_cast<std::size_t>(m * n)), y2 = y1, xh1 = y1, xh2 = y1,
                                                                 is1(static_cast<std::size_t>(m)), is2 = is1;
    kernels::serial::layer_norm_rows(c1.data(), g.data(), bb.data(), y1.data(), xh1.data(), is1.data(), m, n, 1e-5);
    kernels::omp::layer_norm_rows(c1.data(), g.data(), bb.data(), y2.data(), xh2.data(), is2.data(), m, n, 1e-5);
    CHECK(y1 == y2);
    CHECK(is1 == is2);
  }
}
