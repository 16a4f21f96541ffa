#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clam/adam.hpp"
#include "clam/errors.hpp"
#include "clam/ops.hpp"
#include "support/testutil.hpp"

using namespace clam;
using testutil::conv2d_oracle;
using testutil::conv2d_transpose_oracle;
using testutil::fd_gradient;
using testutil::matmul_oracle;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

void check_close(const Tensor& got, const Tensor& want, double tol = 1e-12) {
  REQUIRE(got.shape() == want.shape());
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol).scale(1.0));
}

}  // namespace

TEST_CASE("conv2d identity kernel passes input through") {
  Rng rng(1);
  Tensor x = random_tensor({2, 3, 5, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (int64_t c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
  Tensor b({3});
  Tensor y = conv2d(x, w, b, 1, Padding{});
  check_close(y, x);
}

TEST_CASE("conv2d output size arithmetic for the halving config") {
  Tensor x({1, 1, 64, 64});
  Tensor w({8, 1, 4, 4});
  Tensor b({8});
  Tensor y = conv2d(x, w, b, 2, pad_halving());
  CHECK(y.shape() == Shape{1, 8, 32, 32});

  Tensor x2({1, 1, 32, 32});
  Tensor y2 = conv2d(x2, w, b, 1, pad_same_k4());
  CHECK(y2.shape() == Shape{1, 8, 32, 32});
}

TEST_CASE("conv2d all-ones 2x2 case") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor b({1});
  Tensor y = conv2d(x, w, b, 1, Padding{});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(4.0));
}

TEST_CASE("conv2d matches the triple-loop oracle") {
  Rng rng(7);
  struct Case {
    Shape xs, ws;
    int stride;
    Padding pad;
  };
  for (const auto& c : {Case{{2, 3, 6, 6}, {4, 3, 4, 4}, 2, pad_halving()},
                        Case{{1, 2, 5, 7}, {3, 2, 3, 3}, 1, Padding{1, 0, 2, 1}},
                        Case{{2, 1, 8, 8}, {2, 1, 4, 4}, 1, pad_same_k4()},
                        Case{{1, 2, 4, 4}, {1, 2, 2, 2}, 2, Padding{}}}) {
    Tensor x = random_tensor(c.xs, rng);
    Tensor w = random_tensor(c.ws, rng);
    Tensor b = random_tensor({c.ws[0]}, rng);
    check_close(conv2d(x, w, b, c.stride, c.pad), conv2d_oracle(x, w, b, c.stride, c.pad), 1e-10);
  }
}

TEST_CASE("conv2d on a Dirac input reproduces the kernel footprint") {
  Tensor x({1, 1, 5, 5});
  x.at({0, 0, 2, 2}) = 1.0;
  Rng rng(3);
  Tensor w = random_tensor({1, 1, 3, 3}, rng);
  Tensor b({1});
  Tensor y = conv2d(x, w, b, 1, Padding{1, 1, 1, 1});
  check_close(y, conv2d_oracle(x, w, b, 1, Padding{1, 1, 1, 1}), 1e-12);
  // Cross-correlation: the footprint is the kernel flipped around the Dirac.
  for (int64_t ky = 0; ky < 3; ++ky)
    for (int64_t kx = 0; kx < 3; ++kx)
      CHECK(y.at({0, 0, 3 - ky, 3 - kx}) == doctest::Approx(w.at({0, 0, ky, kx})));
}

TEST_CASE("conv2d rejects bad shapes with diagnostics") {
  Tensor x({1, 2, 5, 5});
  Tensor w({3, 4, 3, 3});
  Tensor b({3});
  CHECK_THROWS_AS(conv2d(x, w, b, 1, Padding{}), ShapeError);
  Tensor w2({3, 2, 4, 4});
  CHECK_THROWS_WITH_AS(conv2d(x, w2, b, 2, Padding{}), doctest::Contains("non-integer"),
                       ShapeError);
}

TEST_CASE("conv2d_transpose inverts the paired conv shape map") {
  Rng rng(11);
  Tensor x = random_tensor({1, 1, 64, 64}, rng);
  Tensor w = random_tensor({8, 1, 4, 4}, rng);
  Tensor b = random_tensor({8}, rng);
  Tensor mid = conv2d(x, w, b, 2, pad_halving());
  CHECK(mid.shape() == Shape{1, 8, 32, 32});
  Tensor wt = random_tensor({8, 1, 4, 4}, rng);
  Tensor bt({1});
  Tensor back = conv2d_transpose(mid, wt, bt, 2, pad_halving());
  CHECK(back.shape() == x.shape());
}

TEST_CASE("conv2d_transpose unit 1x1 kernel at stride 1 is identity") {
  Rng rng(13);
  Tensor x = random_tensor({2, 1, 4, 4}, rng);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor b({1});
  check_close(conv2d_transpose(x, w, b, 1, Padding{}), x);
}

TEST_CASE("conv2d_transpose single pixel scatters the kernel") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 1.0);
  Rng rng(17);
  Tensor w = random_tensor({1, 2, 4, 4}, rng);
  Tensor b({2});
  Tensor y = conv2d_transpose(x, w, b, 2, Padding{});
  CHECK(y.shape() == Shape{1, 2, 4, 4});
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t ky = 0; ky < 4; ++ky)
      for (int64_t kx = 0; kx < 4; ++kx)
        CHECK(y.at({0, co, ky, kx}) == doctest::Approx(w.at({0, co, ky, kx})));
}

TEST_CASE("conv2d_transpose matches the scatter oracle") {
  Rng rng(19);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);
  Tensor w = random_tensor({3, 2, 4, 4}, rng);
  Tensor b = random_tensor({2}, rng);
  for (const auto& [stride, pad] :
       {std::pair<int, Padding>{2, pad_halving()}, {1, pad_same_k4()}, {2, Padding{}}}) {
    check_close(conv2d_transpose(x, w, b, stride, pad),
                conv2d_transpose_oracle(x, w, b, stride, pad), 1e-10);
  }
}

TEST_CASE("dense identity and constant-bias cases") {
  Rng rng(23);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (int64_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  Tensor b0({4});
  check_close(dense(x, eye, b0), x);

  Tensor zero({4, 2});
  Tensor b = Tensor::from_data({2}, {0.5, -1.5});
  Tensor y = dense(x, zero, b);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(y.at({i, 0}) == doctest::Approx(0.5));
    CHECK(y.at({i, 1}) == doctest::Approx(-1.5));
  }
}

TEST_CASE("dense matches the naive matmul oracle") {
  Rng rng(29);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  check_close(dense(x, w, b), matmul_oracle(x, w, b), 1e-12);
}

TEST_CASE("leaky_relu value semantics") {
  Tensor x = Tensor::from_data({4}, {3.0, -2.0, 0.0, 0.5});
  Tensor y = leaky_relu(x, 0.01);
  CHECK(y[0] == doctest::Approx(3.0));
  CHECK(y[1] == doctest::Approx(-0.02));
  CHECK(y[2] == doctest::Approx(0.0));
  CHECK(y[3] == doctest::Approx(0.5));

  Tensor pos = Tensor::from_data({3}, {1.0, 2.0, 7.5});
  check_close(leaky_relu(pos, 0.25), pos);

  Tensor relu = leaky_relu(x, 0.0);
  CHECK(relu[1] == 0.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.0), NumericError);
}

TEST_CASE("mse_loss values and oracle") {
  Tensor a = Tensor::from_data({2}, {1.0, 0.0});
  Tensor b = Tensor::from_data({2}, {0.0, 0.0});
  CHECK(mse_loss(a, a).item() == 0.0);
  CHECK(mse_loss(a, b).item() == doctest::Approx(1.0));

  Rng rng(31);
  Tensor x = random_tensor({2, 2}, rng);
  Tensor r = random_tensor({2, 2}, rng);
  double want = 0.0;
  for (int64_t i = 0; i < 4; ++i) want += (x[i] - r[i]) * (x[i] - r[i]);
  CHECK(mse_loss(x, r).item() == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(x, Tensor({3, 2})), ShapeError);
}

TEST_CASE("backward requires a scalar and zeroes out on constant data") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor rec = x.clone();
  Tensor loss = mse_loss(x, rec);
  CHECK_THROWS_AS(add(x, x).backward(), ShapeError);
  loss.backward();
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("leaky_relu gradient at a positive point is exactly 1") {
  Tensor x = Tensor::from_data({1}, {3.0}).set_requires_grad(true);
  Tensor y = leaky_relu(x, 0.01);
  Tensor loss = mse_loss(y, Tensor::from_data({1}, {0.0}));
  loss.backward();
  // d/dx (x^2) = 2x with relu slope exactly 1 at x=3
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("every primitive matches central finite differences") {
  Rng rng(101);
  const double tol = 1e-4;

  SUBCASE("conv2d") {
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 4, 4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor target = random_tensor({2, 3, 3, 3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return mse_loss(conv2d(x, w, b, 2, pad_halving()), target).item();
    };
    Tensor loss = mse_loss(conv2d(x, w, b, 2, pad_halving()), target);
    loss.backward();
    CHECK(max_rel_error(x.grad(), fd_gradient(loss_value, x)) < tol);
    CHECK(max_rel_error(w.grad(), fd_gradient(loss_value, w)) < tol);
    CHECK(max_rel_error(b.grad(), fd_gradient(loss_value, b)) < tol);
  }

  SUBCASE("conv2d_transpose") {
    Tensor x = random_tensor({2, 3, 3, 3}, rng);
    Tensor w = random_tensor({3, 2, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor target = random_tensor({2, 2, 6, 6}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return mse_loss(conv2d_transpose(x, w, b, 2, pad_halving()), target).item();
    };
    Tensor loss = mse_loss(conv2d_transpose(x, w, b, 2, pad_halving()), target);
    loss.backward();
    CHECK(max_rel_error(x.grad(), fd_gradient(loss_value, x)) < tol);
    CHECK(max_rel_error(w.grad(), fd_gradient(loss_value, w)) < tol);
    CHECK(max_rel_error(b.grad(), fd_gradient(loss_value, b)) < tol);
  }

  SUBCASE("dense") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5}, rng);
    Tensor target = random_tensor({3, 5}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return mse_loss(dense(x, w, b), target).item();
    };
    Tensor loss = mse_loss(dense(x, w, b), target);
    loss.backward();
    CHECK(max_rel_error(x.grad(), fd_gradient(loss_value, x)) < tol);
    CHECK(max_rel_error(w.grad(), fd_gradient(loss_value, w)) < tol);
    CHECK(max_rel_error(b.grad(), fd_gradient(loss_value, b)) < tol);
  }

  SUBCASE("leaky_relu away from the kink") {
    Tensor x = random_tensor({3, 4}, rng);
    for (int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(x[i]) < 0.05) x[i] = 0.1;  // keep FD off the kink
    Tensor target = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return mse_loss(leaky_relu(x, 0.01), target).item();
    };
    Tensor loss = mse_loss(leaky_relu(x, 0.01), target);
    loss.backward();
    CHECK(max_rel_error(x.grad(), fd_gradient(loss_value, x)) < tol);
  }

  SUBCASE("soft_assign and kl_loss") {
    Tensor z = random_tensor({4, 3}, rng);
    Tensor mu = random_tensor({3, 3}, rng);
    Tensor p({4, 3});
    for (int64_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int64_t c = 0; c < 3; ++c) s += (p.at({i, c}) = rng.uniform(0.05, 1.0));
      for (int64_t c = 0; c < 3; ++c) p.at({i, c}) /= s;
    }
    z.set_requires_grad(true);
    mu.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return kl_loss_op(p, soft_assign_op(z, mu)).item();
    };
    Tensor loss = kl_loss_op(p, soft_assign_op(z, mu));
    loss.backward();
    CHECK(max_rel_error(z.grad(), fd_gradient(loss_value, z)) < tol);
    CHECK(max_rel_error(mu.grad(), fd_gradient(loss_value, mu)) < tol);
  }

  SUBCASE("reshape, add, scale composition") {
    Tensor x = random_tensor({2, 6}, rng);
    Tensor y = random_tensor({3, 4}, rng);
    Tensor target = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    auto loss_value = [&] {
      NoGradGuard ng;
      return mse_loss(add(scale(reshape(x, {3, 4}), 0.7), y), target).item();
    };
    Tensor loss = mse_loss(add(scale(reshape(x, {3, 4}), 0.7), y), target);
    loss.backward();
    CHECK(max_rel_error(x.grad(), fd_gradient(loss_value, x)) < tol);
    CHECK(max_rel_error(y.grad(), fd_gradient(loss_value, y)) < tol);
  }
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tensor x = Tensor::from_data({2}, {1.0, -2.0}).set_requires_grad(true);
  Tensor y = add(x, x);  // dy/dx = 2
  Tensor loss = mse_loss(y, Tensor({2}));
  loss.backward();
  // d/dx sum((2x)^2) = 8x
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  CHECK(x.grad()[1] == doctest::Approx(-16.0));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from_data({3}, {1.0, 2.0, 3.0}).set_requires_grad(true);
  std::vector<Tensor> params{p};
  AdamState state;
  adam_init(state, params);
  p.node()->ensure_grad();  // zero-valued gradient
  adam_step(state, params);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  CHECK(p[2] == 3.0);
}

TEST_CASE("adam first step magnitude is about the learning rate") {
  Tensor p = Tensor::from_data({2}, {0.5, -0.25}).set_requires_grad(true);
  std::vector<Tensor> params{p};
  AdamState state;
  adam_init(state, params);
  p.node()->ensure_grad();
  p.grad_vec()[0] = 0.7;
  p.grad_vec()[1] = -1.3;
  adam_step(state, params);
  // Bias-corrected first step: lr * g / (|g| + eps)
  const double d0 = 0.5 - p[0];
  const double d1 = -0.25 - p[1];
  CHECK(d0 == doctest::Approx(state.lr * 0.7 / (0.7 + state.eps)).epsilon(1e-12));
  CHECK(d1 == doctest::Approx(state.lr * -1.3 / (1.3 + state.eps)).epsilon(1e-12));
  CHECK(std::abs(d0) == doctest::Approx(state.lr).epsilon(1e-6));
}

TEST_CASE("adam descends a 1-d quadratic") {
  Tensor p = Tensor::from_data({1}, {2.0}).set_requires_grad(true);
  Tensor target = Tensor::from_data({1}, {0.0});
  std::vector<Tensor> params{p};
  AdamState state;
  adam_init(state, params);
  auto loss_of = [&] {
    NoGradGuard ng;
    return mse_loss(p, target).item();
  };
  const double before = loss_of();
  for (int i = 0; i < 2; ++i) {
    p.zero_grad();
    Tensor loss = mse_loss(p, target);
    loss.backward();
    adam_step(state, params);
  }
  CHECK(loss_of() < before);
}

TEST_CASE("adam state errors when uninitialized") {
  Tensor p = Tensor::from_data({1}, {1.0}).set_requires_grad(true);
  std::vector<Tensor> params{p};
  AdamState state;  // never initialized
  p.node()->ensure_grad();
  CHECK_THROWS_AS(adam_step(state, params), NumericError);
}

TEST_CASE("whole-engine determinism on one platform") {
  auto run = [] {
    Rng rng(42);
    Tensor x = random_tensor({2, 1, 8, 8}, rng);
    Tensor w = random_tensor({2, 1, 4, 4}, rng).set_requires_grad(true);
    Tensor b = random_tensor({2}, rng).set_requires_grad(true);
    Tensor y = conv2d(x, w, b, 2, pad_halving());
    Tensor loss = mse_loss(y, Tensor({2, 2, 4, 4}));
    loss.backward();
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);  // bit-identical
}
