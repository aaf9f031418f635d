// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "cad/ops.hpp"
#include "cad/params.hpp"
#include "cad/rng.hpp"
#include "cad/tensor.hpp"
#include "gradcheck.hpp"

using namespace cad;

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = true) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(data), requires_grad);
}

/// Triple-loop reference matmul for rank-2 operands.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, Index m,
                                  Index k, Index n) {
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index l = 0; l < k; ++l) out[i * n + j] += a[i * k + l] * b[l * n + j];
  return out;
}

}  // namespace

TEST_CASE("matmul identity case") {
  auto eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  auto v = TensorD::from({2, 1}, {5, 6});
  auto out = matmul(eye, v);
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out.values()[0] == doctest::Approx(5.0));
  CHECK(out.values()[1] == doctest::Approx(6.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  auto a = TensorD::from({2, 2}, {1, 2, 3, 4});
  auto b = TensorD::from({2, 1}, {5, 6});
  auto out = matmul(a, b);
  CHECK(out.values()[0] == doctest::Approx(17.0));
  CHECK(out.values()[1] == doctest::Approx(39.0));

  Rng rng(11);
  for (auto [m, k, n] : {std::tuple<Index, Index, Index>{3, 4, 5},
                         {1, 7, 2},
                         {6, 1, 3}}) {
    auto x = random_tensor({m, k}, rng);
    auto y = random_tensor({k, n}, rng);
    auto z = matmul(x, y);
    auto ref = matmul_oracle(x.values(), y.values(), m, k, n);
    for (Index i = 0; i < z.size(); ++i)
      CHECK(z.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul batched broadcast matches per-slice oracle") {
  Rng rng(12);
  auto x = random_tensor({3, 2, 4}, rng);  // batch of 3
  auto w = random_tensor({4, 5}, rng);     // broadcast over batch
  auto z = matmul(x, w);
  CHECK(z.shape() == Shape{3, 2, 5});
  for (Index b = 0; b < 3; ++b) {
    std::vector<double> slice(x.values().begin() + b * 8,
                              x.values().begin() + (b + 1) * 8);
    auto ref = matmul_oracle(slice, w.values(), 2, 4, 5);
    for (Index i = 0; i < 10; ++i)
      CHECK(z.values()[b * 10 + i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = TensorD::zeros({2, 3});
  auto b = TensorD::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected shape mismatch");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("inner extents") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto z = softmax_lastdim(TensorD::from({3}, {0, 0, 0}));
  for (double v : z.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto x = TensorD::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  auto y = softmax_lastdim(x);
  CHECK(y.values()[0] == doctest::Approx(1.0 / 6.0));
  CHECK(y.values()[1] == doctest::Approx(2.0 / 6.0));
  CHECK(y.values()[2] == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("softmax shift invariance and distribution properties") {
  Rng rng(21);
  for (Shape shape : {Shape{7}, Shape{2, 5}, Shape{3, 2, 4}}) {
    auto x = random_tensor(shape, rng, -3.0, 3.0, false);
    auto y = softmax_lastdim(x);
    const Index n = shape.back();
    const Index rows = y.size() / n;
    for (Index r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double v = y.values()[r * n + j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    const double c = rng.uniform(-5.0, 5.0);
    auto shifted = x.clone();
    for (auto& v : shifted.values_mut()) v += c;
    auto y2 = softmax_lastdim(shifted);
    for (Index i = 0; i < y.size(); ++i)
      CHECK(y2.values()[i] == doctest::Approx(y.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("activation examples") {
  auto r = relu(TensorD::from({2}, {-1, 2}));
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);

  CHECK(sigmoid(TensorD::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK(sigmoid(TensorD::scalar(20.0)).item() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm examples") {
  auto gamma = TensorD::from({2}, {1, 1});
  auto beta = TensorD::from({2}, {0, 0});

  auto constant = layer_norm_lastdim(TensorD::from({3, 2}, {4, 4, -1, -1, 0, 0}),
                                     gamma, beta);
  for (double v : constant.values()) CHECK(std::abs(v) < 1e-6);

  auto y = layer_norm_lastdim(TensorD::from({2}, {1, 3}), gamma, beta, 1e-12);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm output statistics on random input") {
  Rng rng(31);
  const Index n = 16;
  auto gamma = TensorD::full({n}, 1.0);
  auto beta = TensorD::zeros({n});
  auto x = random_tensor({5, n}, rng, -4.0, 4.0, false);
  auto y = layer_norm_lastdim(x, gamma, beta);
  for (Index r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (Index j = 0; j < n; ++j) mean += y.values()[r * n + j];
    mean /= n;
    for (Index j = 0; j < n; ++j) {
      const double d = y.values()[r * n + j] - mean;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("layer norm rejects degenerate last extent") {
  auto gamma = TensorD::from({1}, {1});
  auto beta = TensorD::from({1}, {0});
  CHECK_THROWS_AS(layer_norm_lastdim(TensorD::from({3, 1}, {1, 2, 3}), gamma, beta),
                  std::invalid_argument);
}

TEST_CASE("reduce_mean examples") {
  auto ones = TensorD::full({2, 3}, 1.0);
  for (Index d = 0; d < 2; ++d) {
    auto avg = reduce_mean(ones, d);
    for (double v : avg.values()) CHECK(v == doctest::Approx(1.0));
  }

  auto m = reduce_mean(TensorD::from({2, 2}, {1, 3, 2, 4}), 1);
  CHECK(m.shape() == Shape{2});
  CHECK(m.values()[0] == doctest::Approx(2.0));
  CHECK(m.values()[1] == doctest::Approx(3.0));

  auto x = TensorD::from({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  auto r = reduce_mean(x, 1);
  CHECK(r.shape() == Shape{2, 3});
  for (Index i = 0; i < 6; ++i)
    CHECK(r.values()[i] == doctest::Approx(x.values()[i]));

  CHECK_THROWS_AS(reduce_mean(x, 3), std::invalid_argument);
}

TEST_CASE("concat examples") {
  const Index b = 2, d = 512;
  auto x1 = TensorD::full({b, d}, 1.0);
  auto x2 = TensorD::full({b, d}, 2.0);
  auto x3 = TensorD::full({b, d}, 3.0);
  auto cat = concat_lastdim<double>({x1, x2, x3});
  CHECK(cat.shape() == Shape{b, 3 * d});
  CHECK(cat.values()[0] == 1.0);
  CHECK(cat.values()[d] == 2.0);
  CHECK(cat.values()[2 * d] == 3.0);

  auto single = concat_lastdim<double>({x2});
  CHECK(single.shape() == x2.shape());
  CHECK(single.values() == x2.values());

  auto bad = TensorD::zeros({3, 8});
  CHECK_THROWS_AS(concat_lastdim<double>({TensorD::zeros({2, 8}), bad}),
                  std::invalid_argument);
}

TEST_CASE("cross entropy examples") {
  auto peaked = TensorD::from({1, 3}, {50.0, 0.0, 0.0});
  CHECK(cross_entropy(peaked, {0}).item() == doctest::Approx(0.0).epsilon(1e-9));

  auto uniform = TensorD::zeros({1, 4});
  CHECK(cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0)));

  // Batch of two mixed cases equals the mean of per-sample values.
  auto l0 = TensorD::from({1, 3}, {1.0, -0.5, 0.25});
  auto l1 = TensorD::from({1, 3}, {-2.0, 0.5, 3.0});
  auto both = TensorD::from({2, 3}, {1.0, -0.5, 0.25, -2.0, 0.5, 3.0});
  const double per0 = cross_entropy(l0, {1}).item();
  const double per1 = cross_entropy(l1, {2}).item();
  CHECK(cross_entropy(both, {1, 2}).item() ==
        doctest::Approx(0.5 * (per0 + per1)).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(both, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(both, {-1, 0}), std::invalid_argument);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(77);
  auto x = random_tensor({4, 6}, rng, -2.0, 2.0, false);
  auto w = random_tensor({6, 3}, rng, -1.0, 1.0, false);
  auto run = [&]() {
    return softmax_lastdim(matmul(relu(x), w));
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

// ---------------------------------------------------------------------------
// finite-difference suite: every differentiable op, >= 3 shapes each
// ---------------------------------------------------------------------------

namespace {

/// Reduce an arbitrary tensor to a scalar through a fixed random projection,
/// so FD checks see non-uniform upstream gradients.
TensorD project_to_scalar(const TensorD& x, const TensorD& probe) {
  return reduce_sum_all(mul(x, probe));
}

void check_fd(const cad::testing::GradCheckReport& r, double tol = 1e-4) {
  INFO("max rel err ", r.max_rel_error, " analytic ", r.analytic, " numeric ",
       r.numeric);
  CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("gradients match central finite differences") {
  Rng rng(101);

  SUBCASE("matmul") {
    for (auto shapes : {std::pair<Shape, Shape>{{3, 4}, {4, 2}},
                        {{2, 3, 4}, {4, 5}},
                        {{2, 2, 3}, {2, 3, 2}}}) {
      auto a = random_tensor(shapes.first, rng);
      auto b = random_tensor(shapes.second, rng);
      Shape out_shape;  // probe must match output
      auto probe_src = matmul(a, b);
      auto probe = random_tensor(probe_src.shape(), rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {a, b}, [&]() { return project_to_scalar(matmul(a, b), probe); }));
    }
  }

  SUBCASE("relu away from the kink") {
    for (Shape shape : {Shape{6}, Shape{2, 5}, Shape{2, 2, 3}}) {
      auto x = random_tensor(shape, rng);
      for (auto& v : x.values_mut()) v += (v >= 0 ? 0.05 : -0.05);
      auto probe = random_tensor(shape, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {x}, [&]() { return project_to_scalar(relu(x), probe); }));
    }
  }

  SUBCASE("sigmoid") {
    for (Shape shape : {Shape{5}, Shape{3, 4}, Shape{2, 3, 2}}) {
      auto x = random_tensor(shape, rng, -3.0, 3.0);
      auto probe = random_tensor(shape, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {x}, [&]() { return project_to_scalar(sigmoid(x), probe); }));
    }
  }

  SUBCASE("softmax_lastdim") {
    for (Shape shape : {Shape{6}, Shape{3, 5}, Shape{2, 2, 4}}) {
      auto x = random_tensor(shape, rng, -2.0, 2.0);
      auto probe = random_tensor(shape, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {x}, [&]() { return project_to_scalar(softmax_lastdim(x), probe); }));
    }
  }

  SUBCASE("layer_norm_lastdim") {
    for (Shape shape : {Shape{5}, Shape{3, 6}, Shape{2, 2, 4}}) {
      const Index n = shape.back();
      auto x = random_tensor(shape, rng, -2.0, 2.0);
      auto gamma = random_tensor({n}, rng, 0.5, 1.5);
      auto beta = random_tensor({n}, rng, -0.5, 0.5);
      auto probe = random_tensor(shape, rng, -1, 1, false);
      check_fd(cad::testing::grad_check({x, gamma, beta}, [&]() {
        return project_to_scalar(layer_norm_lastdim(x, gamma, beta), probe);
      }));
    }
  }

  SUBCASE("reduce_mean") {
    for (auto [shape, dim] : {std::pair<Shape, Index>{{6}, 0},
                              {{3, 4}, 1},
                              {{2, 3, 4}, 1}}) {
      auto x = random_tensor(shape, rng);
      auto out_probe_src = reduce_mean(x, dim);
      auto probe = random_tensor(out_probe_src.shape(), rng, -1, 1, false);
      Index d = dim;
      check_fd(cad::testing::grad_check(
          {x}, [&, d]() { return project_to_scalar(reduce_mean(x, d), probe); }));
    }
  }

  SUBCASE("concat_lastdim") {
    for (Shape lead : {Shape{2}, Shape{2, 3}, Shape{1, 2, 2}}) {
      Shape s1 = lead, s2 = lead;
      s1.push_back(3);
      s2.push_back(2);
      auto a = random_tensor(s1, rng);
      auto b = random_tensor(s2, rng);
      Shape so = lead;
      so.push_back(5);
      auto probe = random_tensor(so, rng, -1, 1, false);
      check_fd(cad::testing::grad_check({a, b}, [&]() {
        return project_to_scalar(concat_lastdim<double>({a, b}), probe);
      }));
    }
  }

  SUBCASE("cross_entropy") {
    for (auto [b, k] : {std::pair<Index, Index>{1, 4}, {3, 5}, {4, 2}}) {
      auto logits = random_tensor({b, k}, rng, -2.0, 2.0);
      std::vector<int> labels;
      for (Index i = 0; i < b; ++i)
        labels.push_back(static_cast<int>(rng.uniform_index(k)));
      check_fd(cad::testing::grad_check(
          {logits}, [&]() { return cross_entropy(logits, labels); }));
    }
  }

  SUBCASE("add with broadcast") {
    for (auto [sa, sb] : {std::pair<Shape, Shape>{{4}, {4}},
                          {{3, 4}, {4}},
                          {{2, 3, 4}, {3, 4}}}) {
      auto a = random_tensor(sa, rng);
      auto b = random_tensor(sb, rng);
      auto probe = random_tensor(sa, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {a, b}, [&]() { return project_to_scalar(add(a, b), probe); }));
    }
  }

  SUBCASE("mul, mul_scalar, transposes, reshape, scale_positions") {
    for (Shape shape : {Shape{2, 3}, Shape{2, 3, 4}, Shape{2, 2, 3, 2}}) {
      auto a = random_tensor(shape, rng);
      auto b = random_tensor(shape, rng);
      auto probe = random_tensor(shape, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {a, b}, [&]() { return project_to_scalar(mul(a, b), probe); }));
      check_fd(cad::testing::grad_check(
          {a}, [&]() { return project_to_scalar(mul_scalar(a, -1.7), probe); }));

      auto tprobe = random_tensor(transpose_last2(a).shape(), rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {a}, [&]() { return project_to_scalar(transpose_last2(a), tprobe); }));

      Shape flat{a.size()};
      auto fprobe = random_tensor(flat, rng, -1, 1, false);
      check_fd(cad::testing::grad_check(
          {a}, [&]() { return project_to_scalar(reshape(a, flat), fprobe); }));

      Shape wshape(shape.begin(), shape.end() - 1);
      auto w = random_tensor(wshape, rng);
      check_fd(cad::testing::grad_check(
          {a, w}, [&]() { return project_to_scalar(scale_positions(a, w), probe); }));
    }
    auto x4 = random_tensor({2, 3, 4, 2}, rng);
    auto probe4 = random_tensor({2, 4, 3, 2}, rng, -1, 1, false);
    check_fd(cad::testing::grad_check(
        {x4}, [&]() { return project_to_scalar(transpose_12(x4), probe4); }));
  }
}
