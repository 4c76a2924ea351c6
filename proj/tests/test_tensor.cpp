#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "memamba/rng.hpp"
#include "memamba/tensor.hpp"
#include "test_support.hpp"

using namespace memamba;
using memamba::testing::finite_difference_check;
using memamba::testing::rel_err;

TEST_CASE("matmul identity and zero cases") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(out.at(i) == m.at(i));

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor z = Tensor::zeros({2, 1});
  CHECK(matmul(a, z).at(0) == 0.0);
}

TEST_CASE("matmul shape mismatch is a dimension error") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(101);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  std::vector<Tensor> params{a, b};
  auto loss = [&] { return sum(matmul(a, b)).item(); };
  auto loss_grad = [&] {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = sum(matmul(a, b));
    tape.backward(l);
    return l.item();
  };
  auto res = finite_difference_check(params, loss, loss_grad);
  CHECK(res.checked == 20);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("silu fixed point and softmax symmetry") {
  Tensor x = Tensor::from({3}, {0.0, 1.0, -1.0});
  Tensor y = usilu(x);
  CHECK(y.at(0) == 0.0);

  Tensor s = softmax_lastdim(Tensor::from({3}, {0.0, 0.0, 0.0}));
  for (int i = 0; i < 3; ++i) CHECK(s.at(i) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("tanh gradient at 0.7 vs finite differences") {
  Tensor x = Tensor::from({1}, {0.7}, true);
  std::vector<Tensor> params{x};
  auto loss = [&] { return sum(utanh(x)).item(); };
  auto loss_grad = [&] {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = sum(utanh(x));
    tape.backward(l);
    return l.item();
  };
  auto res = finite_difference_check(params, loss, loss_grad);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::rand_uniform({4, 6}, rng, -8.0, 8.0);
    Tensor y = softmax_lastdim(x);
    for (std::int64_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (std::int64_t j = 0; j < 6; ++j) {
        CHECK(y.at(i, j) >= 0.0);
        row += y.at(i, j);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm constant and standardized rows") {
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor constant = Tensor::from({1, 4}, {5, 5, 5, 5});
  Tensor out = layer_norm(constant, gamma, beta);
  for (int j = 0; j < 4; ++j) CHECK(out.at(j) == 0.0);

  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor pm = layer_norm(Tensor::from({1, 2}, {1, -1}), g2, b2);
  CHECK(pm.at(0) == Catch::Approx(1.0).margin(1e-5));
  CHECK(pm.at(1) == Catch::Approx(-1.0).margin(1e-5));
}

TEST_CASE("layer_norm row statistics on random input") {
  Rng rng(55);
  Tensor x = Tensor::randn({4, 8}, rng, 2.0);
  Tensor gamma = Tensor::full({8}, 1.0), beta = Tensor::zeros({8});
  Tensor y = layer_norm(x, gamma, beta);
  for (std::int64_t i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t j = 0; j < 8; ++j) mean += y.at(i, j);
    mean /= 8.0;
    for (std::int64_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 8.0;
    CHECK(std::abs(mean) < 1e-7);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("backward of sum gives all-ones, constant loss gives zeros") {
  Rng rng(3);
  Tensor x = Tensor::randn({3, 2}, rng, 1.0, true);
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = sum(x);
    tape.backward(l);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);
  }
  x.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = sum(mul_scalar(x, 0.0));
    tape.backward(l);
    for (std::int64_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == 0.0);
  }
}

TEST_CASE("backward on a detached tensor is a usage error") {
  Tensor x = Tensor::from({1}, {2.0});
  Tape tape;
  CHECK_THROWS_AS(tape.backward(x), std::logic_error);
}

TEST_CASE("neg_log domain error on non-positive input") {
  CHECK_THROWS_AS(neg_log(Tensor::from({2}, {0.5, 0.0})), std::domain_error);
  CHECK_THROWS_AS(neg_log(Tensor::from({1}, {-1.0})), std::domain_error);
}

TEST_CASE("non-finite results are surfaced, never propagated") {
  Tensor big = Tensor::from({1}, {1000.0});
  CHECK_THROWS_AS(uexp(big), std::domain_error);
}

TEST_CASE("every differentiable op passes finite-difference checks") {
  Rng rng(909);
  auto check_unary = [&](const char* name, auto op, double lo, double hi) {
    Tensor x = Tensor::rand_uniform({3, 4}, rng, lo, hi, true);
    std::vector<Tensor> params{x};
    auto loss = [&] { return sum(op(x)).item(); };
    auto loss_grad = [&] {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor l = sum(op(x));
      tape.backward(l);
      return l.item();
    };
    auto res = finite_difference_check(params, loss, loss_grad);
    INFO(name);
    CHECK(res.max_rel_err < 1e-4);
  };
  check_unary("exp", [](const Tensor& t) { return uexp(t); }, -2.0, 2.0);
  check_unary("tanh", [](const Tensor& t) { return utanh(t); }, -2.0, 2.0);
  check_unary("sigmoid", [](const Tensor& t) { return usigmoid(t); }, -2.0, 2.0);
  check_unary("silu", [](const Tensor& t) { return usilu(t); }, -2.0, 2.0);
  check_unary("softplus", [](const Tensor& t) { return softplus(t); }, -2.0, 2.0);
  check_unary("neg_log", [](const Tensor& t) { return neg_log(t); }, 0.1, 2.0);
  check_unary("softmax", [](const Tensor& t) {
    return mul(softmax_lastdim(t), t);  // softmax alone sums to constant 1
  }, -2.0, 2.0);

  // Binary ops.
  {
    Tensor a = Tensor::rand_uniform({3, 4}, rng, -2.0, 2.0, true);
    Tensor b = Tensor::rand_uniform({3, 4}, rng, -2.0, 2.0, true);
    std::vector<Tensor> params{a, b};
    auto loss = [&] { return sum(mul(add(a, b), sub(a, b))).item(); };
    auto loss_grad = [&] {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor l = sum(mul(add(a, b), sub(a, b)));
      tape.backward(l);
      return l.item();
    };
    auto res = finite_difference_check(params, loss, loss_grad);
    CHECK(res.max_rel_err < 1e-4);
  }
  // layer_norm with affine parameters.
  {
    Tensor x = Tensor::rand_uniform({3, 5}, rng, -2.0, 2.0, true);
    Tensor gamma = Tensor::rand_uniform({5}, rng, 0.5, 1.5, true);
    Tensor beta = Tensor::rand_uniform({5}, rng, -0.5, 0.5, true);
    std::vector<Tensor> params{x, gamma, beta};
    auto make = [&] {
      Tensor h = layer_norm(x, gamma, beta);
      return sum(mul(h, h));
    };
    auto loss = [&] { return make().item(); };
    auto loss_grad = [&] {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor l = make();
      tape.backward(l);
      return l.item();
    };
    auto res = finite_difference_check(params, loss, loss_grad);
    CHECK(res.max_rel_err < 1e-4);
  }
  // conv1d, gather, concat, pairwise, rowvec, transpose in one composite.
  {
    Tensor x = Tensor::rand_uniform({5, 3}, rng, -2.0, 2.0, true);
    Tensor w = Tensor::rand_uniform({4, 3}, rng, -0.8, 0.8, true);
    Tensor b = Tensor::rand_uniform({3}, rng, -0.5, 0.5, true);
    Tensor y = Tensor::rand_uniform({2, 3}, rng, -2.0, 2.0, true);
    std::vector<Tensor> params{x, w, b, y};
    auto make = [&] {
      Tensor c = conv1d_causal(x, w, b);
      Tensor g = gather_rows(c, {4, 2, 0});
      Tensor cat = concat_rows(g, y);
      Tensor d2 = pairwise_sqdist(cat, y);
      Tensor t = transpose(add_rowvec(d2, Tensor::from({2}, {0.1, -0.2})));
      return sum(mul(t, t));
    };
    auto loss = [&] { return make().item(); };
    auto loss_grad = [&] {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor l = make();
      tape.backward(l);
      return l.item();
    };
    auto res = finite_difference_check(params, loss, loss_grad);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("identical seeds give bit-identical parameter trajectories") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn({4, 4}, rng, 0.5, true);
    Tensor x = Tensor::randn({2, 4}, rng, 1.0);
    std::vector<Tensor> params{w};
    for (int step = 0; step < 5; ++step) {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor l = sum(mul(matmul(x, w), matmul(x, w)));
      tape.backward(l);
      sgd_step(params, 1e-2);
      zero_grads(params);
    }
    return std::vector<double>(w.data(), w.data() + w.numel());
  };
  auto a = run(2024), b = run(2024);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("sgd_step applies p -= lr * grad") {
  Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
  p.grad()[0] = 0.5;
  p.grad()[1] = -1.0;
  std::vector<Tensor> params{p};
  sgd_step(params, 0.1);
  CHECK(p.at(0) == Catch::Approx(0.95));
  CHECK(p.at(1) == Catch::Approx(-1.9));
}
