#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "memamba/rng.hpp"
#include "memamba/ssm.hpp"
#include "memamba/tensor.hpp"
#include "test_support.hpp"

using namespace memamba;
using memamba::testing::finite_difference_check;

namespace {

SSMParams random_lti(Rng& rng, std::int64_t d, std::int64_t n) {
  SSMParams p;
  p.d_model = d;
  p.d_state = n;
  p.delta.resize(static_cast<std::size_t>(d));
  p.A.resize(static_cast<std::size_t>(d * n));
  p.B.resize(static_cast<std::size_t>(d * n));
  p.C.resize(static_cast<std::size_t>(d * n));
  for (auto& v : p.delta) v = rng.uniform(0.01, 1.0);
  for (auto& v : p.A) v = rng.uniform(-3.0, -0.05);
  for (auto& v : p.B) v = rng.uniform(-1.0, 1.0);
  for (auto& v : p.C) v = rng.uniform(-1.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("discretize closed-form examples") {
  SSMParams p;
  p.d_model = 1;
  p.d_state = 1;
  p.delta = {1.0};
  p.A = {0.0};
  p.B = {1.0};
  p.C = {1.0};
  DiscretizedParams d = discretize(p);
  CHECK(d.abar[0] == Catch::Approx(1.0).margin(1e-15));
  CHECK(d.bbar[0] == Catch::Approx(1.0).margin(1e-12));

  p.delta = {0.5};
  p.A = {-2.0};
  d = discretize(p);
  CHECK(d.abar[0] == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(d.bbar[0] == Catch::Approx((std::exp(-1.0) - 1.0) / -1.0 * 0.5).epsilon(1e-12));
  CHECK(d.bbar[0] == Catch::Approx(0.31606).margin(1e-5));

  p.delta = {0.1};
  p.A = {-1.0};
  d = discretize(p);
  CHECK(d.abar[0] < 1.0);
  CHECK(d.abar[0] > 0.0);
}

TEST_CASE("discretize rejects non-positive delta") {
  SSMParams p;
  p.d_model = 1;
  p.d_state = 1;
  p.delta = {0.0};
  p.A = {-1.0};
  p.B = {1.0};
  p.C = {1.0};
  CHECK_THROWS_AS(discretize(p), std::domain_error);
}

TEST_CASE("recurrent scan zero input and memoryless case") {
  Rng rng(11);
  SSMParams p = random_lti(rng, 2, 3);
  DiscretizedParams d = discretize(p);
  std::vector<double> zeros(8 * 2, 0.0);
  auto y = scan_recurrent(zeros, 8, d);
  for (double v : y) CHECK(v == 0.0);

  // abar = 0 removes all memory: y_t = (sum_n C bbar) x_t exactly.
  DiscretizedParams nomem = d;
  std::fill(nomem.abar.begin(), nomem.abar.end(), 0.0);
  std::vector<double> x(6 * 2);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  auto ym = scan_recurrent(x, 6, nomem);
  for (std::int64_t t = 0; t < 6; ++t) {
    for (std::int64_t c = 0; c < 2; ++c) {
      double gain = 0.0;
      for (std::int64_t n = 0; n < 3; ++n)
        gain += nomem.C[static_cast<std::size_t>(c * 3 + n)] *
                nomem.bbar[static_cast<std::size_t>(c * 3 + n)];
      CHECK(ym[static_cast<std::size_t>(t * 2 + c)] ==
            Catch::Approx(gain * x[static_cast<std::size_t>(t * 2 + c)]).margin(1e-15));
    }
  }
}

TEST_CASE("recurrent scan matches a hand-unrolled scalar recurrence") {
  Rng rng(17);
  SSMParams p = random_lti(rng, 1, 1);
  DiscretizedParams d = discretize(p);
  std::vector<double> x{0.3, -1.2, 0.7, 2.1};
  auto y = scan_recurrent(x, 4, d);
  double a = d.abar[0], b = d.bbar[0], c = d.C[0];
  double h = 0.0;
  for (int t = 0; t < 4; ++t) {
    h = a * h + b * x[static_cast<std::size_t>(t)];
    CHECK(std::abs(y[static_cast<std::size_t>(t)] - c * h) < 1e-12);
  }
}

TEST_CASE("convolutional scan: impulse response equals the kernel") {
  Rng rng(23);
  SSMParams p = random_lti(rng, 1, 4);
  DiscretizedParams d = discretize(p);
  std::int64_t L = 12;
  std::vector<double> impulse(static_cast<std::size_t>(L), 0.0);
  impulse[0] = 1.0;
  auto y = scan_convolutional(impulse, L, d);
  auto K = ssm_kernel(d, L);
  for (std::int64_t j = 0; j < L; ++j)
    CHECK(y[static_cast<std::size_t>(j)] ==
          Catch::Approx(K[static_cast<std::size_t>(j)]).margin(1e-14));

  std::vector<double> zero(static_cast<std::size_t>(L), 0.0);
  for (double v : scan_convolutional(zero, L, d)) CHECK(v == 0.0);
}

TEST_CASE("LTI equivalence: convolutional vs recurrent within 1e-10") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    std::int64_t d_model = 1 + static_cast<std::int64_t>(rng.below(3));
    std::int64_t n_state = 1 + static_cast<std::int64_t>(rng.below(6));
    std::int64_t L = 2 + static_cast<std::int64_t>(rng.below(63));
    SSMParams p = random_lti(rng, d_model, n_state);
    DiscretizedParams disc = discretize(p);
    std::vector<double> x(static_cast<std::size_t>(L * d_model));
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    auto yr = scan_recurrent(x, L, disc);
    auto yc = scan_convolutional(x, L, disc);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < yr.size(); ++i)
      max_diff = std::max(max_diff, std::abs(yr[i] - yc[i]));
    CHECK(max_diff < 1e-10);
  }
}

TEST_CASE("convolutional scan refuses input-dependent parameters") {
  DiscretizedParams tv;
  tv.d_model = 1;
  tv.d_state = 1;
  tv.time_varying = true;
  std::int64_t L = 4;
  tv.abar.assign(static_cast<std::size_t>(L), 0.5);
  tv.bbar.assign(static_cast<std::size_t>(L), 1.0);
  tv.C.assign(static_cast<std::size_t>(L), 1.0);
  std::vector<double> x(static_cast<std::size_t>(L), 1.0);
  CHECK_THROWS_AS(scan_convolutional(x, L, tv), std::logic_error);
  CHECK_NOTHROW(scan_recurrent(x, L, tv));
}

TEST_CASE("stability: scalar-state kernels decay monotonically when A < 0") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    SSMParams p = random_lti(rng, 1, 1);
    DiscretizedParams d = discretize(p);
    auto K = ssm_kernel(d, 32);
    for (std::size_t j = 1; j < K.size(); ++j)
      CHECK(std::abs(K[j]) <= std::abs(K[j - 1]) + 1e-15);
  }
}

TEST_CASE("selective scan with frozen projections degenerates to LTI") {
  Rng rng(59);
  std::int64_t d = 3, N = 4, L = 10;
  SelectiveProjections proj = SelectiveProjections::init(d, N, rng);
  std::fill(proj.delta_proj.w.data(), proj.delta_proj.w.data() + proj.delta_proj.w.numel(), 0.0);
  std::fill(proj.b_proj.w.data(), proj.b_proj.w.data() + proj.b_proj.w.numel(), 0.0);
  std::fill(proj.c_proj.w.data(), proj.c_proj.w.data() + proj.c_proj.w.numel(), 0.0);
  for (std::int64_t n = 0; n < N; ++n) {
    proj.b_proj.b.at(n) = rng.uniform(-1.0, 1.0);
    proj.c_proj.b.at(n) = rng.uniform(-1.0, 1.0);
  }
  Tensor x = Tensor::randn({L, d}, rng);
  Tensor y = selective_scan(x, proj);

  SSMParams lti;
  lti.d_model = d;
  lti.d_state = N;
  lti.delta.resize(static_cast<std::size_t>(d));
  lti.A.resize(static_cast<std::size_t>(d * N));
  lti.B.resize(static_cast<std::size_t>(d * N));
  lti.C.resize(static_cast<std::size_t>(d * N));
  for (std::int64_t c = 0; c < d; ++c) {
    double bias = proj.delta_proj.b.at(c);
    lti.delta[static_cast<std::size_t>(c)] = std::log1p(std::exp(bias));
    for (std::int64_t n = 0; n < N; ++n) {
      lti.A[static_cast<std::size_t>(c * N + n)] = proj.A.at(c, n);
      lti.B[static_cast<std::size_t>(c * N + n)] = proj.b_proj.b.at(n);
      lti.C[static_cast<std::size_t>(c * N + n)] = proj.c_proj.b.at(n);
    }
  }
  std::vector<double> xin(x.data(), x.data() + x.numel());
  auto y_lti = scan_recurrent(xin, L, discretize(lti));
  for (std::int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == Catch::Approx(y_lti[static_cast<std::size_t>(i)]).margin(1e-12));
}

TEST_CASE("selective scan: zero input with zero-bias projections gives zero") {
  Rng rng(61);
  SelectiveProjections proj = SelectiveProjections::init(4, 3, rng);
  Tensor x = Tensor::zeros({6, 4});
  Tensor y = selective_scan(x, proj);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("selective scan gradient check over all projection weights") {
  Rng rng(67);
  std::int64_t d = 4, N = 3, L = 8;
  SelectiveProjections proj = SelectiveProjections::init(d, N, rng);
  Tensor x = Tensor::randn({L, d}, rng, 1.0, true);
  std::vector<Tensor> params;
  proj.collect(params);
  params.push_back(x);
  auto make = [&] { return sum(selective_scan(x, proj)); };
  auto loss = [&] { return make().item(); };
  auto loss_grad = [&] {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = make();
    tape.backward(l);
    return l.item();
  };
  auto res = finite_difference_check(params, loss, loss_grad);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("causality: perturbing x_t leaves y_1..y_{t-1} unchanged") {
  Rng rng(71);
  SelectiveProjections proj = SelectiveProjections::init(3, 4, rng);
  Tensor x = Tensor::randn({9, 3}, rng);
  Tensor y0 = selective_scan(x, proj);
  std::int64_t t0 = 5;
  Tensor x2 = Tensor::from(x.shape(), std::vector<double>(x.data(), x.data() + x.numel()));
  x2.at(t0, 1) += 0.37;
  Tensor y1 = selective_scan(x2, proj);
  for (std::int64_t t = 0; t < t0; ++t)
    for (std::int64_t c = 0; c < 3; ++c) CHECK(y0.at(t, c) == y1.at(t, c));
  bool later_changed = false;
  for (std::int64_t t = t0; t < 9; ++t)
    for (std::int64_t c = 0; c < 3; ++c)
      if (y0.at(t, c) != y1.at(t, c)) later_changed = true;
  CHECK(later_changed);
}

TEST_CASE("bimamba: palindromic input with tied parameters stays palindromic") {
  Rng rng(83);
  BiMamba bm = BiMamba::init(3, 2, 4, rng);
  bm.bwd = bm.fwd;  // shared tensors = tied directions
  std::int64_t L = 6, d = 3;
  Tensor x = Tensor::zeros({L, d});
  Rng xr(5);
  for (std::int64_t i = 0; i < L / 2; ++i)
    for (std::int64_t c = 0; c < d; ++c) {
      double v = xr.uniform(-1.0, 1.0);
      x.at(i, c) = v;
      x.at(L - 1 - i, c) = v;
    }
  Tensor y = bm(x);
  for (std::int64_t i = 0; i < L; ++i)
    for (std::int64_t c = 0; c < d; ++c)
      CHECK(y.at(i, c) == Catch::Approx(y.at(L - 1 - i, c)).margin(1e-12));
}

TEST_CASE("bimamba: length one sees the same token in both directions") {
  Rng rng(89);
  BiMamba bm = BiMamba::init(4, 3, 4, rng);
  Tensor x = Tensor::randn({1, 4}, rng);
  Tensor y = bm(x);
  Tensor expect = bm.out_proj(add(bm.fwd(x), bm.bwd(x)));
  for (std::int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == Catch::Approx(expect.at(i)).margin(1e-14));
}

TEST_CASE("bimamba compositional oracle on a random sequence") {
  Rng rng(97);
  BiMamba bm = BiMamba::init(3, 2, 4, rng);
  Tensor x = Tensor::randn({6, 3}, rng);
  Tensor y = bm(x);
  Tensor expect =
      bm.out_proj(add(bm.fwd(x), reverse_rows(bm.bwd(reverse_rows(x)))));
  for (std::int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == Catch::Approx(expect.at(i)).margin(1e-13));
}
