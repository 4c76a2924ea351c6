#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "memamba/expert.hpp"
#include "memamba/rng.hpp"
#include "memamba/tensor.hpp"
#include "test_support.hpp"

using namespace memamba;
using memamba::testing::finite_difference_check;

TEST_CASE("transposed scan order for small grids") {
  // n=4: 2x2 grid read column-major.
  ScanPermutation p4 = transpose_scan_order(4);
  CHECK(p4.order == std::vector<std::int64_t>{0, 2, 1, 3});

  ScanPermutation p1 = transpose_scan_order(1);
  CHECK(p1.order == std::vector<std::int64_t>{0});

  // n=7: R=3, C=3, two padded cells skipped.
  ScanPermutation p7 = transpose_scan_order(7);
  CHECK(p7.order == std::vector<std::int64_t>{0, 3, 6, 1, 4, 2, 5});
}

TEST_CASE("transposed scan order matches an independent grid-walk oracle") {
  for (std::int64_t n = 1; n <= 40; ++n) {
    ScanPermutation p = transpose_scan_order(n);
    // Oracle: walk the row-major grid column by column.
    std::int64_t R = 1;
    while (R * R < n) ++R;
    std::int64_t C = (n + R - 1) / R;
    std::vector<std::int64_t> expect;
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t r = 0; r < R; ++r)
        if (r * C + c < n) expect.push_back(r * C + c);
    CHECK(p.order == expect);
    // Inverse really inverts.
    for (std::size_t i = 0; i < p.order.size(); ++i)
      CHECK(p.inverse[static_cast<std::size_t>(p.order[i])] ==
            static_cast<std::int64_t>(i));
  }
}

TEST_CASE("restoration is a bit-exact identity for both reorders") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(24));
    Tensor x = Tensor::randn({n, 5}, rng);
    ScanPermutation sr = transpose_scan_order(n);
    Tensor round = gather_rows(gather_rows(x, sr.order), sr.inverse);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(round.at(i) == x.at(i));

    std::vector<double> scores(static_cast<std::size_t>(n));
    for (auto& s : scores) s = rng.normal();
    ScanPermutation ar = attention_scan_order(scores);
    Tensor round2 = gather_rows(gather_rows(x, ar.order), ar.inverse);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(round2.at(i) == x.at(i));
  }
}

TEST_CASE("attention order: descending sort with stable index tie-break") {
  CHECK(attention_scan_order({0.1, 0.9, 0.5}).order ==
        std::vector<std::int64_t>{1, 2, 0});
  CHECK(attention_scan_order({0.9, 0.5, 0.1}).order ==
        std::vector<std::int64_t>{0, 1, 2});
  CHECK(attention_scan_order({0.4, 0.4, 0.4}).order ==
        std::vector<std::int64_t>{0, 1, 2});
}

TEST_CASE("argsort is invariant under positive scaling of scores") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> scores(8);
    for (auto& s : scores) s = rng.normal();
    std::vector<double> scaled = scores;
    double k = rng.uniform(0.1, 10.0);
    for (auto& s : scaled) s *= k;
    CHECK(attention_scan_order(scores).order == attention_scan_order(scaled).order);
  }
}

TEST_CASE("expert layer with zeroed output projection is the identity") {
  Rng rng(21);
  ExpertLayer layer = ExpertLayer::init(6, 3, 4, 8, rng);
  layer.out_proj.fill_zero();
  Tensor x = Tensor::randn({5, 6}, rng);
  Tensor y = layer(x);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("expert layer handles a single instance") {
  Rng rng(23);
  ExpertLayer layer = ExpertLayer::init(4, 2, 4, 8, rng);
  Tensor x = Tensor::randn({1, 4}, rng);
  Tensor y = layer(x);
  CHECK(y.rows() == 1);
  CHECK(y.cols() == 4);
}

TEST_CASE("expert layer matches composition of the standalone ops") {
  Rng rng(29);
  std::int64_t n = 5, d = 6;
  ExpertLayer layer = ExpertLayer::init(d, 3, 4, 8, rng);
  Tensor x = Tensor::randn({n, d}, rng);
  Tensor fused = layer(x);

  AttentionReorder ar = attention_reorder(x, layer.scorer);
  auto [x_trans, perm_trans] = transpose_reorder(x);
  Tensor y_orig = layer.branch_orig(layer.norm_orig(x));
  Tensor y_trans = layer.branch_trans(layer.norm_trans(x_trans));
  Tensor y_attn = layer.branch_attn(layer.norm_attn(ar.reordered));
  Tensor r_trans = gather_rows(y_trans, perm_trans.inverse);
  Tensor r_attn = gather_rows(y_attn, ar.perm.inverse);
  Tensor w = mul_scalar(softmax_lastdim(reshape(ar.scores, {1, n})),
                        static_cast<double>(n));
  Tensor tiled = matmul(transpose(w), Tensor::full({1, d}, 1.0));
  Tensor expect = add(layer.out_proj(add(add(y_orig, r_trans), mul(r_attn, tiled))), x);

  for (std::int64_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.at(i) == Catch::Approx(expect.at(i)).margin(1e-12));
}

TEST_CASE("ablating the attention branch leaves the two-branch block") {
  Rng rng(31);
  std::int64_t n = 6, d = 4;
  ExpertLayer layer = ExpertLayer::init(d, 2, 4, 8, rng);
  layer.branch_attn.gate_proj.fill_zero();  // Z_a = SiLU(0) = 0 kills the branch
  Tensor x = Tensor::randn({n, d}, rng);
  Tensor y = layer(x);

  auto [x_trans, perm_trans] = transpose_reorder(x);
  Tensor y_orig = layer.branch_orig(layer.norm_orig(x));
  Tensor y_trans = layer.branch_trans(layer.norm_trans(x_trans));
  Tensor two_branch =
      add(layer.out_proj(add(y_orig, gather_rows(y_trans, perm_trans.inverse))), x);
  for (std::int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.at(i) == Catch::Approx(two_branch.at(i)).margin(1e-14));
}

TEST_CASE("stacked expert: depth one equals a single layer") {
  Rng rng(37);
  Expert e = Expert::init(4, 1, 2, 4, 8, rng);
  Tensor x = Tensor::randn({3, 4}, rng);
  Tensor y_stack = e(x);
  Tensor y_layer = e.layers[0](x);
  for (std::int64_t i = 0; i < y_stack.numel(); ++i)
    CHECK(y_stack.at(i) == y_layer.at(i));
}

TEST_CASE("stacked expert with all output projections zeroed is the identity") {
  Rng rng(41);
  Expert e = Expert::init(5, 2, 2, 4, 8, rng);
  for (ExpertLayer& l : e.layers) l.out_proj.fill_zero();
  Tensor x = Tensor::randn({4, 5}, rng);
  Tensor y = e(x);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("shape preservation for any length and depth") {
  Rng rng(43);
  Expert e = Expert::init(4, 2, 2, 4, 8, rng);
  for (std::int64_t n : {1, 2, 3, 7, 12}) {
    Tensor x = Tensor::randn({n, 4}, rng);
    Tensor y = e(x);
    CHECK(y.rows() == n);
    CHECK(y.cols() == 4);
  }
}

TEST_CASE("scorer parameters receive a non-zero gradient that matches FD") {
  Rng rng(47);
  std::int64_t n = 5, d = 4;
  ExpertLayer layer = ExpertLayer::init(d, 2, 4, 6, rng);
  Tensor x = Tensor::randn({n, d}, rng);

  std::vector<Tensor> scorer_params;
  layer.scorer.collect(scorer_params);
  auto make = [&] { return sum(layer(x)); };
  auto loss = [&] { return make().item(); };
  auto loss_grad = [&] {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor l = make();
    tape.backward(l);
    return l.item();
  };
  auto res = finite_difference_check(scorer_params, loss, loss_grad);
  CHECK(res.max_rel_err < 1e-4);

  double grad_norm = 0.0;
  for (Tensor& p : scorer_params)
    if (p.has_grad())
      for (double g : p.grad()) grad_norm += g * g;
  CHECK(grad_norm > 0.0);
}
