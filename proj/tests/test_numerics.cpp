#include <cmath>
#include <vector>

#include "doctest.h"
#include "mqtts/finite_diff.hpp"
#include "mqtts/ops.hpp"
#include "mqtts/optimizer.hpp"
#include "mqtts/rng.hpp"
#include "mqtts/tensor.hpp"
#include "test_util.hpp"

using namespace mqtts;
using namespace mqtts::testutil;

namespace {

// scalar probe: weighted sum of op output with fixed weights
Tensor weighted_sum(Graph& g, Tensor y, const std::vector<double>& w) {
  Tensor wt = g.leaf(y.shape(), w);
  return sum_all(mul(y, wt));
}

// run finite_diff_check on a unary builder at n random points
void fd_sweep(const char* name, const Shape& shape,
              const std::function<Tensor(Graph&, Tensor)>& build, int n_points,
              std::uint64_t seed, double input_sd = 1.0, double input_shift = 0.0) {
  Rng rng(seed);
  Index sz = shape_size(shape);
  for (int p = 0; p < n_points; ++p) {
    std::vector<double> x(sz);
    for (double& v : x) v = rng.normal(0.0, input_sd) + input_shift;
    double err = finite_diff_check(build, shape, x);
    INFO(name, " point ", p);
    CHECK(err < 1e-4);
  }
}

}  // namespace

TEST_CASE("leaf values round-trip and fills are exact") {
  Graph g;
  Tensor z = g.leaf_fill({3, 4}, 0.0);
  for (double v : z.value()) CHECK(v == 0.0);
  std::vector<double> data{1.5, -2.0, 0.25};
  Tensor t = g.leaf({3}, data);
  CHECK(bitwise_equal(t.value(), data));
  CHECK(t.shape() == Shape{3});
}

TEST_CASE("matmul matches the hand-computed product") {
  Graph g;
  std::vector<double> a{1, 2, 3, 4};
  std::vector<double> b{1, 1};
  Tensor c = matmul(g.leaf({2, 2}, a), g.leaf({2, 1}, b));
  CHECK(c.value()[0] == 3.0);
  CHECK(c.value()[1] == 7.0);
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Graph g;
  Tensor a = g.leaf_fill({3, 2}, 1.0);
  Tensor b = g.leaf_fill({3, 2}, 1.0);
  try {
    matmul(a, b);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
    std::string msg = e.what();
    CHECK(msg.find("(3, 2)") != std::string::npos);
    CHECK(msg.find("times") != std::string::npos);
  }
}

TEST_CASE("softmax of [ln 2, 0] is [2/3, 1/3]") {
  Graph g;
  std::vector<double> x{std::log(2.0), 0.0};
  Tensor y = softmax(g.leaf({2}, x), 0);
  CHECK(std::fabs(y.value()[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::fabs(y.value()[1] - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("softmax rows sum to one within 1e-9") {
  Graph g;
  Rng rng(7);
  auto x = random_vec(rng, 20 * 30, 3.0);
  Tensor y = softmax(g.leaf({20, 30}, x), 1);
  for (Index i = 0; i < 20; ++i) {
    double s = 0.0;
    for (Index j = 0; j < 30; ++j) s += y.value()[i * 30 + j];
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax rejects NaN input") {
  Graph g;
  std::vector<double> x{1.0, std::nan("")};
  auto kind = catch_kind([&] { softmax(g.leaf({2}, x), 0); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::numeric);
}

TEST_CASE("group_norm normalizes [1, -1] to itself as eps vanishes") {
  Graph g;
  std::vector<double> x{1.0, -1.0};
  Tensor y = group_norm(g.leaf({2}, x), 2, 1e-12);
  CHECK(std::fabs(y.value()[0] - 1.0) < 1e-6);
  CHECK(std::fabs(y.value()[1] + 1.0) < 1e-6);
}

TEST_CASE("group_norm output statistics per group") {
  Graph g;
  Rng rng(11);
  Index rows = 8, cols = 32, cpg = 16;
  auto x = random_vec(rng, static_cast<std::size_t>(rows * cols), 2.5);
  Tensor y = group_norm(g.leaf({rows, cols}, x), cpg, 1e-5);
  for (Index gi = 0; gi < cols / cpg; ++gi) {
    double mean = 0.0, var = 0.0;
    for (Index i = 0; i < rows; ++i)
      for (Index j = gi * cpg; j < (gi + 1) * cpg; ++j) mean += y.value()[i * cols + j];
    mean /= static_cast<double>(rows * cpg);
    for (Index i = 0; i < rows; ++i)
      for (Index j = gi * cpg; j < (gi + 1) * cpg; ++j) {
        double d = y.value()[i * cols + j] - mean;
        var += d * d;
      }
    var /= static_cast<double>(rows * cpg);
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("group_norm groups are independent") {
  Rng rng(13);
  Index rows = 4, cols = 32, cpg = 16;
  auto x = random_vec(rng, static_cast<std::size_t>(rows * cols));
  Graph g1;
  Tensor y1 = group_norm(g1.leaf({rows, cols}, x), cpg, 1e-5);
  auto x2 = x;
  for (Index i = 0; i < rows; ++i)
    for (Index j = cpg; j < cols; ++j) x2[i * cols + j] += 3.0;
  Graph g2;
  Tensor y2 = group_norm(g2.leaf({rows, cols}, x2), cpg, 1e-5);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cpg; ++j)
      CHECK(y1.value()[i * cols + j] == y2.value()[i * cols + j]);
}

TEST_CASE("group_norm rejects a non-divisible channel count") {
  Graph g;
  Tensor x = g.leaf_fill({2, 30}, 1.0);
  auto kind = catch_kind([&] { group_norm(x, 16, 1e-5); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::config);
}

TEST_CASE("grad of x squared at 3 is 6") {
  Graph g;
  std::vector<double> xv{3.0};
  Tensor x = g.leaf({1}, xv, true);
  Tensor loss = mul(x, x);
  Tensor leaves[] = {x};
  GradMap gm = g.grad(loss, leaves);
  CHECK(gm.at(x.node())[0] == 6.0);
}

TEST_CASE("grad of sum of softmax is numerically zero") {
  Graph g;
  Rng rng(17);
  auto xv = random_vec(rng, 9, 2.0);
  Tensor x = g.leaf({9}, xv, true);
  Tensor loss = sum_all(softmax(x, 0));
  Tensor leaves[] = {x};
  GradMap gm = g.grad(loss, leaves);
  for (double v : gm.at(x.node())) CHECK(std::fabs(v) < 1e-12);
}

TEST_CASE("two-layer MLP gradient matches finite differences") {
  Rng rng(19);
  auto w1 = random_vec(rng, 3 * 5, 0.7);
  auto b1 = random_vec(rng, 5, 0.3);
  auto w2 = random_vec(rng, 5 * 1, 0.7);
  auto xin = random_vec(rng, 3, 1.0);

  auto build_for_w1 = [&](Graph& g, Tensor w1t) {
    Tensor x = g.leaf({1, 3}, xin);
    Tensor h = relu(add_rowvec(matmul(x, w1t), g.leaf({5}, b1)));
    Tensor y = matmul(h, g.leaf({5, 1}, w2));
    return sum_all(y);
  };
  CHECK(finite_diff_check(build_for_w1, {3, 5}, w1) < 1e-4);

  auto build_for_x = [&](Graph& g, Tensor xt) {
    Tensor h = relu(add_rowvec(matmul(xt, g.leaf({3, 5}, w1)), g.leaf({5}, b1)));
    Tensor y = matmul(h, g.leaf({5, 1}, w2));
    return sum_all(y);
  };
  CHECK(finite_diff_check(build_for_x, {1, 3}, xin) < 1e-4);
}

TEST_CASE("grad rejects a non-scalar loss") {
  Graph g;
  Tensor x = g.leaf_fill({3}, 1.0, true);
  Tensor y = scale(x, 2.0);
  Tensor leaves[] = {x};
  auto kind = catch_kind([&] { g.grad(y, leaves); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::contract);
}

TEST_CASE("finite differences on a quadratic are exact to 1e-7") {
  std::vector<double> x{0.3, -1.2, 2.0, 0.01};
  auto build = [](Graph& g, Tensor t) {
    Tensor c = g.leaf({4}, std::vector<double>{1.0, -0.5, 0.25, 2.0});
    Tensor d = sub(t, c);
    return sum_all(mul(d, d));
  };
  FdOptions opt;
  opt.h = 1e-4;
  CHECK(finite_diff_check(build, {4}, x, opt) < 1e-7);
}

TEST_CASE("backward is deterministic for identical construction") {
  Rng rng(23);
  auto xv = random_vec(rng, 12);
  auto build_grads = [&]() {
    Graph g;
    Tensor x = g.leaf({3, 4}, xv, true);
    Tensor h = tanh_act(matmul(x, transpose(x)));
    Tensor s = softmax(h, 1);
    Tensor loss = mean_all(mul(s, h));
    Tensor leaves[] = {x};
    return g.grad(loss, leaves).at(x.node());
  };
  auto g1 = build_grads();
  auto g2 = build_grads();
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("broadcasting outside row/column vectors is rejected") {
  Graph g;
  Tensor a = g.leaf_fill({2, 3}, 1.0);
  Tensor b = g.leaf_fill({3, 2}, 1.0);
  auto kind = catch_kind([&] { add(a, b); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::dimension);

  Tensor v = g.leaf_fill({4}, 1.0);
  kind = catch_kind([&] { add_rowvec(a, v); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::dimension);
}

TEST_CASE("stop_gradient blocks the gradient path") {
  Graph g;
  std::vector<double> xv{1.0, 2.0, 3.0};
  Tensor x = g.leaf({3}, xv, true);
  Tensor y = add(x, stop_gradient(scale(x, 5.0)));
  Tensor loss = sum_all(y);
  Tensor leaves[] = {x};
  GradMap gm = g.grad(loss, leaves);
  for (double v : gm.at(x.node())) CHECK(v == 1.0);
}

TEST_CASE("mixing graphs raises a contract error") {
  Graph g1, g2;
  Tensor a = g1.leaf_fill({2}, 1.0);
  Tensor b = g2.leaf_fill({2}, 1.0);
  auto kind = catch_kind([&] { add(a, b); });
  REQUIRE(kind.has_value());
  CHECK(*kind == ErrorKind::contract);
}

TEST_CASE("every primitive passes finite-difference checks at random points") {
  const int pts = 100;
  Rng wrng(101);
  auto w6 = random_vec(wrng, 6);
  auto w12 = random_vec(wrng, 12);
  auto w8 = random_vec(wrng, 8);
  auto w4 = random_vec(wrng, 4);
  auto w15 = random_vec(wrng, 15);
  auto w20 = random_vec(wrng, 20);
  auto w24 = random_vec(wrng, 24);
  auto other12 = random_vec(wrng, 12);
  auto other6 = random_vec(wrng, 6);

  fd_sweep("add.a", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, add(t, g.leaf({3, 4}, other12)), w12); },
           pts, 1001);
  fd_sweep("sub.b", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, sub(g.leaf({3, 4}, other12), t), w12); },
           pts, 1002);
  fd_sweep("mul.a", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, mul(t, g.leaf({3, 4}, other12)), w12); },
           pts, 1003);
  fd_sweep("scale", {6}, [&](Graph& g, Tensor t) { return weighted_sum(g, scale(t, -1.7), w6); }, pts,
           1004);
  fd_sweep("add_scalar", {6},
           [&](Graph& g, Tensor t) { return weighted_sum(g, add_scalar(t, 0.6), w6); }, pts, 1005);
  fd_sweep("add_rowvec.x", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, add_rowvec(t, g.leaf({4}, w4)), w12); },
           pts, 1006);
  fd_sweep("add_rowvec.v", {4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, add_rowvec(g.leaf({3, 4}, other12), t), w12);
           },
           pts, 1007);
  fd_sweep("mul_rowvec.x", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, mul_rowvec(t, g.leaf({4}, w4)), w12); },
           pts, 1008);
  fd_sweep("mul_rowvec.v", {4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, mul_rowvec(g.leaf({3, 4}, other12), t), w12);
           },
           pts, 1009);
  fd_sweep("mul_colvec.x", {3, 4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, mul_colvec(t, g.leaf({3}, std::vector<double>{0.5, -1.0, 2.0})), w12);
           },
           pts, 1010);
  fd_sweep("mul_colvec.w", {3},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, mul_colvec(g.leaf({3, 4}, other12), t), w12);
           },
           pts, 1011);
  fd_sweep("rowwise_dot.a", {3, 4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, rowwise_dot(t, g.leaf({3, 4}, other12)),
                                 std::vector<double>{1.0, -2.0, 0.5});
           },
           pts, 1012);
  fd_sweep("matmul.a", {3, 4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, matmul(t, g.leaf({4, 5}, w20)), w15);
           },
           pts, 1013);
  fd_sweep("matmul.b", {4, 5},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, matmul(g.leaf({3, 4}, other12), t), w15);
           },
           pts, 1014);
  fd_sweep("matmul_nt.a", {3, 4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, matmul_nt(t, g.leaf({5, 4}, w20)), w15);
           },
           pts, 1015);
  fd_sweep("matmul_nt.b", {5, 4},
           [&](Graph& g, Tensor t) {
             return weighted_sum(g, matmul_nt(g.leaf({3, 4}, other12), t), w15);
           },
           pts, 1016);
  fd_sweep("transpose", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, transpose(t), w12); }, pts, 1017);
  fd_sweep("relu", {12}, [&](Graph& g, Tensor t) { return weighted_sum(g, relu(t), w12); }, pts, 1018);
  fd_sweep("leaky_relu", {12},
           [&](Graph& g, Tensor t) { return weighted_sum(g, leaky_relu(t, 0.1), w12); }, pts, 1019);
  fd_sweep("tanh", {12}, [&](Graph& g, Tensor t) { return weighted_sum(g, tanh_act(t), w12); }, pts,
           1020);
  fd_sweep("exp", {12}, [&](Graph& g, Tensor t) { return weighted_sum(g, exp_act(t), w12); }, pts,
           1021, 0.5);
  fd_sweep("log", {12}, [&](Graph& g, Tensor t) { return weighted_sum(g, log_act(t), w12); }, pts,
           1022, 0.2, 1.5);
  fd_sweep("abs", {12}, [&](Graph& g, Tensor t) { return weighted_sum(g, abs_act(t), w12); }, pts,
           1023);
  fd_sweep("clamp_min", {12},
           [&](Graph& g, Tensor t) { return weighted_sum(g, clamp_min(t, 0.3), w12); }, pts, 1024);
  fd_sweep("softmax.rows", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, softmax(t, 1), w12); }, pts, 1025, 2.0);
  fd_sweep("softmax.cols", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, softmax(t, 0), w12); }, pts, 1026, 2.0);
  {
    std::vector<std::int32_t> ids{2, 0, 6, 3, 1};
    fd_sweep("cross_entropy", {5, 7},
             [&](Graph& g, Tensor t) {
               (void)g;
               return cross_entropy_sum(t, ids);
             },
             pts, 1027, 1.5);
  }
  fd_sweep("sum_all", {3, 4}, [&](Graph& g, Tensor t) { (void)g; return sum_all(t); }, pts, 1028);
  fd_sweep("mean_all", {3, 4}, [&](Graph& g, Tensor t) { (void)g; return mean_all(t); }, pts, 1029);
  fd_sweep("group_norm", {3, 8},
           [&](Graph& g, Tensor t) { return weighted_sum(g, group_norm(t, 4, 1e-5), w24); }, pts,
           1030);
  fd_sweep("layer_norm", {3, 8},
           [&](Graph& g, Tensor t) { return weighted_sum(g, layer_norm(t, 1e-5), w24); }, pts, 1031);
  {
    std::vector<std::int32_t> ids{0, 2, 5, 2};
    fd_sweep("embedding", {6, 4},
             [&](Graph& g, Tensor t) {
               return weighted_sum(g, embedding_rows(t, ids),
                                   std::vector<double>(w20.begin(), w20.begin() + 16));
             },
             pts, 1032);
  }
  fd_sweep("frame_gather", {10, 2},
           [&](Graph& g, Tensor t) {
             auto w = std::vector<double>(30, 0.0);
             Rng r(5);
             for (double& v : w) v = r.normal();
             return weighted_sum(g, frame_gather_op(t, 3, 2, 1, 5), w);
           },
           pts, 1033);
  fd_sweep("overlap_add", {4, 6},
           [&](Graph& g, Tensor t) {
             auto w = std::vector<double>(16, 0.0);
             Rng r(6);
             for (double& v : w) v = r.normal();
             return weighted_sum(g, overlap_add_op(t, 3, 2, 1, 8), w);
           },
           pts, 1034);
  fd_sweep("concat_cols", {3, 2},
           [&](Graph& g, Tensor t) {
             Tensor other = g.leaf({3, 2}, std::vector<double>(other6));
             Tensor xs[] = {t, other};
             return weighted_sum(g, concat_cols(xs), w12);
           },
           pts, 1035);
  fd_sweep("concat_rows", {2, 3},
           [&](Graph& g, Tensor t) {
             Tensor other = g.leaf({2, 3}, std::vector<double>(other6));
             Tensor xs[] = {t, other};
             return weighted_sum(g, concat_rows(xs), w12);
           },
           pts, 1036);
  fd_sweep("slice_cols", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, slice_cols(t, 1, 3), w6); }, pts, 1037);
  fd_sweep("slice_rows", {4, 3},
           [&](Graph& g, Tensor t) { return weighted_sum(g, slice_rows(t, 1, 3), w6); }, pts, 1038);
  fd_sweep("reshape", {3, 4},
           [&](Graph& g, Tensor t) { return weighted_sum(g, reshape(t, {4, 3}), w12); }, pts, 1039);
}
