#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capslab/rng.hpp"
#include "capslab/tape.hpp"
#include "capslab/tensor.hpp"

using namespace caps;

namespace {

Tensor random_tensor(shape_t s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  REQUIRE(a.numel() == b.numel());
  double worst = 0;
  for (long i = 0; i < a.numel(); ++i) {
    double scale = std::max(floor, std::max(std::fabs(a[i]), std::fabs(b[i])));
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor shape and data stay consistent") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  t.at(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));
  CHECK_THROWS(Tensor({0, 3}));
}

TEST_CASE("non-finite op outputs are rejected at the op") {
  Tensor bad({2});
  bad[0] = std::nan("");
  CHECK_THROWS_WITH_AS(ensure_finite(bad, "probe"), doctest::Contains("probe"), std::runtime_error);
  Tape tape;
  CHECK_THROWS(tape.leaf(bad));
}

TEST_CASE("matmul identity and selector rows") {
  Tape tape;
  Var I = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var A = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Var C = matmul(I, A);
  CHECK(C.val().data == std::vector<double>{1, 2, 3, 4});

  Var sel = tape.leaf(Tensor({1, 2}, {1, 0}));
  Var col = tape.leaf(Tensor({2, 1}, {7.5, -2.0}));
  CHECK(matmul(sel, col).val()[0] == 7.5);
}

TEST_CASE("matmul gradient of sum-of-entries matches finite differences") {
  Rng rng(42);
  Tensor a0 = random_tensor({3, 4}, rng);
  Tensor b0 = random_tensor({4, 2}, rng);

  Tape tape;
  Var a = tape.input(a0);
  Var b = tape.input(b0);
  tape.backward(sum(matmul(a, b)));
  Tensor ga = *tape.grad(a.id);
  Tensor gb = *tape.grad(b.id);

  auto fa = [&](const Tensor& x) {
    Tape t;
    t.recording = false;
    return matmul(t.leaf(x), t.leaf(b0)).val().sum();
  };
  auto fb = [&](const Tensor& x) {
    Tape t;
    t.recording = false;
    return matmul(t.leaf(a0), t.leaf(x)).val().sum();
  };
  CHECK(max_rel_err(ga, finite_difference_gradient(fa, a0)) < 1e-7);
  CHECK(max_rel_err(gb, finite_difference_gradient(fb, b0)) < 1e-7);
}

TEST_CASE("conv2d scalar kernel doubles the input") {
  Tape tape;
  Rng rng(1);
  Tensor img = random_tensor({1, 3, 3}, rng);
  Var out = conv2d(tape.leaf(img), tape.leaf(Tensor({1, 1, 1, 1}, {2.0})),
                   tape.leaf(Tensor({1})), 1, 1);
  CHECK(out.val().shape == shape_t{1, 3, 3});
  for (long i = 0; i < 9; ++i) CHECK(out.val()[i] == doctest::Approx(2.0 * img[i]));
}

TEST_CASE("conv2d box kernel with stride 2 sums 2x2 windows") {
  Tape tape;
  Var out = conv2d(tape.leaf(Tensor::full({1, 4, 4}, 1.0)),
                   tape.leaf(Tensor::full({1, 1, 2, 2}, 1.0)), tape.leaf(Tensor({1})), 2, 1);
  CHECK(out.val().shape == shape_t{1, 2, 2});
  for (long i = 0; i < 4; ++i) CHECK(out.val()[i] == doctest::Approx(4.0));
}

TEST_CASE("conv2d rejects oversized kernels and bad groups") {
  Tape tape;
  Var x = tape.leaf(Tensor::full({1, 3, 3}, 1.0));
  CHECK_THROWS(conv2d(x, tape.leaf(Tensor::full({1, 1, 5, 5}, 1.0)), tape.leaf(Tensor({1})), 1, 1));
  Var x2 = tape.leaf(Tensor::full({4, 5, 5}, 1.0));
  CHECK_THROWS(conv2d(x2, tape.leaf(Tensor::full({4, 4, 3, 3}, 1.0)), tape.leaf(Tensor({4})), 1, 3));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(7);
  Tensor x0 = random_tensor({2, 6, 6}, rng);
  Tensor k0 = random_tensor({3, 2, 3, 3}, rng);
  Tensor b0 = random_tensor({3}, rng);

  for (int stride : {1, 2}) {
    Tape tape;
    Var x = tape.input(x0);
    Var k = tape.input(k0);
    Var b = tape.input(b0);
    tape.backward(sum(conv2d(x, k, b, stride, 1)));

    auto f = [&](const Tensor* xs, const Tensor* ks, const Tensor* bs) {
      return [=](const Tensor& probe) {
        Tape t;
        t.recording = false;
        const Tensor& xx = xs ? probe : x0;
        const Tensor& kk = ks ? probe : k0;
        const Tensor& bb = bs ? probe : b0;
        return conv2d(t.leaf(xx), t.leaf(kk), t.leaf(bb), stride, 1).val().sum();
      };
    };
    CHECK(max_rel_err(*tape.grad(k.id), finite_difference_gradient(f(nullptr, &k0, nullptr), k0)) < 1e-6);
    CHECK(max_rel_err(*tape.grad(x.id), finite_difference_gradient(f(&x0, nullptr, nullptr), x0)) < 1e-6);
    CHECK(max_rel_err(*tape.grad(b.id), finite_difference_gradient(f(nullptr, nullptr, &b0), b0)) < 1e-6);
  }
}

TEST_CASE("depthwise conv2d with 1x1 kernels is per-channel scaling") {
  Rng rng(3);
  Tensor x0 = random_tensor({3, 4, 4}, rng);
  Tensor k0({3, 1, 1, 1}, {2.0, -1.5, 0.25});
  Tape tape;
  tape.recording = false;
  Var out = conv2d(tape.leaf(x0), tape.leaf(k0), tape.leaf(Tensor({3})), 1, 3);
  for (long c = 0; c < 3; ++c) {
    for (long i = 0; i < 16; ++i) {
      CHECK(out.val()[c * 16 + i] == doctest::Approx(k0[c] * x0[c * 16 + i]));
    }
  }
}

TEST_CASE("grouped conv2d gradients match finite differences") {
  Rng rng(11);
  Tensor x0 = random_tensor({4, 5, 5}, rng);
  Tensor k0 = random_tensor({4, 2, 2, 2}, rng);  // groups=2: each group maps 2 -> 2 channels
  Tensor b0 = random_tensor({4}, rng);
  Tape tape;
  Var x = tape.input(x0);
  Var k = tape.input(k0);
  Var b = tape.input(b0);
  tape.backward(sum(conv2d(x, k, b, 1, 2)));
  auto fk = [&](const Tensor& probe) {
    Tape t;
    t.recording = false;
    return conv2d(t.leaf(x0), t.leaf(probe), t.leaf(b0), 1, 2).val().sum();
  };
  auto fx = [&](const Tensor& probe) {
    Tape t;
    t.recording = false;
    return conv2d(t.leaf(probe), t.leaf(k0), t.leaf(b0), 1, 2).val().sum();
  };
  CHECK(max_rel_err(*tape.grad(k.id), finite_difference_gradient(fk, k0)) < 1e-6);
  CHECK(max_rel_err(*tape.grad(x.id), finite_difference_gradient(fx, x0)) < 1e-6);
}

TEST_CASE("softmax_rows basics") {
  Tape tape;
  tape.recording = false;
  Var z = softmax_rows(tape.leaf(Tensor({1, 4})));
  for (long i = 0; i < 4; ++i) CHECK(z.val()[i] == doctest::Approx(0.25));

  Var big = softmax_rows(tape.leaf(Tensor({1, 2}, {1000.0, 0.0})));
  CHECK(big.val()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(big.val()[1] == doctest::Approx(0.0).epsilon(1e-12));

  Var ln = softmax_rows(tape.leaf(Tensor({1, 2}, {std::log(1.0), std::log(3.0)})));
  CHECK(ln.val()[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(ln.val()[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax_rows rows sum to 1 within 1e-12 on random input") {
  Rng rng(5);
  Tensor x0 = random_tensor({6, 9}, rng, -30.0, 30.0);
  Tape tape;
  tape.recording = false;
  const Tensor& y = softmax_rows(tape.leaf(x0)).val();
  for (long r = 0; r < 6; ++r) {
    double s = 0;
    for (long j = 0; j < 9; ++j) {
      double v = y.at(r, j);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax_rows gradient matches finite differences") {
  Rng rng(19);
  Tensor x0 = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({3, 5}, rng);
  Tape tape;
  Var x = tape.input(x0);
  tape.backward(weighted_sum(softmax_rows(x), w));
  auto f = [&](const Tensor& probe) {
    Tape t;
    t.recording = false;
    const Tensor& y = softmax_rows(t.leaf(probe)).val();
    double s = 0;
    for (long i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
  };
  CHECK(max_rel_err(*tape.grad(x.id), finite_difference_gradient(f, x0)) < 1e-6);
}

TEST_CASE("backward on identity and L2 norm") {
  {
    Tape tape;
    Var x = tape.input(Tensor({1}, {5.0}));
    tape.backward(sum(x));
    CHECK((*tape.grad(x.id))[0] == 1.0);
  }
  {
    Tape tape;
    Var x = tape.input(Tensor({1, 2}, {3.0, 4.0}));
    tape.backward(sum(row_norms(x)));
    CHECK((*tape.grad(x.id))[0] == doctest::Approx(0.6));
    CHECK((*tape.grad(x.id))[1] == doctest::Approx(0.8));
  }
}

TEST_CASE("backward accumulates at fan-out (y = x + x)") {
  Tape tape;
  Var x = tape.input(Tensor({1}, {2.5}));
  tape.backward(sum(add(x, x)));
  CHECK((*tape.grad(x.id))[0] == 2.0);
}

TEST_CASE("backward rejects non-scalar roots and double runs") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS(tape.backward(x));
  Var s = sum(x);
  tape.backward(s);
  CHECK_THROWS(tape.backward(s));
}

TEST_CASE("finite_difference_gradient on linear and quadratic functions") {
  Tensor x0({3}, {0.3, -1.2, 2.0});
  auto fsum = [](const Tensor& x) { return x.sum(); };
  Tensor g = finite_difference_gradient(fsum, x0);
  for (long i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(1.0).epsilon(1e-9));

  Tensor x1({1}, {3.0});
  auto fsq = [](const Tensor& x) { return x[0] * x[0]; };
  CHECK(finite_difference_gradient(fsq, x1)[0] == doctest::Approx(6.0).epsilon(1e-8));
}

TEST_CASE("elementwise and structural ops differentiate correctly") {
  Rng rng(23);
  Tensor x0 = random_tensor({4, 3}, rng);
  Tensor y0 = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor c = random_tensor({4, 3}, rng);

  // z = w . relu(x (.) y + (-0.7)x + c) exercises mul/relu/affine_const in one graph
  auto build = [&](Tape& t, Var x, Var y) {
    return weighted_sum(relu(add(mul(x, y), affine_const(x, -0.7, c))), w);
  };
  Tape tape;
  Var x = tape.input(x0);
  Var y = tape.input(y0);
  tape.backward(build(tape, x, y));
  auto fx = [&](const Tensor& probe) {
    Tape t;
    t.recording = false;
    return build(t, t.leaf(probe), t.leaf(y0)).val()[0];
  };
  auto fy = [&](const Tensor& probe) {
    Tape t;
    t.recording = false;
    return build(t, t.leaf(x0), t.leaf(probe)).val()[0];
  };
  CHECK(max_rel_err(*tape.grad(x.id), finite_difference_gradient(fx, x0)) < 1e-6);
  CHECK(max_rel_err(*tape.grad(y.id), finite_difference_gradient(fy, y0)) < 1e-6);
}

TEST_CASE("linear layer gradients match finite differences") {
  Rng rng(31);
  Tensor x0 = random_tensor({5}, rng);
  Tensor w0 = random_tensor({5, 4}, rng);
  Tensor b0 = random_tensor({4}, rng);
  Tensor mix = random_tensor({4}, rng);
  Tape tape;
  Var x = tape.input(x0);
  Var w = tape.input(w0);
  Var b = tape.input(b0);
  tape.backward(weighted_sum(linear(x, w, b), mix));
  auto eval = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    Tape t;
    t.recording = false;
    const Tensor& y = linear(t.leaf(xx), t.leaf(ww), t.leaf(bb)).val();
    double s = 0;
    for (long i = 0; i < 4; ++i) s += y[i] * mix[i];
    return s;
  };
  auto fx = [&](const Tensor& p) { return eval(p, w0, b0); };
  auto fw = [&](const Tensor& p) { return eval(x0, p, b0); };
  auto fb = [&](const Tensor& p) { return eval(x0, w0, p); };
  CHECK(max_rel_err(*tape.grad(x.id), finite_difference_gradient(fx, x0)) < 1e-6);
  CHECK(max_rel_err(*tape.grad(w.id), finite_difference_gradient(fw, w0)) < 1e-6);
  CHECK(max_rel_err(*tape.grad(b.id), finite_difference_gradient(fb, b0)) < 1e-6);
}

TEST_CASE("reshape and mask_rows route gradients through unchanged") {
  Rng rng(37);
  Tensor x0 = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4}, rng);
  Tape tape;
  Var x = tape.input(x0);
  Var masked = mask_rows(x, 1);
  for (long j = 0; j < 4; ++j) {
    CHECK(masked.val().at(0, j) == 0.0);
    CHECK(masked.val().at(1, j) == x0.at(1, j));
    CHECK(masked.val().at(2, j) == 0.0);
  }
  Var flat = reshape(masked, {12});
  Tensor w12({12});
  for (long j = 0; j < 4; ++j) w12[4 + j] = w[j];
  tape.backward(weighted_sum(flat, w12));
  const Tensor& g = *tape.grad(x.id);
  for (long j = 0; j < 4; ++j) {
    CHECK(g.at(0, j) == 0.0);
    CHECK(g.at(1, j) == w[j]);
    CHECK(g.at(2, j) == 0.0);
  }
  CHECK_THROWS(mask_rows(x, 3));
}

TEST_CASE("row_norms leaves zero rows with zero gradient") {
  Tape tape;
  Tensor x0({2, 3});
  x0.at(1, 0) = 3.0;
  x0.at(1, 1) = 4.0;
  Var x = tape.input(x0);
  tape.backward(sum(row_norms(x)));
  const Tensor& g = *tape.grad(x.id);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 1) == 0.0);
  CHECK(g.at(1, 0) == doctest::Approx(0.6));
}

TEST_CASE("softmax_cols_plain normalizes columns") {
  Tensor x({2, 2}, {0.0, 1000.0, 0.0, 0.0});
  Tensor y = softmax_cols_plain(x);
  CHECK(y.at(0, 0) == doctest::Approx(0.5));
  CHECK(y.at(1, 0) == doctest::Approx(0.5));
  CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(1, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradient sinks accumulate across tapes for batch reduction") {
  Tensor w0({2}, {1.0, 2.0});
  Tensor sink({2});
  for (int s = 0; s < 3; ++s) {
    Tape tape;
    Var w = tape.param(&w0, &sink);
    tape.backward(sum(scale(w, (double)(s + 1))));
  }
  CHECK(sink[0] == 6.0);  // 1 + 2 + 3
  CHECK(sink[1] == 6.0);
}
