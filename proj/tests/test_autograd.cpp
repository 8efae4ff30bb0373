#include <catch2/catch_amalgamated.hpp>

#include "emogest/autograd.hpp"
#include "emogest/nn.hpp"
#include "emogest/rng.hpp"
#include "oracles.hpp"

using namespace emogest;
using ag::Var;
using Catch::Approx;

namespace {

// Sum of a cheap nonlinear readout, so gradients are non-trivial everywhere.
ag::Var readout(const ag::Var& x) { return ag::sum_all(ag::tanh_(x)); }

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  REQUIRE(t.size() == 6);
  t(1, 2) = 5.0;
  REQUIRE(t[5] == 5.0);
  REQUIRE(t.reshaped({3, 2}).rows() == 3);
  REQUIRE_THROWS(t.reshaped({4, 2}));
  REQUIRE(Tensor::scalar(2.5)[0] == 2.5);
  Tensor nf = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  REQUIRE_FALSE(nf.all_finite());
}

TEST_CASE("elementwise and matmul gradients match finite differences") {
  Rng rng(7);
  Var a = ag::leaf(rng.normal_tensor({3, 4}));
  Var b = ag::leaf(rng.normal_tensor({3, 4}));
  Var w = ag::leaf(rng.normal_tensor({4, 5}));

  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        Var h = mul(add(a, b), sub(a, mul_scalar(b, 0.5)));
        Var m = matmul(h, w);
        return readout(row_softmax(m));
      },
      {a, b, w}, 6, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("unary op gradients") {
  Rng rng(11);
  Var x = ag::leaf(rng.uniform_tensor({4, 4}, -2.0, 2.0));
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        Var h = add(sigmoid(x), softplus(x));
        h = add(h, exp_(mul_scalar(x, 0.3)));
        h = add(h, sqrt_(add_scalar(mul(x, x), 1.0)));
        h = add(h, leaky_relu(x, 0.1));
        return readout(h);
      },
      {x}, 10, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("softmax rows sum to one and log-softmax is consistent") {
  Rng rng(3);
  Tensor t = rng.normal_tensor({5, 7});
  Var sm = ag::row_softmax(ag::constant(t));
  Var lsm = ag::log_row_softmax(ag::constant(t));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += sm->value(r, c);
      REQUIRE(std::exp(lsm->value(r, c)) == Approx(sm->value(r, c)).margin(1e-12));
    }
    REQUIRE(s == Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("log softmax gradient") {
  Rng rng(13);
  Var x = ag::leaf(rng.normal_tensor({3, 5}));
  Tensor pick = rng.uniform_tensor({3, 5}, 0.0, 1.0);
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        return sum_all(mul(log_row_softmax(x), constant(pick)));
      },
      {x}, 8, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("broadcast and reduction gradients") {
  Rng rng(17);
  Var x = ag::leaf(rng.normal_tensor({4, 3}));
  Var rv = ag::leaf(rng.uniform_tensor({1, 3}, 0.5, 2.0));
  Var cv = ag::leaf(rng.uniform_tensor({4, 1}, 0.5, 2.0));
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        Var h = div_rv(add_rv(x, rv), rv);
        h = mul_cv(sub_cv(h, cv), cv);
        Var m0 = mean_axis0(h);
        Var m1 = mean_axis1(h);
        return add(add(sum_all(m0), sum_all(m1)), mean_all(mul_rv(h, rv)));
      },
      {x, rv, cv}, 6, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("slicing, concatenation, gather, resample gradients") {
  Rng rng(19);
  Var x = ag::leaf(rng.normal_tensor({6, 4}));
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        Var top = slice_rows(x, 0, 3);
        Var bottom = slice_rows(x, 3, 6);
        Var joined = concat_rows({bottom, top});
        Var left = slice_cols(joined, 0, 2);
        Var right = slice_cols(joined, 2, 4);
        Var swapped = concat_cols({right, left});
        Var picked = gather_rows(swapped, {0, 0, 5, 2});
        return readout(time_resample(picked, 9));
      },
      {x}, 10, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("max_all and scale_by gradients") {
  Rng rng(23);
  Var x = ag::leaf(rng.normal_tensor({3, 3}));
  Var s = ag::leaf(Tensor::scalar(0.7));
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        return add(max_all(x), sum_all(scale_by(mul(x, x), s)));
      },
      {x, s}, 5, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(29);
  Var x = ag::leaf(rng.normal_tensor({2, 6, 5}));
  Var w = ag::leaf(rng.normal_tensor({3, 2 * 3 * 3}, 0.0, 0.4));
  Var b = ag::leaf(rng.normal_tensor({1, 3}, 0.0, 0.2));
  auto fd = oracle::finite_difference_check(
      [&] { return readout(ag::conv2d(x, w, b, 3, 3, 2, 2, 1, 1)); }, {x, w, b}, 8, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("conv1d matches finite differences") {
  Rng rng(31);
  Var x = ag::leaf(rng.normal_tensor({9, 3}));
  Var w = ag::leaf(rng.normal_tensor({4, 3 * 5}, 0.0, 0.4));
  Var b = ag::leaf(rng.normal_tensor({1, 4}, 0.0, 0.2));
  auto fd = oracle::finite_difference_check(
      [&] { return readout(ag::conv1d(x, w, b, 5, 2, 2)); }, {x, w, b}, 8, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("channel ops gradients") {
  Rng rng(37);
  Var x = ag::leaf(rng.normal_tensor({3, 4, 2}));
  Var s = ag::leaf(rng.uniform_tensor({1, 3}, 0.2, 1.5));
  auto fd = oracle::finite_difference_check(
      [&] {
        using namespace ag;
        Var scaled = scale_channels(x, s);
        return add(sum_all(channel_mean(scaled)), readout(reshape(scaled, {3, 8})));
      },
      {x, s}, 6, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("conv2d agrees with a direct nested-loop computation") {
  Rng rng(41);
  const std::size_t Ci = 2, H = 5, W = 4, Co = 3, kh = 3, kw = 3, sh = 1, sw = 1, ph = 1, pw = 1;
  Tensor x = rng.normal_tensor({Ci, H, W});
  Tensor w = rng.normal_tensor({Co, Ci * kh * kw});
  Tensor b = rng.normal_tensor({1, Co});
  Var out = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), kh, kw, sh, sw, ph, pw);
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t oy = 0; oy < H; ++oy)
      for (std::size_t ox = 0; ox < W; ++ox) {
        double acc = b(0, co);
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long iy = static_cast<long>(oy + dy) - static_cast<long>(ph);
              const long ix = static_cast<long>(ox + dx) - static_cast<long>(pw);
              if (iy < 0 || iy >= static_cast<long>(H) || ix < 0 || ix >= static_cast<long>(W))
                continue;
              acc += x(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                     w(co, (ci * kh + dy) * kw + dx);
            }
        REQUIRE(out->value(co, oy, ox) == Approx(acc).margin(1e-10));
      }
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Var x = ag::leaf(Tensor::scalar(3.0));
  Var y = ag::mul(x, x);           // x^2
  Var z = ag::add(y, ag::mul_scalar(x, 4.0));  // x^2 + 4x
  ag::backward(z);
  REQUIRE(x->grad[0] == Approx(2.0 * 3.0 + 4.0));
}

TEST_CASE("detach blocks gradient flow") {
  Var x = ag::leaf(Tensor::scalar(2.0));
  Var z = ag::mul(ag::detach(x), x);
  ag::backward(z);
  REQUIRE(x->grad[0] == Approx(2.0));  // only the attached factor
}

TEST_CASE("layer norm and adain gradients") {
  Rng rng(43);
  nn::ParamStore ps;
  nn::LayerNorm ln(ps, "ln", 5);
  Var x = ag::leaf(rng.normal_tensor({4, 5}));
  Var gamma = ag::leaf(rng.uniform_tensor({1, 5}, 0.5, 1.5));
  Var beta = ag::leaf(rng.normal_tensor({1, 5}));
  std::vector<Var> params = {x, gamma, beta, ln.gain, ln.bias};
  auto fd = oracle::finite_difference_check(
      [&] { return readout(ag::add(ln(x), nn::adain(x, gamma, beta))); }, params, 5, rng);
  REQUIRE(fd.max_rel_error < 1e-4);
}

TEST_CASE("rng determinism and permutation validity") {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) REQUIRE(a.normal() == b.normal());
  auto p = a.permutation(20);
  std::vector<bool> seen(20, false);
  for (auto v : p) {
    REQUIRE(v < 20);
    REQUIRE_FALSE(seen[v]);
    seen[v] = true;
  }
}

TEST_CASE("reparameterized sampling mean concentrates around mu") {
  Rng rng(5);
  const double mu = 0.7, log_var = std::log(0.25);  // sigma = 0.5
  double acc = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) acc += mu + std::exp(0.5 * log_var) * rng.normal();
  const double mean = acc / n;
  REQUIRE(std::fabs(mean - mu) < 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}
