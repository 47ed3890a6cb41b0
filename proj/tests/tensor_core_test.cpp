#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "eatkit/gradcheck.hpp"
#include "eatkit/ops.hpp"
#include "test_util.hpp"

namespace eatkit {
namespace {

using testing::random_tensor;

// Projects an op output onto a fixed random direction so every output
// coordinate contributes to the checked scalar.
Var project(Var out, std::uint64_t seed) {
  Tensor dir = random_tensor(out.shape(), seed ^ 0xabcdefULL);
  return ops::sum(ops::mul(out, out.tape().constant(std::move(dir))));
}

constexpr double kElementwiseTol = 1e-5;

void expect_grad_ok(const std::string& label, const std::function<Var(Tape&, Var, std::uint64_t)>& op,
                    const Shape& shape, double lo = -1.0, double hi = 1.0) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor x = random_tensor(shape, seed * 7919, lo, hi);
    const double err = grad_check([&](Tape& t, Var v) { return project(op(t, v, seed), seed); }, x, 1e-5);
    EXPECT_LT(err, kElementwiseTol) << label << " seed " << seed;
  }
}

// --- conv2d ----------------------------------------------------------------

TEST(Conv2d, OnesKernelWithPaddingCountsInBoundsTaps) {
  Tape t;
  Var x = t.constant(Tensor::full({1, 1, 3, 3}, 1.0));
  Var w = t.constant(Tensor::full({1, 1, 3, 3}, 1.0));
  Var y = ops::conv2d(x, w, std::nullopt, {.stride = 1, .padding = 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 1, 1}), 9.0);
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 0, 0}), 4.0);
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 2, 2}), 4.0);
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 0, 1}), 6.0);
}

TEST(Conv2d, IdentityKernelIsIdentity) {
  Tape t;
  Tensor in = random_tensor({2, 1, 5, 4}, 3);
  Var y = ops::conv2d(t.constant(in), t.constant(Tensor::full({1, 1, 1, 1}, 1.0)), std::nullopt, {});
  EXPECT_EQ(y.value(), in);
}

TEST(Conv2d, DilatedKernelCenter) {
  Tape t;
  Var x = t.constant(Tensor::full({1, 1, 5, 5}, 1.0));
  Var w = t.constant(Tensor::full({1, 1, 3, 3}, 1.0));
  Var y = ops::conv2d(x, w, std::nullopt, {.stride = 1, .padding = 2, .dilation = 2});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 2, 2}), 9.0);
  EXPECT_DOUBLE_EQ(y.value().at({0, 0, 0, 0}), 4.0);
}

TEST(Conv2d, DepthwiseIdentityIsExactIdentity) {
  Tape t;
  const std::size_t c = 6;
  Tensor in = random_tensor({2, c, 7, 5}, 11);
  Tensor k({c, 1, 1, 1}, 1.0);
  Var y = ops::conv2d(t.constant(in), t.constant(k), std::nullopt, {.groups = c});
  EXPECT_EQ(y.value(), in);
}

TEST(Conv2d, OutputSizeFormula) {
  for (std::size_t h : {7u, 8u, 16u, 33u})
    for (std::size_t stride : {1u, 2u, 4u})
      for (std::size_t dil : {1u, 2u, 3u}) {
        const ops::Conv2dOptions opt{.stride = stride, .padding = dil, .dilation = dil};
        Tape t;
        Var y = ops::conv2d(t.constant(Tensor({1, 1, h, h}, 1.0)), t.constant(Tensor({1, 1, 3, 3}, 1.0)),
                            std::nullopt, opt);
        const std::size_t expect = (h + 2 * dil - dil * 2 - 1) / stride + 1;
        EXPECT_EQ(y.dim(2), expect);
        EXPECT_EQ(y.dim(3), expect);
      }
}

TEST(Conv2d, StridedMatchesBruteForce) {
  // Independent direct evaluation of the convolution sum with explicit bounds checks.
  const Tensor x = random_tensor({2, 4, 9, 8}, 21);
  const Tensor w = random_tensor({6, 2, 3, 3}, 22);
  const Tensor b = random_tensor({6}, 23);
  const ops::Conv2dOptions opt{.stride = 2, .padding = 2, .dilation = 2, .groups = 2};
  Tape t;
  Var y = ops::conv2d(t.constant(x), t.constant(w), t.constant(b), opt);
  const long oh = static_cast<long>(y.dim(2)), ow = static_cast<long>(y.dim(3));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 6; ++o)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) {
          double acc = b[o];
          const std::size_t grp = o / 3;
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (long ki = 0; ki < 3; ++ki)
              for (long kj = 0; kj < 3; ++kj) {
                const long yy = i * 2 - 2 + ki * 2, xx = j * 2 - 2 + kj * 2;
                if (yy < 0 || yy >= 9 || xx < 0 || xx >= 8) continue;
                acc += w.at({o, ci, static_cast<std::size_t>(ki), static_cast<std::size_t>(kj)}) *
                       x.at({n, grp * 2 + ci, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)});
              }
          EXPECT_NEAR(y.value().at({n, o, static_cast<std::size_t>(i), static_cast<std::size_t>(j)}), acc, 1e-12);
        }
}

TEST(Conv2d, ShapeErrorsNameTheAxis) {
  Tape t;
  Var x = t.constant(Tensor({1, 3, 4, 4}));
  try {
    ops::conv2d(x, t.constant(Tensor({4, 3, 1, 1})), std::nullopt, {.groups = 2});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel axis (1)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ops::conv2d(x, t.constant(Tensor({4, 2, 1, 1})), std::nullopt, {}), ShapeError);
  EXPECT_THROW(ops::conv2d(x, t.constant(Tensor({4, 3, 1, 1})), std::nullopt, {.dilation = 0}),
               std::invalid_argument);
}

TEST(Conv2d, GradientsAllConfigurations) {
  struct Cfg {
    ops::Conv2dOptions opt;
    Shape in, w;
  };
  const Cfg cfgs[] = {
      {{.stride = 1, .padding = 1}, {2, 3, 5, 5}, {4, 3, 3, 3}},
      {{.stride = 2, .padding = 1}, {1, 2, 6, 7}, {3, 2, 3, 3}},
      {{.stride = 1, .padding = 2, .dilation = 2, .groups = 4}, {1, 4, 6, 6}, {4, 1, 3, 3}},
      {{.stride = 4, .padding = 1}, {1, 3, 8, 8}, {3, 3, 3, 3}},
      {{}, {2, 4, 3, 3}, {5, 4, 1, 1}},
  };
  for (const Cfg& c : cfgs) {
    const std::size_t o = c.w[0];
    expect_grad_ok("conv2d/input", [&](Tape& t, Var x, std::uint64_t s) {
      return ops::conv2d(x, t.constant(random_tensor(c.w, s + 100)), t.constant(random_tensor({o}, s + 200)), c.opt);
    }, c.in);
    expect_grad_ok("conv2d/weight", [&](Tape& t, Var w, std::uint64_t s) {
      return ops::conv2d(t.constant(random_tensor(c.in, s + 100)), w, t.constant(random_tensor({o}, s + 200)), c.opt);
    }, c.w);
    expect_grad_ok("conv2d/bias", [&](Tape& t, Var b, std::uint64_t s) {
      return ops::conv2d(t.constant(random_tensor(c.in, s + 100)), t.constant(random_tensor(c.w, s + 200)), b, c.opt);
    }, {o});
  }
}

// --- layer_norm --------------------------------------------------------------

TEST(LayerNorm, ConstantInputNormalizesToZero) {
  Tape t;
  Var y = ops::layer_norm(t.constant(Tensor({2, 3, 2, 2}, 4.5)), 1, t.constant(Tensor({3}, 1.0)),
                          t.constant(Tensor({3}, 0.0)));
  EXPECT_EQ(y.value().max_abs(), 0.0);
}

TEST(LayerNorm, HandComputedStandardization) {
  Tape t;
  Var y = ops::layer_norm(t.constant(Tensor({1, 3}, {1, 2, 3})), -1, t.constant(Tensor({3}, 1.0)),
                          t.constant(Tensor({3}, 0.0)), 1e-12);
  const double s = std::sqrt(1.5);  // 1 / sqrt(2/3)
  EXPECT_NEAR(y.value()[0], -s, 1e-9);
  EXPECT_NEAR(y.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[2], s, 1e-9);
}

TEST(LayerNorm, AffineDominatesWhenGammaZero) {
  Tape t;
  Var y = ops::layer_norm(t.constant(random_tensor({2, 4, 3, 3}, 5)), 1, t.constant(Tensor({4}, 0.0)),
                          t.constant(Tensor({4}, 5.0)));
  for (double v : y.value().data()) EXPECT_EQ(v, 5.0);
}

TEST(LayerNorm, PerPositionMomentsOverChannels) {
  Tape t;
  Var y = ops::layer_norm(t.constant(random_tensor({2, 8, 3, 4}, 6, -3, 5)), 1, t.constant(Tensor({8}, 1.0)),
                          t.constant(Tensor({8}, 0.0)), 1e-12);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 12; ++p) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 8; ++c) m += y.value()[(n * 8 + c) * 12 + p];
      m /= 8;
      for (std::size_t c = 0; c < 8; ++c) v += std::pow(y.value()[(n * 8 + c) * 12 + p] - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 8, 1.0, 1e-9);
    }
}

TEST(LayerNorm, RejectsBadArguments) {
  Tape t;
  Var x = t.constant(Tensor({2, 3}));
  EXPECT_THROW(ops::layer_norm(x, -1, t.constant(Tensor({2})), t.constant(Tensor({3}))), ShapeError);
  EXPECT_THROW(ops::layer_norm(x, -1, t.constant(Tensor({3})), t.constant(Tensor({3})), 0.0),
               std::invalid_argument);
}

TEST(LayerNorm, Gradients) {
  for (int axis : {1, -1}) {
    const Shape shape = axis == 1 ? Shape{2, 4, 3, 3} : Shape{2, 5, 6};
    const std::size_t c = shape[axis == 1 ? 1 : 2];
    expect_grad_ok("layer_norm/input", [&](Tape& t, Var x, std::uint64_t s) {
      return ops::layer_norm(x, axis, t.constant(random_tensor({c}, s + 1)), t.constant(random_tensor({c}, s + 2)));
    }, shape, -2, 2);
    expect_grad_ok("layer_norm/gamma", [&](Tape& t, Var g, std::uint64_t s) {
      return ops::layer_norm(t.constant(random_tensor(shape, s + 1)), axis, g, t.constant(random_tensor({c}, s + 2)));
    }, {c});
    expect_grad_ok("layer_norm/beta", [&](Tape& t, Var b, std::uint64_t s) {
      return ops::layer_norm(t.constant(random_tensor(shape, s + 1)), axis, t.constant(random_tensor({c}, s + 2)), b);
    }, {c});
  }
}

// --- softmax -----------------------------------------------------------------

TEST(Softmax, Examples) {
  Tape t;
  Var a = ops::softmax(t.constant(Tensor::vector({0, 0, 0})), 0);
  for (double v : a.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Var b = ops::softmax(t.constant(Tensor::vector({std::log(2.0), 0})), 0);
  EXPECT_NEAR(b.value()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.value()[1], 1.0 / 3.0, 1e-15);
  Var c = ops::softmax(t.constant(Tensor::vector({1000, 0})), 0);
  EXPECT_TRUE(std::isfinite(c.value()[0]));
  EXPECT_NEAR(c.value()[0], 1.0, 1e-15);
  EXPECT_NEAR(c.value()[1], 0.0, 1e-15);
}

TEST(Softmax, SumsToOneForLargeMagnitudes) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    Tensor x = random_tensor({3, 7, 4}, rng, -1000, 1000);
    for (int axis : {0, 1, 2}) {
      Var y = ops::softmax(t.constant(x), axis);
      const auto& s = y.shape();
      const std::size_t ax = static_cast<std::size_t>(axis);
      std::size_t outer = 1, inner = 1;
      for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
      for (std::size_t i = ax + 1; i < 3; ++i) inner *= s[i];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double sum = 0;
          for (std::size_t c = 0; c < s[ax]; ++c) {
            const double v = y.value()[(o * s[ax] + c) * inner + i];
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            sum += v;
          }
          EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
  }
}

TEST(Softmax, Gradients) {
  for (int axis : {0, 1, -1}) {
    expect_grad_ok("softmax", [&](Tape&, Var x, std::uint64_t) { return ops::softmax(x, axis); }, {3, 4, 5}, -3, 3);
  }
}

// --- linear / matmul -----------------------------------------------------------

TEST(Linear, Examples) {
  Tape t;
  Tensor in = random_tensor({2, 3, 2}, 1);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Var a = ops::linear(t.constant(in), t.constant(eye), t.constant(Tensor({2}, 0.0)));
  EXPECT_EQ(a.value(), in);
  Var b = ops::linear(t.constant(Tensor({2}, {1, 2})), t.constant(Tensor({2, 2}, {1, 1, 1, -1})), std::nullopt);
  EXPECT_EQ(b.value(), Tensor({2}, {3, -1}));
  Var c = ops::linear(t.constant(in), t.constant(Tensor({3, 2}, 0.0)), t.constant(Tensor::vector({1.5, -2, 7})));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c.value()[i * 3 + 1], -2.0);
  EXPECT_THROW(ops::linear(t.constant(in), t.constant(Tensor({2, 3})), std::nullopt), ShapeError);
}

TEST(Linear, Gradients) {
  expect_grad_ok("linear/input", [](Tape& t, Var x, std::uint64_t s) {
    return ops::linear(x, t.constant(random_tensor({5, 4}, s)), t.constant(random_tensor({5}, s + 1)));
  }, {2, 3, 4});
  expect_grad_ok("linear/weight", [](Tape& t, Var w, std::uint64_t s) {
    return ops::linear(t.constant(random_tensor({2, 3, 4}, s)), w, t.constant(random_tensor({5}, s + 1)));
  }, {5, 4});
  expect_grad_ok("linear/bias", [](Tape& t, Var b, std::uint64_t s) {
    return ops::linear(t.constant(random_tensor({2, 3, 4}, s)), t.constant(random_tensor({5, 4}, s + 1)), b);
  }, {5});
}

TEST(Matmul, BatchedAgainstLoops) {
  Tape t;
  Tensor a = random_tensor({2, 3, 4, 5}, 1), b = random_tensor({2, 3, 5, 2}, 2);
  Var c = ops::matmul(t.constant(a), t.constant(b));
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t n = 0; n < 2; ++n) {
          double acc = 0;
          for (std::size_t k = 0; k < 5; ++k) acc += a.at({i, j, m, k}) * b.at({i, j, k, n});
          EXPECT_NEAR(c.value().at({i, j, m, n}), acc, 1e-13);
        }
  EXPECT_THROW(ops::matmul(t.constant(a), t.constant(a)), ShapeError);
}

TEST(Matmul, Gradients) {
  expect_grad_ok("matmul/a", [](Tape& t, Var a, std::uint64_t s) {
    return ops::matmul(a, t.constant(random_tensor({2, 4, 3}, s)));
  }, {2, 5, 4});
  expect_grad_ok("matmul/b", [](Tape& t, Var b, std::uint64_t s) {
    return ops::matmul(t.constant(random_tensor({2, 5, 4}, s)), b);
  }, {2, 4, 3});
}

// --- bilinear sampling ----------------------------------------------------------

TEST(BilinearSample, Examples) {
  const Tensor map({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(bilinear_sample(map, 0.5, 0.5)[0], 2.5);
  EXPECT_EQ(bilinear_sample(map, 0.0, 1.0)[0], 2.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(map, -0.5, -0.5)[0], 0.25);
  EXPECT_EQ(bilinear_sample(map, 5.0, -3.0)[0], 0.0);
}

TEST(BilinearSample, GridPointsAreExact) {
  const Tensor map = random_tensor({3, 4, 5}, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      Tensor v = bilinear_sample(map, static_cast<double>(i), static_cast<double>(j));
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(v[c], map.at({c, i, j}));
    }
}

TEST(BilinearSample, CoordinateGradientTakesRightLimitAtIntegers) {
  // value(y, 0) on map [[1],[5]] rises with slope 4 between rows 0 and 1,
  // and slope -5 between rows 1 and 2 (row 2 reads as zero padding).
  Tape t;
  Var map = t.constant(Tensor({1, 3, 1}, {1, 5, 0}));
  Var yx = t.leaf(Tensor::vector({1.0, 0.0}));
  Var v = ops::bilinear_sample(map, yx);
  t.backward(ops::sum(v));
  EXPECT_DOUBLE_EQ(yx.grad()[0], -5.0);
  Tape t2;
  Var yx2 = t2.leaf(Tensor::vector({0.0, 0.0}));
  t2.backward(ops::sum(ops::bilinear_sample(t2.constant(Tensor({1, 3, 1}, {1, 5, 0})), yx2)));
  EXPECT_DOUBLE_EQ(yx2.grad()[0], 4.0);
}

Tensor off_grid_coords(std::uint64_t seed) {
  Rng rng(seed);
  auto coord = [&](double hi) {
    // keep at least 0.1 away from integers where the map is non-smooth
    const double base = std::floor(rng.uniform(-1.0, hi));
    return base + rng.uniform(0.1, 0.9);
  };
  return Tensor::vector({coord(4.0), coord(5.0)});
}

TEST(BilinearSample, Gradients) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor map = random_tensor({3, 4, 5}, seed);
    const Tensor yx = off_grid_coords(seed + 50);
    auto proj = [seed](Var v) { return project(v, seed); };
    EXPECT_LT(grad_check([&](Tape& t, Var m) { return proj(ops::bilinear_sample(m, t.constant(yx))); }, map, 1e-5),
              kElementwiseTol);
    EXPECT_LT(grad_check([&](Tape& t, Var c) { return proj(ops::bilinear_sample(t.constant(map), c)); }, yx, 1e-5),
              kElementwiseTol);
  }
}

TEST(DeformResample, ZeroOffsetsReproduceInput) {
  Tape t;
  Tensor in = random_tensor({2, 3, 4, 5}, 4);
  Var y = ops::deform_resample(t.constant(in), t.constant(Tensor({2, 2, 4, 5}, 0.0)));
  EXPECT_EQ(y.value(), in);
}

TEST(DeformResample, UnitRowShiftWithZeroPadding) {
  // A vertical ramp sampled one row down equals the ramp shifted up with a zero last row.
  Tape t;
  Tensor ramp({1, 1, 4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) ramp.at({0, 0, i, j}) = static_cast<double>(i + 1);
  Tensor off({1, 2, 4, 3}, 0.0);
  for (std::size_t p = 0; p < 12; ++p) off[p] = 1.0;  // dy = +1
  Var y = ops::deform_resample(t.constant(ramp), t.constant(off));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double expect = i + 1 < 4 ? ramp.at({0, 0, i + 1, j}) : 0.0;
      EXPECT_EQ(y.value().at({0, 0, i, j}), expect);
    }
}

TEST(DeformResample, MatchesPointwiseBilinear) {
  Tape t;
  Tensor in = random_tensor({1, 2, 4, 4}, 31);
  Tensor off = random_tensor({1, 2, 4, 4}, 32, -2, 2);
  Var y = ops::deform_resample(t.constant(in), t.constant(off));
  Tensor plane = in.reshaped({2, 4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      Tensor v = bilinear_sample(plane, i + off.at({0, 0, i, j}), j + off.at({0, 1, i, j}));
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y.value().at({0, c, i, j}), v[c]);
    }
}

TEST(DeformResample, Gradients) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor map = random_tensor({2, 3, 4, 4}, seed);
    Tensor off({2, 2, 4, 4});
    Rng rng(seed + 9);
    for (double& v : off.data()) v = std::floor(rng.uniform(-2, 2)) + rng.uniform(0.1, 0.9);
    EXPECT_LT(grad_check([&](Tape& t, Var m) { return project(ops::deform_resample(m, t.constant(off)), seed); }, map,
                         1e-5),
              kElementwiseTol);
    EXPECT_LT(grad_check([&](Tape& t, Var o) { return project(ops::deform_resample(t.constant(map), o), seed); }, off,
                         1e-5),
              kElementwiseTol);
  }
}

// --- misc primitives ---------------------------------------------------------

TEST(Primitives, GeluAndCrossEntropyClosedForms) {
  Tape t;
  EXPECT_EQ(ops::gelu(t.constant(Tensor::vector({0.0}))).value()[0], 0.0);
  EXPECT_NEAR(ops::gelu(t.constant(Tensor::vector({1.0}))).value()[0], 0.8413447460685429, 1e-15);
  const int label0[] = {0};
  Var ce = ops::cross_entropy(t.constant(Tensor({1, 2}, 0.0)), label0);
  EXPECT_NEAR(ce.value()[0], std::log(2.0), 1e-15);
  const int bad[] = {2};
  EXPECT_THROW(ops::cross_entropy(t.constant(Tensor({1, 2}, 0.0)), bad), std::out_of_range);
}

TEST(Primitives, ConcatSplitRoundTrip) {
  Tape t;
  Tensor in = random_tensor({2, 7, 3, 2}, 12);
  const std::size_t sizes[] = {3, 4};
  auto parts = ops::split_channels(t.constant(in), sizes);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[1].shape(), (Shape{2, 4, 3, 2}));
  EXPECT_EQ(ops::concat_channels(parts).value(), in);
  const std::size_t wrong[] = {3, 3};
  EXPECT_THROW(ops::split_channels(t.constant(in), wrong), ShapeError);
}

TEST(Primitives, TokenLayoutRoundTrip) {
  Tape t;
  Tensor in = random_tensor({2, 3, 4, 5}, 13);
  Var tok = ops::to_tokens(t.constant(in));
  ASSERT_EQ(tok.shape(), (Shape{2, 20, 3}));
  EXPECT_EQ(tok.value().at({1, 7, 2}), in.at({1, 2, 1, 2}));
  EXPECT_EQ(ops::from_tokens(tok, 4, 5).value(), in);
}

TEST(Primitives, MeanPoolAndSum) {
  Tape t;
  Tensor in({1, 2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 10});
  Var m = ops::mean_pool_spatial(t.constant(in));
  EXPECT_EQ(m.value(), Tensor({1, 2}, {2.5, 10}));
  EXPECT_EQ(ops::sum(t.constant(in)).value()[0], 50.0);
}

TEST(Primitives, Gradients) {
  expect_grad_ok("gelu", [](Tape&, Var x, std::uint64_t) { return ops::gelu(x); }, {3, 4}, -3, 3);
  expect_grad_ok("sigmoid", [](Tape&, Var x, std::uint64_t) { return ops::sigmoid(x); }, {3, 4}, -4, 4);
  expect_grad_ok("add", [](Tape& t, Var x, std::uint64_t s) { return ops::add(x, t.constant(random_tensor({3, 4}, s))); },
                 {3, 4});
  expect_grad_ok("sub", [](Tape& t, Var x, std::uint64_t s) { return ops::sub(t.constant(random_tensor({3, 4}, s)), x); },
                 {3, 4});
  expect_grad_ok("mul", [](Tape& t, Var x, std::uint64_t s) { return ops::mul(x, t.constant(random_tensor({3, 4}, s))); },
                 {3, 4});
  expect_grad_ok("mul/self", [](Tape&, Var x, std::uint64_t) { return ops::mul(x, x); }, {3, 4});
  expect_grad_ok("mul_broadcast/a", [](Tape& t, Var x, std::uint64_t s) {
    return ops::mul_broadcast(x, t.constant(random_tensor({2, 1, 3, 3}, s)));
  }, {2, 4, 3, 3});
  expect_grad_ok("mul_broadcast/b", [](Tape& t, Var x, std::uint64_t s) {
    return ops::mul_broadcast(t.constant(random_tensor({2, 4, 3, 3}, s)), x);
  }, {2, 1, 3, 3});
  expect_grad_ok("scale", [](Tape&, Var x, std::uint64_t) { return ops::scale(x, -2.5); }, {5});
  expect_grad_ok("transpose", [](Tape&, Var x, std::uint64_t) { return ops::transpose(x, 1, 3); }, {2, 3, 4, 2});
  expect_grad_ok("reshape", [](Tape&, Var x, std::uint64_t) { return ops::reshape(x, {6, 4}); }, {2, 3, 4});
  expect_grad_ok("slice", [](Tape&, Var x, std::uint64_t) { return ops::slice(x, 1, 1, 3); }, {2, 4, 3});
  expect_grad_ok("concat", [](Tape& t, Var x, std::uint64_t s) {
    const Var parts[] = {x, t.constant(random_tensor({2, 2, 3}, s)), x};
    return ops::concat(parts, 1);
  }, {2, 3, 3});
  expect_grad_ok("mean_axis", [](Tape&, Var x, std::uint64_t) { return ops::mean_axis(x, 1); }, {2, 5, 3});
  expect_grad_ok("mean_pool_spatial", [](Tape&, Var x, std::uint64_t) { return ops::mean_pool_spatial(x); },
                 {2, 3, 4, 4});
  expect_grad_ok("weighted_sum/terms", [](Tape& t, Var x, std::uint64_t s) {
    const Var terms[] = {x, ops::mul(x, x), t.constant(random_tensor({2, 3}, s))};
    return ops::weighted_sum(terms, t.constant(random_tensor({3}, s + 1)));
  }, {2, 3});
  expect_grad_ok("weighted_sum/weights", [](Tape& t, Var w, std::uint64_t s) {
    const Var terms[] = {t.constant(random_tensor({2, 3}, s)), t.constant(random_tensor({2, 3}, s + 1))};
    return ops::weighted_sum(terms, w);
  }, {2});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const int labels[] = {0, 3, 1};
    EXPECT_LT(grad_check([&](Tape&, Var z) { return ops::cross_entropy(z, labels); },
                         random_tensor({3, 4}, seed, -3, 3), 1e-5),
              kElementwiseTol);
  }
}

// --- backward ------------------------------------------------------------------

TEST(Backward, Examples) {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  {
    Tape t;
    t.backward(ops::sum(t.param(p)));
  }
  EXPECT_EQ(p.grad, Tensor::vector({1, 1}));
  p.zero_grad();
  {
    Tape t;
    Var v = t.param(p);
    t.backward(ops::sum(ops::mul(v, v)));
  }
  EXPECT_EQ(p.grad, Tensor::vector({2, 4}));
}

TEST(Backward, RepeatedCallsAccumulate) {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  Tape t;
  Var loss = ops::sum(ops::mul(t.param(p), t.param(p)));
  t.backward(loss);
  t.backward(loss);
  EXPECT_EQ(p.grad, Tensor::vector({4, 8}));
}

TEST(Backward, DetachedSubgraphGetsNoGradient) {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  Parameter q("q", Tensor::vector({3.0, 4.0}));
  Tape t;
  Var loss = ops::sum(ops::add(ops::detach(ops::mul(t.param(p), t.param(p))), t.param(q)));
  t.backward(loss);
  EXPECT_EQ(p.grad, Tensor::vector({0, 0}));
  EXPECT_EQ(q.grad, Tensor::vector({1, 1}));
}

TEST(Backward, IdentityChainGivesExactOnes) {
  Tape t;
  Var x = t.leaf(random_tensor({4, 3}, 5));
  Var y = x;
  for (int i = 0; i < 25; ++i) y = ops::reshape(ops::scale(y, 1.0), {4, 3});
  t.backward(ops::sum(y));
  const Tensor g = x.grad();
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  Var x = t.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Tape t;
    Var x = t.leaf(random_tensor({2, 3, 6, 6}, 77));
    Var w = t.constant(random_tensor({3, 1, 3, 3}, 78));
    Var y = ops::gelu(ops::conv2d(x, w, std::nullopt, {.padding = 1, .groups = 3}));
    t.backward(ops::sum(ops::mul(y, y)));
    return std::make_pair(y.value(), x.grad());
  };
  EXPECT_EQ(run(), run());
}

// --- grad_check itself ---------------------------------------------------------------

TEST(GradCheck, SumOfSquaresAndIdentity) {
  const Tensor x = random_tensor({10}, 3);
  EXPECT_LT(grad_check([](Tape&, Var v) { return ops::sum(ops::mul(v, v)); }, x, 1e-5), 1e-7);
  EXPECT_LT(grad_check([](Tape&, Var v) { return ops::sum(v); }, x, 1e-5), 1e-10);
  EXPECT_THROW(grad_check([](Tape&, Var v) { return ops::sum(v); }, x, 0.0), std::invalid_argument);
}

TEST(GradCheck, DetectsInjectedFault) {
  GradCheckOptions opt;
  opt.fault_op = "gelu";
  opt.fault_factor = 1.5;
  const auto r = grad_check([](Tape&, Var v) { return ops::sum(ops::gelu(v)); }, random_tensor({6}, 4), opt);
  EXPECT_GT(r.max_rel_error, 1e-2);
}

TEST(Tensor, InvariantsAndErrors) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  Tensor t({2}, {1.0, std::nan("")});
  EXPECT_THROW(t.assert_finite("probe"), NumericError);
  EXPECT_THROW(normalize_axis(3, 3), ShapeError);
  EXPECT_EQ(normalize_axis(-1, 3), 2u);
}

}  // namespace
}  // namespace eatkit
