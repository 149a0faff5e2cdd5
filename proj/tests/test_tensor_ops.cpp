#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mrnet/ops.hpp"
#include "mrnet/rng.hpp"
#include "mrnet/tensor.hpp"

using namespace mrnet;

namespace {

Tensor filled(Shape shape, double v) { return Tensor(std::move(shape), v); }

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Bounds-checked elementwise reference convolution, structured differently
// from the library loops.
Tensor reference_conv2d(const Tensor& in, const Tensor& k, const Tensor& bias, const Conv2dOpts& o) {
  const std::int64_t B = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t Cout = k.dim(0), Cin_g = k.dim(1), Kh = k.dim(2), Kw = k.dim(3);
  const std::int64_t Ho = conv_out_extent(H, Kh, o.stride, o.padding, o.dilation);
  const std::int64_t Wo = conv_out_extent(W, Kw, o.stride, o.padding, o.dilation);
  const std::int64_t Cout_g = Cout / o.groups;
  Tensor out(Shape{B, Cout, Ho, Wo});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oh = 0; oh < Ho; ++oh)
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          double acc = bias[co];
          for (std::int64_t cl = 0; cl < Cin_g; ++cl)
            for (std::int64_t kh = 0; kh < Kh; ++kh)
              for (std::int64_t kw = 0; kw < Kw; ++kw) {
                const std::int64_t ih = oh * o.stride - o.padding + kh * o.dilation;
                const std::int64_t iw = ow * o.stride - o.padding + kw * o.dilation;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                const std::int64_t ci = (co / Cout_g) * Cin_g + cl;
                acc += in[((b * Cin + ci) * H + ih) * W + iw] * k[((co * Cin_g + cl) * Kh + kh) * Kw + kw];
              }
          out[((b * Cout + co) * Ho + oh) * Wo + ow] = acc;
        }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and buffer must agree") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{-1, 3}), std::invalid_argument);
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.at({1, 2}) == 1.5);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("all-ones 3x3 full overlap sums to 9") {
    Tensor in = filled({1, 1, 3, 3}, 1.0);
    Tensor k = filled({1, 1, 3, 3}, 1.0);
    Tensor out = conv2d(in, k, filled({1}, 0.0));
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == doctest::Approx(9.0));
  }

  TEST_CASE("same padding keeps spatial extents") {
    Rng rng(7);
    Tensor in = random_tensor(rng, {1, 3, 8, 8});
    Tensor k = random_tensor(rng, {4, 3, 3, 3});
    Tensor b = random_tensor(rng, {4});
    CHECK(conv2d(in, k, b, {.stride = 1, .padding = 1, .dilation = 1}).shape() == Shape{1, 4, 8, 8});
    // Dilation 2 with padding 2: effective kernel extent 5, same output size.
    CHECK(conv2d(in, k, b, {.stride = 1, .padding = 2, .dilation = 2}).shape() == Shape{1, 4, 8, 8});
  }

  TEST_CASE("output extent formula over the stride/padding/dilation grid") {
    Rng rng(3);
    for (std::int64_t s : {1, 2})
      for (std::int64_t p : {0, 1, 2})
        for (std::int64_t d : {1, 2, 5}) {
          const std::int64_t H = 13, W = 11, K = 3;
          if (H + 2 * p < d * (K - 1) + 1 || W + 2 * p < d * (K - 1) + 1) continue;
          Tensor in = random_tensor(rng, {2, 2, H, W});
          Tensor k = random_tensor(rng, {3, 2, K, K});
          Tensor b = random_tensor(rng, {3});
          const Tensor out = conv2d(in, k, b, {.stride = s, .padding = p, .dilation = d});
          CHECK(out.dim(2) == (H + 2 * p - d * (K - 1) - 1) / s + 1);
          CHECK(out.dim(3) == (W + 2 * p - d * (K - 1) - 1) / s + 1);
        }
  }

  TEST_CASE("matches the bounds-checked reference on random cases") {
    Rng rng(11);
    const Conv2dOpts cases[] = {
        {1, 0, 1, 1}, {1, 1, 1, 1}, {2, 1, 1, 1}, {1, 2, 2, 1}, {2, 2, 5, 1}, {1, 1, 1, 2},
    };
    for (const auto& o : cases) {
      const std::int64_t Cin = o.groups * 2, Cout = o.groups * 3;
      Tensor in = random_tensor(rng, {2, Cin, 12, 12});
      Tensor k = random_tensor(rng, {Cout, Cin / o.groups, 3, 3});
      Tensor b = random_tensor(rng, {Cout});
      const Tensor got = conv2d(in, k, b, o);
      const Tensor want = reference_conv2d(in, k, b, o);
      REQUIRE(got.shape() == want.shape());
      for (std::int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("rejects mismatched channels naming the dimension") {
    Tensor in = filled({1, 4, 8, 8}, 0.0);
    Tensor k = filled({2, 3, 3, 3}, 0.0);
    CHECK_THROWS_WITH_AS(conv2d(in, k, filled({2}, 0.0)),
                         doctest::Contains("kernel channel dimension (3)"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(conv2d(filled({1, 3, 8, 8}, 0.0), filled({2, 3, 3, 3}, 0.0), filled({5}, 0.0)),
                         doctest::Contains("bias extent (5)"), std::invalid_argument);
  }

  TEST_CASE("rejects inputs smaller than the effective kernel extent") {
    Tensor in = filled({1, 1, 4, 4}, 0.0);
    Tensor k = filled({1, 1, 3, 3}, 0.0);
    CHECK_THROWS_WITH_AS(conv2d(in, k, filled({1}, 0.0), {.stride = 1, .padding = 0, .dilation = 5}),
                         doctest::Contains("effective kernel extent 11"), std::invalid_argument);
  }

  TEST_CASE("dilated receptive extent is d*(k-1)+1") {
    // Perturbing the input outside the receptive window of an output element
    // must leave that element unchanged; inside, it must move.
    Rng rng(5);
    for (std::int64_t d : {1, 2, 5}) {
      const std::int64_t extent = d * 2 + 1;
      const std::int64_t H = 2 * extent + 3;
      Tensor in = random_tensor(rng, {1, 1, H, H});
      Tensor k = random_tensor(rng, {1, 1, 3, 3});
      Tensor b = random_tensor(rng, {1});
      const Conv2dOpts opts{.stride = 1, .padding = 0, .dilation = d};
      const Tensor base = conv2d(in, k, b, opts);
      const std::int64_t oh = base.dim(2) / 2;
      // Output element (oh,oh) reads input rows [oh, oh+extent).
      const double before = base[(base.dim(2) * oh + oh)];

      Tensor poked = in.clone();
      poked[(oh + extent) * H + oh] += 10.0;  // first row past the window
      CHECK(conv2d(poked, k, b, opts)[(base.dim(2) * oh + oh)] == before);

      Tensor poked_in = in.clone();
      poked_in[(oh + extent - 1) * H + oh] += 10.0;  // last row inside
      CHECK(conv2d(poked_in, k, b, opts)[(base.dim(2) * oh + oh)] != before);
    }
  }
}

TEST_SUITE("maxpool2d") {
  TEST_CASE("single window takes the max") {
    Tensor in(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor out = maxpool2d(in);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out[0] == 4.0);
  }

  TEST_CASE("constant input stays constant") {
    const Tensor out = maxpool2d(filled({2, 3, 4, 4}, 0.7));
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.7);
  }

  TEST_CASE("odd extents are rejected") {
    CHECK_THROWS_WITH_AS(maxpool2d(filled({1, 1, 3, 4}, 0.0)), doctest::Contains("height 3 is odd"),
                         std::invalid_argument);
    CHECK_THROWS_AS(maxpool2d(filled({1, 1, 4, 5}, 0.0)), std::invalid_argument);
  }
}

TEST_SUITE("upconv2x") {
  TEST_CASE("single element broadcasts through the kernel") {
    Tensor in(Shape{1, 1, 1, 1}, {3.5});
    Tensor k = filled({1, 1, 2, 2}, 1.0);
    const Tensor out = upconv2x(in, k);
    CHECK(out.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(out[i] == 3.5);
  }

  TEST_CASE("doubles spatial extents") {
    Rng rng(2);
    Tensor in = random_tensor(rng, {1, 8, 4, 4});
    Tensor k = random_tensor(rng, {8, 5, 2, 2});
    CHECK(upconv2x(in, k).shape() == Shape{1, 5, 8, 8});
    CHECK_THROWS_AS(upconv2x(in, random_tensor(rng, {7, 5, 2, 2})), std::invalid_argument);
  }
}

TEST_SUITE("relu") {
  TEST_CASE("clamps negatives") {
    Tensor in(Shape{3}, {-1.0, 0.0, 2.0});
    const Tensor out = relu(in);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);
  }
}

TEST_SUITE("dense") {
  TEST_CASE("identity weight and zero bias reproduce the input") {
    Tensor in(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w = filled({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    const Tensor out = dense(in, w, filled({3}, 0.0));
    for (std::int64_t i = 0; i < 6; ++i) CHECK(out[i] == in[i]);
  }

  TEST_CASE("affine example") {
    Tensor in(Shape{1, 2}, {1, 2});
    Tensor w(Shape{2, 1}, {1, 1});
    Tensor b(Shape{1}, {1});
    CHECK(dense(in, w, b)[0] == 4.0);
  }

  TEST_CASE("rejects mismatched inner dimensions") {
    CHECK_THROWS_WITH_AS(dense(filled({1, 3}, 0.0), filled({4, 2}, 0.0), filled({2}, 0.0)),
                         doctest::Contains("weight rows (4)"), std::invalid_argument);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("uniform logits give uniform probabilities") {
    const Tensor out = softmax(filled({1, 3}, 0.0));
    for (int i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("extreme logits stay finite") {
    Tensor in(Shape{1, 3}, {1000.0, 0.0, 0.0});
    const Tensor out = softmax(in);
    CHECK(out.all_finite());
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(0.0));
  }

  TEST_CASE("shift invariance") {
    Rng rng(9);
    Tensor in = random_tensor(rng, {4, 6}, -3.0, 3.0);
    Tensor shifted = in.clone();
    for (std::int64_t b = 0; b < 4; ++b)
      for (std::int64_t i = 0; i < 6; ++i) shifted[b * 6 + i] += 17.25;
    const Tensor a = softmax(in), s = softmax(shifted);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(s[i]).epsilon(1e-9));
  }

  TEST_CASE("rows are distributions") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor out = softmax(random_tensor(rng, {5, 7}, -30.0, 30.0));
      for (std::int64_t b = 0; b < 5; ++b) {
        double sum = 0.0;
        for (std::int64_t i = 0; i < 7; ++i) {
          const double p = out[b * 7 + i];
          CHECK(p >= 0.0);
          CHECK(p <= 1.0);
          sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
      }
    }
  }
}

TEST_SUITE("concat_channels") {
  TEST_CASE("a occupies the first channels") {
    Tensor a = filled({1, 1, 2, 2}, 1.0);
    Tensor b = filled({1, 1, 2, 2}, 2.0);
    const Tensor out = concat_channels(a, b);
    CHECK(out.shape() == Shape{1, 2, 2, 2});
    CHECK(out[0] == 1.0);
    CHECK(out[4] == 2.0);
  }

  TEST_CASE("identical inputs duplicate the channel") {
    Rng rng(1);
    Tensor a = random_tensor(rng, {1, 1, 3, 3});
    const Tensor out = concat_channels(a, a);
    for (std::int64_t i = 0; i < 9; ++i) CHECK(out[i] == out[9 + i]);
  }

  TEST_CASE("shapes") {
    Tensor a = filled({1, 64, 8, 8}, 0.0), b = filled({1, 64, 8, 8}, 0.0);
    CHECK(concat_channels(a, b).shape() == Shape{1, 128, 8, 8});
    CHECK_THROWS_WITH_AS(concat_channels(a, filled({1, 64, 4, 8}, 0.0)), doctest::Contains("spatial extents differ"),
                         std::invalid_argument);
  }
}

TEST_SUITE("global_avg_pool") {
  TEST_CASE("constant map") {
    const Tensor out = global_avg_pool(filled({2, 3, 5, 5}, 0.25));
    CHECK(out.shape() == Shape{2, 3});
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.25));
  }

  TEST_CASE("mean of a 2x2 map") {
    Tensor in(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_avg_pool(in)[0] == doctest::Approx(2.5));
  }
}

TEST_SUITE("finite forward") {
  TEST_CASE("ops keep finite inputs finite") {
    Rng rng(21);
    Tensor in = random_tensor(rng, {2, 3, 8, 8}, -100.0, 100.0);
    Tensor k = random_tensor(rng, {4, 3, 3, 3}, -10.0, 10.0);
    CHECK(conv2d(in, k, random_tensor(rng, {4}), {.stride = 1, .padding = 1}).all_finite());
    CHECK(maxpool2d(in).all_finite());
    CHECK(relu(in).all_finite());
    CHECK(softmax(random_tensor(rng, {3, 9}, -700.0, 700.0)).all_finite());
  }
}
