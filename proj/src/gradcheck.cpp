#include "mrnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mrnet/model.hpp"
#include "mrnet/ops.hpp"
#include "mrnet/rng.hpp"
#include "mrnet/train.hpp"

namespace mrnet {

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values pushed away from 0 so a +-eps probe never crosses the ReLU kink.
Tensor rand_tensor_off_kink(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < 0.05) v += v < 0.0 ? -0.1 : 0.1;
  }
  return t;
}

// Pairwise-distinct values (spacing far above eps) so max-pool argmaxes are
// stable under probing.
Tensor rand_tensor_distinct(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  std::vector<std::size_t> perm(t.values().size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i) t.values()[i] = 0.013 * static_cast<double>(perm[i]);
  return t;
}

std::vector<double> rand_weights(Rng& rng, std::int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace

std::vector<GradCheckItem> run_gradient_checks(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradCheckItem> items;
  Rng rng(seed);
  const double eps = options.eps;

  auto check = [&](const std::string& name, const Tensor& x, const ScalarFn& f) {
    items.push_back({name, finite_diff_check(f, x, eps)});
  };

  {
    Tensor x = rand_tensor(rng, {2, 3, 4}, -1.0, 1.0);
    auto w = rand_weights(rng, x.size());
    check("linear", x, [=](Tape* tape) { return weighted_sum(x, w, tape); });
    check("quadratic", x, [=](Tape* tape) { return weighted_sum(square(x, tape), w, tape); });
  }

  struct ConvCase {
    const char* name;
    Conv2dOpts opts;
    Shape input, kernel;
  };
  const ConvCase conv_cases[] = {
      {"conv2d[s1,p0,d1]", {1, 0, 1, 1}, {2, 3, 6, 6}, {4, 3, 3, 3}},
      {"conv2d[s1,p2,d2]", {1, 2, 2, 1}, {2, 3, 6, 6}, {4, 3, 3, 3}},
      {"conv2d[s2,p1,d1]", {2, 1, 1, 1}, {2, 3, 6, 6}, {4, 3, 3, 3}},
      {"conv2d[s1,p5,d5]", {1, 5, 5, 1}, {2, 2, 12, 12}, {3, 2, 3, 3}},
      {"conv2d[depthwise]", {1, 1, 1, 4}, {2, 4, 6, 6}, {4, 1, 3, 3}},
  };
  bool first_conv = true;
  for (const auto& cc : conv_cases) {
    Tensor x = rand_tensor(rng, cc.input, -1.0, 1.0);
    Tensor k = rand_tensor(rng, cc.kernel, -1.0, 1.0);
    Tensor b = rand_tensor(rng, {cc.kernel[0]}, -0.5, 0.5);
    Tensor probe = conv2d(x, k, b, cc.opts);
    auto w = rand_weights(rng, probe.size());
    const bool corrupt_here = options.corrupt && first_conv;
    ScalarFn f = [=](Tape* tape) {
      Tensor out = conv2d(x, k, b, cc.opts, tape);
      if (corrupt_here && tape) {
        Tensor k_alias = k;
        tape->record("corrupt-hook", [k_alias]() mutable { k_alias.grad()[0] += 0.5; });
      }
      return weighted_sum(out, w, tape);
    };
    check(std::string(cc.name) + "/input", x, f);
    check(std::string(cc.name) + "/kernel", k, f);
    check(std::string(cc.name) + "/bias", b, f);
    first_conv = false;
  }

  {
    Tensor x = rand_tensor_distinct(rng, {2, 2, 6, 6});
    Tensor probe = maxpool2d(x);
    auto w = rand_weights(rng, probe.size());
    check("maxpool2d/input", x, [=](Tape* tape) { return weighted_sum(maxpool2d(x, tape), w, tape); });
  }

  {
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
    Tensor k = rand_tensor(rng, {3, 4, 2, 2}, -1.0, 1.0);
    Tensor probe = upconv2x(x, k);
    auto w = rand_weights(rng, probe.size());
    ScalarFn f = [=](Tape* tape) { return weighted_sum(upconv2x(x, k, tape), w, tape); };
    check("upconv2x/input", x, f);
    check("upconv2x/kernel", k, f);
  }

  {
    Tensor x = rand_tensor_off_kink(rng, {2, 3, 4, 4});
    auto w = rand_weights(rng, x.size());
    check("relu/input", x, [=](Tape* tape) { return weighted_sum(relu(x, tape), w, tape); });
  }

  {
    Tensor x = rand_tensor(rng, {3, 5}, -1.0, 1.0);
    Tensor wt = rand_tensor(rng, {5, 4}, -1.0, 1.0);
    Tensor b = rand_tensor(rng, {4}, -0.5, 0.5);
    auto w = rand_weights(rng, 3 * 4);
    ScalarFn f = [=](Tape* tape) { return weighted_sum(dense(x, wt, b, tape), w, tape); };
    check("dense/input", x, f);
    check("dense/weight", wt, f);
    check("dense/bias", b, f);
  }

  {
    Tensor x = rand_tensor(rng, {3, 5}, -2.0, 2.0);
    auto w = rand_weights(rng, x.size());
    check("softmax/input", x, [=](Tape* tape) { return weighted_sum(softmax(x, tape), w, tape); });
  }

  {
    Tensor a = rand_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
    Tensor b = rand_tensor(rng, {2, 3, 3, 3}, -1.0, 1.0);
    Tensor probe = concat_channels(a, b);
    auto w = rand_weights(rng, probe.size());
    ScalarFn f = [=](Tape* tape) { return weighted_sum(concat_channels(a, b, tape), w, tape); };
    check("concat_channels/a", a, f);
    check("concat_channels/b", b, f);
  }

  {
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
    auto w = rand_weights(rng, 2 * 3);
    check("global_avg_pool/input", x, [=](Tape* tape) { return weighted_sum(global_avg_pool(x, tape), w, tape); });
  }

  {
    Tensor x = rand_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
    auto w = rand_weights(rng, x.size());
    check("flatten/input", x, [=](Tape* tape) { return weighted_sum(flatten2d(x, tape), w, tape); });
  }

  {
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, 0.0, 1.0);
    auto w = rand_weights(rng, x.size());
    const std::array<double, 3> mean{0.485, 0.456, 0.406};
    const std::array<double, 3> sd{0.229, 0.224, 0.225};
    check("standardize/input", x,
          [=](Tape* tape) { return weighted_sum(standardize(x, mean, sd, tape), w, tape); });
  }

  {
    Tensor logits = rand_tensor(rng, {4, 3}, -2.0, 2.0);
    std::vector<std::int64_t> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<std::int64_t>(rng.uniform_int(3)));
    check("cross_entropy(softmax)/logits", logits,
          [=](Tape* tape) { return cross_entropy_loss(softmax(logits, tape), labels, tape); });
  }

  {
    // Full network loss at desk scale; two sampled elements per parameter.
    const ModelSpec spec = build_mrnet(3, 32, 0.125);
    ModelInstance model = materialize(spec, seed);
    Tensor x = rand_tensor(rng, {2, 3, 32, 32}, 0.0, 1.0);
    std::vector<std::int64_t> labels;
    for (int i = 0; i < 2; ++i) labels.push_back(static_cast<std::int64_t>(rng.uniform_int(3)));
    ScalarFn f = [&model, x, labels](Tape* tape) {
      return cross_entropy_loss(forward(model, x, tape), labels, tape);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      worst = std::max(worst, finite_diff_check_sampled(f, model.params[i], eps, 2, seed ^ (0xabcdULL + i)));
    }
    items.push_back({"mrnet-mini-loss", worst});
  }

  return items;
}

bool all_within(const std::vector<GradCheckItem>& items, double tolerance) {
  return std::all_of(items.begin(), items.end(),
                     [tolerance](const GradCheckItem& i) { return i.max_rel_err < tolerance; });
}

}  // namespace mrnet
