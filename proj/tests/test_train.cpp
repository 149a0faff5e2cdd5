#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "mrnet/model.hpp"
#include "mrnet/ops.hpp"
#include "mrnet/rng.hpp"
#include "mrnet/train.hpp"

using namespace mrnet;

namespace {

SplitData const_samples(std::int64_t n, std::int64_t resolution, std::uint64_t seed, std::int64_t classes) {
  SplitData d;
  d.x = Tensor(Shape{n, 3, resolution, resolution});
  Rng rng(seed);
  for (double& v : d.x.values()) v = rng.uniform(0.0, 1.0);
  for (std::int64_t i = 0; i < n; ++i) d.labels.push_back(i % classes);
  return d;
}

}  // namespace

TEST_SUITE("cross_entropy_loss") {
  TEST_CASE("one-hot correct prediction costs nothing") {
    Tensor probs(Shape{2, 3}, {1, 0, 0, 0, 0, 1});
    CHECK(cross_entropy_loss(probs, {0, 2})[0] == 0.0);
  }

  TEST_CASE("uniform probabilities cost ln(n)") {
    for (std::int64_t n : {2, 3, 10}) {
      Tensor probs(Shape{1, n}, 1.0 / static_cast<double>(n));
      CHECK(cross_entropy_loss(probs, {0})[0] == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-9));
    }
  }

  TEST_CASE("zero probability is clamped to a large finite loss") {
    Tensor probs(Shape{1, 2}, {0.0, 1.0});
    const double loss = cross_entropy_loss(probs, {0})[0];
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(-std::log(1e-12)));
  }

  TEST_CASE("out-of-range labels are rejected") {
    Tensor probs(Shape{1, 3}, 1.0 / 3.0);
    CHECK_THROWS_WITH_AS(cross_entropy_loss(probs, {3}), doctest::Contains("out of range"), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_loss(probs, {-1}), std::invalid_argument);
  }

  TEST_CASE("gradient through softmax is (p - onehot)/B") {
    Rng rng(5);
    Tensor logits(Shape{4, 3});
    for (double& v : logits.values()) v = rng.uniform(-2.0, 2.0);
    logits.set_requires_grad(true);
    const std::vector<std::int64_t> labels{0, 2, 1, 1};

    Tape tape;
    Tensor probs = softmax(logits, &tape);
    Tensor loss = cross_entropy_loss(probs, labels, &tape);
    tape.backward(loss);

    for (std::int64_t b = 0; b < 4; ++b)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double onehot = labels[static_cast<std::size_t>(b)] == c ? 1.0 : 0.0;
        const double want = (probs[b * 3 + c] - onehot) / 4.0;
        CHECK(logits.grad()[static_cast<std::size_t>(b * 3 + c)] == doctest::Approx(want).epsilon(1e-6));
      }

    const double fd = finite_diff_check(
        [&](Tape* t) { return cross_entropy_loss(softmax(logits, t), labels, t); }, logits, 1e-5);
    CHECK(fd < 1e-6);
  }

  TEST_CASE("loss is nonnegative and zero only at exact one-hot hits") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor logits(Shape{2, 4});
      for (double& v : logits.values()) v = rng.uniform(-3.0, 3.0);
      const Tensor probs = softmax(logits);
      const double loss = cross_entropy_loss(probs, {1, 2})[0];
      CHECK(loss > 0.0);
    }
  }
}

TEST_SUITE("lr_schedule") {
  TEST_CASE("default recipe: 1e-4 before epoch 5, 1e-5 after") {
    TrainConfig config;
    CHECK(lr_schedule(0, config) == 1e-4);
    CHECK(lr_schedule(4, config) == 1e-4);
    CHECK(lr_schedule(5, config) == 1e-5);
    CHECK(lr_schedule(9, config) == 1e-5);
  }

  TEST_CASE("pure function of (epoch, config)") {
    TrainConfig config;
    for (std::int64_t e = 0; e < 10; ++e) CHECK(lr_schedule(e, config) == lr_schedule(e, config));
  }

  TEST_CASE("epochs outside the run are rejected") {
    TrainConfig config;
    CHECK_THROWS_AS(lr_schedule(-1, config), std::invalid_argument);
    CHECK_THROWS_AS(lr_schedule(10, config), std::invalid_argument);
  }

  TEST_CASE("config invariants") {
    TrainConfig bad;
    bad.reduced_lr = 2e-4;  // above initial
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = TrainConfig{};
    bad.lr_drop_epoch = 11;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_SUITE("adam") {
  TEST_CASE("first step moves by about lr against the gradient sign") {
    Tensor p(Shape{1}, {1.0});
    p.set_requires_grad(true);
    p.grad()[0] = 0.5;
    AdamOptimizer opt({p});
    opt.step(1e-4);
    const double delta = p[0] - 1.0;
    CHECK(delta == doctest::Approx(-1e-4).epsilon(1e-6));
    CHECK(opt.step_count() == 1);
  }

  TEST_CASE("zero gradients leave parameters unchanged") {
    Tensor p(Shape{3}, {1.0, -2.0, 0.5});
    p.set_requires_grad(true);
    p.grad();  // allocated, all zero
    AdamOptimizer opt({p});
    for (int i = 0; i < 5; ++i) opt.step(1e-2);
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
  }

  TEST_CASE("two optimizers fed identical gradients stay bitwise identical") {
    Rng rng(7);
    Tensor a(Shape{8}), b(Shape{8});
    for (std::int64_t i = 0; i < 8; ++i) a[i] = b[i] = rng.uniform(-1.0, 1.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    AdamOptimizer oa({a}), ob({b});
    for (int step = 0; step < 20; ++step) {
      for (std::int64_t i = 0; i < 8; ++i) {
        const double g = rng.uniform(-1.0, 1.0);
        a.grad()[static_cast<std::size_t>(i)] = g;
        b.grad()[static_cast<std::size_t>(i)] = g;
      }
      oa.step(1e-3);
      ob.step(1e-3);
      CHECK(a.values() == b.values());
    }
  }
}

TEST_SUITE("train loop") {
  TEST_CASE("zero epochs returns the initialized model and no reports") {
    const ModelSpec spec = build_mrnet(2, 16, 0.0625);
    const SplitData data = const_samples(4, 16, 1, 2);
    TrainConfig config;
    config.epochs = 0;
    config.lr_drop_epoch = 0;
    config.seed = 9;
    const TrainResult result = train_on_data(spec, data, data, config);
    CHECK(result.reports.empty());
    const ModelInstance fresh = materialize(spec, 9);
    for (std::size_t i = 0; i < fresh.params.size(); ++i)
      CHECK(result.model.params[i].values() == fresh.params[i].values());
  }

  TEST_CASE("empty splits and label overflow are rejected before any step") {
    const ModelSpec spec = build_mrnet(2, 16, 0.0625);
    const SplitData data = const_samples(4, 16, 1, 2);
    SplitData empty;
    empty.x = Tensor(Shape{0, 3, 16, 16});
    TrainConfig config;
    config.epochs = 1;
    config.lr_drop_epoch = 1;
    CHECK_THROWS_WITH_AS(train_on_data(spec, empty, data, config), doctest::Contains("empty train"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(train_on_data(spec, data, empty, config), doctest::Contains("empty validation"),
                         std::invalid_argument);
    SplitData bad = const_samples(4, 16, 1, 2);
    bad.labels[2] = 7;
    CHECK_THROWS_WITH_AS(train_on_data(spec, bad, data, config), doctest::Contains("exceeds class count"),
                         std::invalid_argument);
  }

  TEST_CASE("loss decreases over repeated steps on one batch") {
    const ModelSpec spec = build_mrnet(2, 16, 0.0625);
    const SplitData data = const_samples(8, 16, 3, 2);
    TrainConfig config;
    config.epochs = 50;  // one batch per epoch -> 50 steps
    config.batch_size = 8;
    config.lr_drop_epoch = 50;
    config.seed = 3;
    const TrainResult result = train_on_data(spec, data, data, config);
    REQUIRE(result.reports.size() == 50);
    CHECK(result.reports.back().train_loss < result.reports.front().train_loss);
    CHECK(result.reports.back().train_loss < 0.8 * result.reports.front().train_loss);
  }

  TEST_CASE("same seed reproduces the report sequence bitwise") {
    const ModelSpec spec = build_mrnet(2, 16, 0.0625);
    const SplitData data = const_samples(6, 16, 4, 2);
    TrainConfig config;
    config.epochs = 3;
    config.batch_size = 4;
    config.lr_drop_epoch = 2;
    config.seed = 123;
    const TrainResult a = train_on_data(spec, data, data, config);
    const TrainResult b = train_on_data(spec, data, data, config);
    REQUIRE(a.reports.size() == b.reports.size());
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
      CHECK(a.reports[i].train_loss == b.reports[i].train_loss);
      CHECK(a.reports[i].val_accuracy == b.reports[i].val_accuracy);
      CHECK(a.reports[i].seconds > 0.0);
    }
    for (std::size_t i = 0; i < a.model.params.size(); ++i)
      CHECK(a.model.params[i].values() == b.model.params[i].values());
  }

  TEST_CASE("overfit oracle: mrnet-mini drives 8 samples below 0.01 in 200 steps") {
    const ModelSpec spec = build_mrnet(3, 16, 0.125);
    const SplitData data = const_samples(8, 16, 5, 3);
    TrainConfig config;
    config.epochs = 200;
    config.batch_size = 8;
    config.initial_lr = 1e-3;
    config.reduced_lr = 1e-3;
    config.lr_drop_epoch = 0;
    config.seed = 5;
    const TrainResult result = train_on_data(spec, data, data, config);
    double best = result.reports.front().train_loss;
    for (const auto& r : result.reports) best = std::min(best, r.train_loss);
    CHECK(best < 0.01);
  }
}
