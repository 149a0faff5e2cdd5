#include "mrnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mrnet/rng.hpp"

namespace mrnet {

namespace {

constexpr double kProbClamp = 1e-12;

[[noreturn]] void train_error(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) train_error("config: epochs must be nonnegative");
  if (!(reduced_lr > 0.0) || reduced_lr > initial_lr)
    train_error("config: need 0 < reduced_lr <= initial_lr");
  if (lr_drop_epoch < 0 || lr_drop_epoch > epochs) train_error("config: need 0 <= lr_drop_epoch <= epochs");
  if (batch_size < 1) train_error("config: batch size must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    train_error("config: Adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) train_error("config: Adam epsilon must be positive");
}

double lr_schedule(std::int64_t epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs)
    train_error("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  return epoch < config.lr_drop_epoch ? config.initial_lr : config.reduced_lr;
}

Tensor cross_entropy_loss(const Tensor& probs, const std::vector<std::int64_t>& labels, Tape* tape) {
  if (probs.rank() != 2) train_error("cross_entropy_loss: probs must be (B,n), got " + shape_str(probs.shape()));
  const std::int64_t B = probs.dim(0), n = probs.dim(1);
  if (B == 0) train_error("cross_entropy_loss: empty batch");
  if (static_cast<std::int64_t>(labels.size()) != B)
    train_error("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  for (std::int64_t b = 0; b < B; ++b)
    if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= n)
      train_error("cross_entropy_loss: label " + std::to_string(labels[static_cast<std::size_t>(b)]) +
                  " out of range [0, " + std::to_string(n) + ")");

  double acc = 0.0;
  const double* p = probs.data();
  for (std::int64_t b = 0; b < B; ++b)
    acc -= std::log(std::max(p[b * n + labels[static_cast<std::size_t>(b)]], kProbClamp));
  Tensor loss = Tensor::scalar(acc / static_cast<double>(B));

  if (tape && probs.requires_grad()) {
    loss.set_requires_grad(true);
    Tensor probs_t = probs, loss_t = loss;
    tape->record("cross_entropy_loss", [probs_t, loss_t, labels, B, n]() mutable {
      if (!loss_t.has_grad()) return;
      const double g = loss_t.grad()[0];
      const double* p = probs_t.data();
      double* gp = probs_t.grad().data();
      for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t i = b * n + labels[static_cast<std::size_t>(b)];
        // Inside the clamp region the loss is constant in p.
        if (p[i] > kProbClamp) gp[i] -= g / (static_cast<double>(B) * p[i]);
      }
    });
  }
  return loss;
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const double* g = p.has_grad() ? p.grad().data() : nullptr;
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* x = p.data();
    const std::int64_t nels = p.size();
    for (std::int64_t j = 0; j < nels; ++j) {
      const double gj = g ? g[j] : 0.0;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      x[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

SplitData load_split_data(const DatasetManifest& manifest, Split split, std::int64_t resolution) {
  const auto recs = manifest.of_split(split);
  SplitData out;
  out.x = Tensor(Shape{static_cast<std::int64_t>(recs.size()), 3, resolution, resolution});
  out.labels.reserve(recs.size());
  double* dst = out.x.data();
  const std::int64_t per = 3 * resolution * resolution;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    Tensor img = load_image(recs[i]->resolved_path);
    if (img.dim(1) != resolution || img.dim(2) != resolution) img = resize(img, resolution);
    std::memcpy(dst + static_cast<std::int64_t>(i) * per, img.data(), sizeof(double) * static_cast<std::size_t>(per));
    out.labels.push_back(recs[i]->label);
  }
  return out;
}

namespace {

Tensor slice_batch(const Tensor& x, const std::vector<std::size_t>& order, std::int64_t begin, std::int64_t end) {
  const std::int64_t per = x.size() / std::max<std::int64_t>(x.dim(0), 1);
  Tensor out(Shape{end - begin, x.dim(1), x.dim(2), x.dim(3)});
  for (std::int64_t i = begin; i < end; ++i) {
    const double* src = x.data() + static_cast<std::int64_t>(order[static_cast<std::size_t>(i)]) * per;
    std::memcpy(out.data() + (i - begin) * per, src, sizeof(double) * static_cast<std::size_t>(per));
  }
  return out;
}

}  // namespace

Tensor predict(const ModelInstance& model, const Tensor& x, std::int64_t batch_size) {
  const std::int64_t N = x.dim(0);
  Tensor probs(Shape{N, model.spec.classes});
  const std::int64_t per = 3 * model.spec.input_resolution * model.spec.input_resolution;
  for (std::int64_t begin = 0; begin < N; begin += batch_size) {
    const std::int64_t end = std::min(N, begin + batch_size);
    Tensor bx(Shape{end - begin, 3, model.spec.input_resolution, model.spec.input_resolution});
    std::memcpy(bx.data(), x.data() + begin * per, sizeof(double) * static_cast<std::size_t>((end - begin) * per));
    Tensor bp = forward(model, bx);
    std::memcpy(probs.data() + begin * model.spec.classes, bp.data(),
                sizeof(double) * static_cast<std::size_t>(bp.size()));
  }
  return probs;
}

std::vector<std::int64_t> argmax_rows(const Tensor& probs) {
  const std::int64_t N = probs.dim(0), n = probs.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) {
    const double* row = probs.data() + i * n;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double accuracy_of(const Tensor& probs, const std::vector<std::int64_t>& labels) {
  if (labels.empty()) return 0.0;
  const auto preds = argmax_rows(probs);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += (preds[i] == labels[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

TrainResult train_on_data(const ModelSpec& spec, const SplitData& train_split, const SplitData& val_split,
                          const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const std::int64_t n_train = train_split.x.dim(0);
  const std::int64_t n_val = val_split.x.dim(0);
  if (n_train == 0) train_error("train: empty train split");
  if (n_val == 0) train_error("train: empty validation split");
  for (std::int64_t l : train_split.labels)
    if (l < 0 || l >= spec.classes)
      train_error("train: label " + std::to_string(l) + " exceeds class count " + std::to_string(spec.classes));
  for (std::int64_t l : val_split.labels)
    if (l < 0 || l >= spec.classes)
      train_error("train: label " + std::to_string(l) + " exceeds class count " + std::to_string(spec.classes));

  TrainResult result;
  result.model = materialize(spec, config.seed);
  AdamOptimizer opt(result.model.params, config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng shuffle_rng = Rng(config.seed).fork(0x7261696eULL);

  std::vector<std::size_t> order(static_cast<std::size_t>(n_train));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::vector<double>> best_params;
  double best_acc = -1.0;

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, config);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::int64_t begin = 0; begin < n_train; begin += config.batch_size) {
      const std::int64_t end = std::min(n_train, begin + config.batch_size);
      Tensor bx = slice_batch(train_split.x, order, begin, end);
      std::vector<std::int64_t> by;
      by.reserve(static_cast<std::size_t>(end - begin));
      for (std::int64_t i = begin; i < end; ++i)
        by.push_back(train_split.labels[order[static_cast<std::size_t>(i)]]);

      Tape tape;
      Tensor probs = forward(result.model, bx, &tape);
      Tensor loss = cross_entropy_loss(probs, by, &tape);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(lr);
      loss_sum += loss[0] * static_cast<double>(end - begin);
    }

    const Tensor val_probs = predict(result.model, val_split.x);
    const double val_acc = accuracy_of(val_probs, val_split.labels);
    const auto t1 = std::chrono::steady_clock::now();

    EpochReport report;
    report.epoch = epoch;
    report.train_loss = loss_sum / static_cast<double>(n_train);
    report.val_accuracy = val_acc;
    report.seconds = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
    result.reports.push_back(report);
    if (on_epoch) on_epoch(report);

    if (val_acc > best_acc) {
      best_acc = val_acc;
      best_params.clear();
      for (const Tensor& p : result.model.params) best_params.push_back(p.values());
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < result.model.params.size(); ++i)
      result.model.params[i].values() = best_params[i];
  }
  double sec_sum = 0.0;
  for (const auto& r : result.reports) sec_sum += r.seconds;
  result.model.mean_epoch_seconds = result.reports.empty() ? 0.0 : sec_sum / static_cast<double>(result.reports.size());
  return result;
}

TrainResult train(const ModelSpec& spec, const DatasetManifest& manifest, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (manifest.count(Split::Train) == 0) train_error("train: manifest has an empty train split");
  if (manifest.count(Split::Validation) == 0) train_error("train: manifest has an empty validation split");
  for (const auto& r : manifest.records)
    if (r.label >= spec.classes)
      train_error("train: label " + std::to_string(r.label) + " exceeds class count " +
                  std::to_string(spec.classes));

  const SplitData tr = load_split_data(manifest, Split::Train, spec.input_resolution);
  const SplitData va = load_split_data(manifest, Split::Validation, spec.input_resolution);
  return train_on_data(spec, tr, va, config, on_epoch);
}

}  // namespace mrnet
