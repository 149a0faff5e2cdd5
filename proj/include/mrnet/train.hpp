#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrnet/data.hpp"
#include "mrnet/model.hpp"
#include "mrnet/tensor.hpp"

namespace mrnet {

struct TrainConfig {
  std::int64_t epochs = 10;
  double initial_lr = 1e-4;
  double reduced_lr = 1e-5;
  std::int64_t lr_drop_epoch = 5;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Step schedule: initial_lr before lr_drop_epoch, reduced_lr from it on.
double lr_schedule(std::int64_t epoch, const TrainConfig& config);

// Mean over the batch of -log(p[label]); probabilities are clamped below at
// 1e-12 before the log, so a zero probability yields a large finite loss.
Tensor cross_entropy_loss(const Tensor& probs, const std::vector<std::int64_t>& labels, Tape* tape = nullptr);

// Bias-corrected Adam over a fixed parameter list. Moment buffers mirror the
// parameter shapes; the step counter is global.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the parameters' current gradients.
  void step(double lr);
  void zero_grad();
  std::int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct EpochReport {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelInstance model;  // parameters of the best validation-accuracy epoch
  std::vector<EpochReport> reports;
};

using EpochCallback = std::function<void(const EpochReport&)>;

// In-memory split ready for the step loop.
struct SplitData {
  Tensor x;  // (N,3,R,R)
  std::vector<std::int64_t> labels;
};

SplitData load_split_data(const DatasetManifest& manifest, Split split, std::int64_t resolution);

// Class probabilities (N, classes) for a whole split, evaluated in
// inference mode batch by batch.
Tensor predict(const ModelInstance& model, const Tensor& x, std::int64_t batch_size = 32);

std::vector<std::int64_t> argmax_rows(const Tensor& probs);

double accuracy_of(const Tensor& probs, const std::vector<std::int64_t>& labels);

// The full recipe: per-epoch seeded shuffling, Adam steps on cross-entropy,
// validation accuracy after each epoch, best-epoch parameter retention.
TrainResult train(const ModelSpec& spec, const DatasetManifest& manifest, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Same loop over data already in memory (used by tests and the overfit
// oracle); validation may alias the training data.
TrainResult train_on_data(const ModelSpec& spec, const SplitData& train_split, const SplitData& val_split,
                          const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace mrnet
