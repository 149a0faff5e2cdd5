#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrnet/ops.hpp"
#include "mrnet/tensor.hpp"

namespace mrnet {

enum class LayerKind {
  Conv,
  MaxPool,
  UpConv,
  Relu,
  Dense,
  Softmax,
  ConcatSkip,
  GlobalAvgPool,
  Flatten,
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind{};
  std::int64_t out_channels = 0;  // conv / upconv / dense
  std::int64_t kernel = 0;        // conv (square)
  std::int64_t stride = 1;        // conv
  std::int64_t padding = 0;       // conv
  std::int64_t dilation = 1;      // conv
  std::int64_t groups = 1;        // conv; == channels for depthwise
  std::int64_t skip_source = -1;  // concat-skip: index of an earlier layer
};

// Declarative ordered layer description. Input is (B, 3, R, R).
struct ModelSpec {
  std::string name;
  std::int64_t classes = 0;
  std::int64_t input_resolution = 0;
  double width_scale = 1.0;
  std::vector<LayerSpec> layers;
};

// Feature shape flowing between layers: spatial (c,h,w) or flat (features).
struct FeatureShape {
  bool spatial = true;
  std::int64_t c = 0, h = 0, w = 0;
  std::int64_t features = 0;
  std::string str() const;
};

// Symbolic shape inference over the layer list for the declared input
// resolution. Throws with the offending layer index on any inconsistency.
std::vector<FeatureShape> propagate_shapes(const ModelSpec& spec);

// The lunar-rock classifier: VGG16-style encoder (conv blocks of 2,2,3,3,3
// layers at widths 64,128,256,512,512 scaled), a hybrid dilated convolution
// block with rates 1,2,5 entering the decoding path, a four-stage U-Net
// decoder with skip concatenations, and a global-average-pool + dense head.
ModelSpec build_mrnet(std::int64_t classes, std::int64_t input_resolution, double width_scale);

// Comparison baselines: "alexnet-mini", "mobilenet-mini", "vgg16-mini".
ModelSpec build_baseline(const std::string& name, std::int64_t classes, std::int64_t input_resolution,
                         double width_scale);

// Dispatch on "mrnet" or any baseline name. Unknown names are rejected with
// the list of valid ones.
ModelSpec build_architecture(const std::string& name, std::int64_t classes, std::int64_t input_resolution,
                             double width_scale);

const std::vector<std::string>& architecture_names();

struct ModelInstance {
  ModelSpec spec;
  std::vector<std::string> param_names;
  std::vector<Tensor> params;
  std::uint64_t init_seed = 0;
  // Mean wall-clock seconds per epoch of the producing training run, if any;
  // carried so evaluation reports can show it.
  double mean_epoch_seconds = 0.0;
};

// He fan-in initialization for kernels and weights, zero biases. The same
// seed always produces bitwise-identical parameters.
ModelInstance materialize(const ModelSpec& spec, std::uint64_t seed);

// Runs the layer list on a (B,3,R,R) batch; inputs are channel-standardized
// with fixed constants first. Output rows are post-softmax distributions.
Tensor forward(const ModelInstance& model, const Tensor& batch, Tape* tape = nullptr);

std::int64_t param_count(const ModelSpec& spec);
std::int64_t param_count(const ModelInstance& model);

// Layer-by-layer listing with output shapes and parameter counts.
std::string summarize(const ModelSpec& spec);

void save_checkpoint(const ModelInstance& model, const std::filesystem::path& path);
ModelInstance load_checkpoint(const std::filesystem::path& path);

}  // namespace mrnet
