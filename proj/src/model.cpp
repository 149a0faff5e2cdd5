#include "mrnet/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mrnet/rng.hpp"

namespace mrnet {

namespace {

// Fixed input standardization constants (channel means/stds of natural RGB
// imagery on the [0,1] scale).
constexpr std::array<double, 3> kInputMean{0.485, 0.456, 0.406};
constexpr std::array<double, 3> kInputStd{0.229, 0.224, 0.225};

const std::map<LayerKind, std::string> kKindNames = {
    {LayerKind::Conv, "conv"},
    {LayerKind::MaxPool, "maxpool"},
    {LayerKind::UpConv, "upconv"},
    {LayerKind::Relu, "relu"},
    {LayerKind::Dense, "dense"},
    {LayerKind::Softmax, "softmax"},
    {LayerKind::ConcatSkip, "concat-skip"},
    {LayerKind::GlobalAvgPool, "global-avg-pool"},
    {LayerKind::Flatten, "flatten"},
};

[[noreturn]] void spec_error(const std::string& msg) { throw std::invalid_argument(msg); }

std::int64_t scaled_width(std::int64_t base, double scale) {
  const auto w = static_cast<std::int64_t>(std::ceil(static_cast<double>(base) * scale));
  return std::max<std::int64_t>(4, w);
}

}  // namespace

std::string layer_kind_name(LayerKind kind) { return kKindNames.at(kind); }

LayerKind layer_kind_from_name(const std::string& name) {
  for (const auto& [kind, n] : kKindNames) {
    if (n == name) return kind;
  }
  spec_error("unknown layer kind '" + name + "'");
}

std::string FeatureShape::str() const {
  std::ostringstream os;
  if (spatial)
    os << "(" << c << ", " << h << ", " << w << ")";
  else
    os << "(" << features << ")";
  return os.str();
}

std::vector<FeatureShape> propagate_shapes(const ModelSpec& spec) {
  if (spec.classes < 1) spec_error("model '" + spec.name + "': classes must be positive");
  if (spec.input_resolution < 1) spec_error("model '" + spec.name + "': input resolution must be positive");
  if (spec.width_scale <= 0.0) spec_error("model '" + spec.name + "': width scale must be positive");

  std::vector<FeatureShape> shapes;
  shapes.reserve(spec.layers.size());
  FeatureShape cur{true, 3, spec.input_resolution, spec.input_resolution, 0};

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        if (l.out_channels < 1) spec_error(where + ": channels must be positive");
        if (l.dilation < 1) spec_error(where + ": dilation must be positive");
        if (l.groups < 1 || cur.c % l.groups != 0 || l.out_channels % l.groups != 0)
          spec_error(where + ": groups " + std::to_string(l.groups) + " incompatible with channels " +
                     std::to_string(cur.c) + " -> " + std::to_string(l.out_channels));
        const std::int64_t eff = l.dilation * (l.kernel - 1) + 1;
        if (cur.h + 2 * l.padding < eff || cur.w + 2 * l.padding < eff)
          spec_error(where + ": spatial extent " + std::to_string(cur.h) + " too small for effective kernel extent " +
                     std::to_string(eff));
        cur.h = conv_out_extent(cur.h, l.kernel, l.stride, l.padding, l.dilation);
        cur.w = conv_out_extent(cur.w, l.kernel, l.stride, l.padding, l.dilation);
        cur.c = l.out_channels;
        break;
      }
      case LayerKind::MaxPool:
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        if (cur.h % 2 != 0 || cur.w % 2 != 0)
          spec_error(where + ": odd spatial extent " + std::to_string(cur.h) + "x" + std::to_string(cur.w));
        cur.h /= 2;
        cur.w /= 2;
        break;
      case LayerKind::UpConv:
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        if (l.out_channels < 1) spec_error(where + ": channels must be positive");
        cur.c = l.out_channels;
        cur.h *= 2;
        cur.w *= 2;
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Dense:
        if (cur.spatial) spec_error(where + ": needs a flat input (flatten or pool first)");
        if (l.out_channels < 1) spec_error(where + ": features must be positive");
        cur.features = l.out_channels;
        break;
      case LayerKind::Softmax:
        if (cur.spatial) spec_error(where + ": needs a flat input");
        break;
      case LayerKind::ConcatSkip: {
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        if (l.skip_source < 0 || l.skip_source >= static_cast<std::int64_t>(i))
          spec_error(where + ": skip source " + std::to_string(l.skip_source) + " is not an earlier layer");
        const FeatureShape& src = shapes[static_cast<std::size_t>(l.skip_source)];
        if (!src.spatial || src.h != cur.h || src.w != cur.w)
          spec_error(where + ": skip source shape " + src.str() + " does not match " + cur.str());
        cur.c += src.c;
        break;
      }
      case LayerKind::GlobalAvgPool:
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        cur = FeatureShape{false, 0, 0, 0, cur.c};
        break;
      case LayerKind::Flatten:
        if (!cur.spatial) spec_error(where + ": needs a spatial input");
        cur = FeatureShape{false, 0, 0, 0, cur.c * cur.h * cur.w};
        break;
    }
    shapes.push_back(cur);
  }

  if (shapes.empty()) spec_error("model '" + spec.name + "': no layers");
  const FeatureShape& last = shapes.back();
  if (last.spatial || last.features != spec.classes)
    spec_error("model '" + spec.name + "': final layer produces " + last.str() + ", expected (" +
               std::to_string(spec.classes) + ") logits");
  return shapes;
}

namespace {

struct Builder {
  ModelSpec spec;
  std::int64_t channels = 3;

  std::int64_t conv(std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                    std::int64_t dilation = 1, std::int64_t groups = 1) {
    spec.layers.push_back({LayerKind::Conv, out, kernel, stride, padding, dilation, groups, -1});
    channels = out;
    return static_cast<std::int64_t>(spec.layers.size()) - 1;
  }
  std::int64_t relu() {
    spec.layers.push_back({LayerKind::Relu});
    return static_cast<std::int64_t>(spec.layers.size()) - 1;
  }
  std::int64_t conv_relu(std::int64_t out, std::int64_t dilation = 1) {
    conv(out, 3, 1, dilation, dilation);
    return relu();
  }
  void maxpool() { spec.layers.push_back({LayerKind::MaxPool}); }
  void upconv(std::int64_t out) {
    spec.layers.push_back({LayerKind::UpConv, out});
    channels = out;
  }
  void concat(std::int64_t source, std::int64_t source_channels) {
    LayerSpec l{LayerKind::ConcatSkip};
    l.skip_source = source;
    spec.layers.push_back(l);
    channels += source_channels;
  }
  void dense(std::int64_t out) { spec.layers.push_back({LayerKind::Dense, out}); }
  void softmax() { spec.layers.push_back({LayerKind::Softmax}); }
  void gap() { spec.layers.push_back({LayerKind::GlobalAvgPool}); }
  void flatten() { spec.layers.push_back({LayerKind::Flatten}); }

  // Depthwise 3x3 (optionally strided) followed by pointwise 1x1, both with
  // activations.
  void separable(std::int64_t out, std::int64_t stride) {
    conv(channels, 3, stride, 1, 1, channels);
    relu();
    conv(out, 1, 1, 0);
    relu();
  }
};

// Emits the VGG16-style feature extractor shared by mrnet and vgg16-mini:
// conv blocks of (2,2,3,3,3) 3x3+ReLU layers at widths (64,128,256,512,512)
// scaled, pooling after the first four blocks. Returns the layer index of
// each block's final activation (the skip sources).
std::array<std::int64_t, 4> emit_encoder(Builder& b, double scale) {
  std::array<std::int64_t, 4> skips{};
  const std::int64_t depths[5] = {2, 2, 3, 3, 3};
  const std::int64_t bases[5] = {64, 128, 256, 512, 512};
  for (int blk = 0; blk < 5; ++blk) {
    const std::int64_t w = scaled_width(bases[blk], scale);
    std::int64_t last = -1;
    for (std::int64_t i = 0; i < depths[blk]; ++i) last = b.conv_relu(w);
    if (blk < 4) {
      skips[static_cast<std::size_t>(blk)] = last;
      b.maxpool();
    }
  }
  return skips;
}

}  // namespace

ModelSpec build_mrnet(std::int64_t classes, std::int64_t input_resolution, double width_scale) {
  if (classes < 1) spec_error("mrnet: classes must be positive");
  if (input_resolution < 16 || input_resolution % 16 != 0)
    spec_error("mrnet: input resolution " + std::to_string(input_resolution) +
               " is not divisible by 16 (four 2x downsamplings)");

  Builder b;
  b.spec.name = "mrnet";
  b.spec.classes = classes;
  b.spec.input_resolution = input_resolution;
  b.spec.width_scale = width_scale;

  const auto skips = emit_encoder(b, width_scale);
  const std::int64_t w512 = scaled_width(512, width_scale);

  // Hybrid dilated convolutions at the head of the decoding path; the rate
  // stack (1,2,5) tiles the receptive field without gridding gaps.
  for (std::int64_t rate : {std::int64_t{1}, std::int64_t{2}, std::int64_t{5}}) b.conv_relu(w512, rate);

  const std::int64_t widths[4] = {scaled_width(512, width_scale), scaled_width(256, width_scale),
                                  scaled_width(128, width_scale), scaled_width(64, width_scale)};
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t w = widths[stage];
    const std::int64_t skip = skips[static_cast<std::size_t>(3 - stage)];
    b.upconv(w);
    b.concat(skip, w);
    b.conv_relu(w);
    b.conv_relu(w);
  }

  b.gap();
  b.dense(classes);
  b.softmax();

  propagate_shapes(b.spec);
  return b.spec;
}

namespace {

ModelSpec build_vgg16_mini(std::int64_t classes, std::int64_t input_resolution, double width_scale) {
  if (input_resolution < 16 || input_resolution % 16 != 0)
    spec_error("vgg16-mini: input resolution " + std::to_string(input_resolution) + " is not divisible by 16");
  Builder b;
  b.spec.name = "vgg16-mini";
  b.spec.classes = classes;
  b.spec.input_resolution = input_resolution;
  b.spec.width_scale = width_scale;
  emit_encoder(b, width_scale);
  b.flatten();
  b.dense(classes);
  b.softmax();
  propagate_shapes(b.spec);
  return b.spec;
}

ModelSpec build_alexnet_mini(std::int64_t classes, std::int64_t input_resolution, double width_scale) {
  if (input_resolution < 32 || input_resolution % 32 != 0)
    spec_error("alexnet-mini: input resolution " + std::to_string(input_resolution) + " is not divisible by 32");
  Builder b;
  b.spec.name = "alexnet-mini";
  b.spec.classes = classes;
  b.spec.input_resolution = input_resolution;
  b.spec.width_scale = width_scale;

  b.conv(scaled_width(96, width_scale), 11, 4, 5);
  b.relu();
  b.maxpool();
  b.conv(scaled_width(256, width_scale), 5, 1, 2);
  b.relu();
  b.maxpool();
  b.conv(scaled_width(384, width_scale), 3, 1, 1);
  b.relu();
  b.conv(scaled_width(384, width_scale), 3, 1, 1);
  b.relu();
  b.conv(scaled_width(256, width_scale), 3, 1, 1);
  b.relu();
  b.maxpool();
  b.flatten();
  const std::int64_t hidden = scaled_width(1024, width_scale);
  b.dense(hidden);
  b.relu();
  b.dense(hidden);
  b.relu();
  b.dense(classes);
  b.softmax();
  propagate_shapes(b.spec);
  return b.spec;
}

ModelSpec build_mobilenet_mini(std::int64_t classes, std::int64_t input_resolution, double width_scale) {
  if (input_resolution < 32 || input_resolution % 32 != 0)
    spec_error("mobilenet-mini: input resolution " + std::to_string(input_resolution) + " is not divisible by 32");
  Builder b;
  b.spec.name = "mobilenet-mini";
  b.spec.classes = classes;
  b.spec.input_resolution = input_resolution;
  b.spec.width_scale = width_scale;

  auto w = [&](std::int64_t base) { return scaled_width(base, width_scale); };
  b.conv(w(32), 3, 2, 1);
  b.relu();
  b.separable(w(64), 1);
  b.separable(w(128), 2);
  b.separable(w(128), 1);
  b.separable(w(256), 2);
  b.separable(w(256), 1);
  b.separable(w(512), 2);
  for (int i = 0; i < 5; ++i) b.separable(w(512), 1);
  b.separable(w(1024), 2);
  b.separable(w(1024), 1);
  b.gap();
  b.dense(classes);
  b.softmax();
  propagate_shapes(b.spec);
  return b.spec;
}

}  // namespace

const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names = {"mrnet", "alexnet-mini", "mobilenet-mini", "vgg16-mini"};
  return names;
}

ModelSpec build_baseline(const std::string& name, std::int64_t classes, std::int64_t input_resolution,
                         double width_scale) {
  if (classes < 1) spec_error(name + ": classes must be positive");
  if (name == "alexnet-mini") return build_alexnet_mini(classes, input_resolution, width_scale);
  if (name == "mobilenet-mini") return build_mobilenet_mini(classes, input_resolution, width_scale);
  if (name == "vgg16-mini") return build_vgg16_mini(classes, input_resolution, width_scale);
  spec_error("unknown baseline '" + name + "'; valid names: alexnet-mini, mobilenet-mini, vgg16-mini");
}

ModelSpec build_architecture(const std::string& name, std::int64_t classes, std::int64_t input_resolution,
                             double width_scale) {
  if (name == "mrnet") return build_mrnet(classes, input_resolution, width_scale);
  for (const auto& n : architecture_names()) {
    if (name == n) return build_baseline(name, classes, input_resolution, width_scale);
  }
  std::string valid;
  for (const auto& n : architecture_names()) valid += (valid.empty() ? "" : ", ") + n;
  spec_error("unknown architecture '" + name + "'; valid names: " + valid);
}

namespace {

std::string param_prefix(std::size_t layer_idx, LayerKind kind) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02zu.%s", layer_idx, layer_kind_name(kind).c_str());
  return buf;
}

}  // namespace

ModelInstance materialize(const ModelSpec& spec, std::uint64_t seed) {
  const auto shapes = propagate_shapes(spec);
  ModelInstance m;
  m.spec = spec;
  m.init_seed = seed;
  Rng rng(seed);

  auto he_fill = [&](Tensor& t, std::int64_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.normal() * sd;
  };
  auto add_param = [&](const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    m.param_names.push_back(name);
    m.params.push_back(std::move(t));
  };

  FeatureShape in{true, 3, spec.input_resolution, spec.input_resolution, 0};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv: {
        const std::int64_t cin_g = in.c / l.groups;
        Tensor k(Shape{l.out_channels, cin_g, l.kernel, l.kernel});
        he_fill(k, cin_g * l.kernel * l.kernel);
        add_param(param_prefix(i, l.kind) + ".kernel", std::move(k));
        add_param(param_prefix(i, l.kind) + ".bias", Tensor(Shape{l.out_channels}));
        break;
      }
      case LayerKind::UpConv: {
        Tensor k(Shape{in.c, l.out_channels, 2, 2});
        // Stride-2 2x2 transposed conv: each output element receives exactly
        // one tap per input channel.
        he_fill(k, in.c);
        add_param(param_prefix(i, l.kind) + ".kernel", std::move(k));
        break;
      }
      case LayerKind::Dense: {
        Tensor w(Shape{in.features, l.out_channels});
        he_fill(w, in.features);
        add_param(param_prefix(i, l.kind) + ".weight", std::move(w));
        add_param(param_prefix(i, l.kind) + ".bias", Tensor(Shape{l.out_channels}));
        break;
      }
      default:
        break;
    }
    in = shapes[i];
  }
  return m;
}

Tensor forward(const ModelInstance& model, const Tensor& batch, Tape* tape) {
  if (batch.rank() != 4 || batch.dim(1) != 3)
    spec_error("forward: batch must be (B,3,R,R), got " + shape_str(batch.shape()));
  const std::int64_t R = model.spec.input_resolution;
  if (batch.dim(2) != R || batch.dim(3) != R)
    spec_error("forward: batch resolution " + std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)) +
               " does not match model resolution " + std::to_string(R));
  if (batch.dim(0) == 0) return Tensor(Shape{0, model.spec.classes});

  Tensor cur = standardize(batch, kInputMean, kInputStd, tape);
  std::vector<Tensor> outputs;
  outputs.reserve(model.spec.layers.size());
  std::size_t pi = 0;
  auto next_param = [&]() -> const Tensor& { return model.params[pi++]; };

  for (const LayerSpec& l : model.spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        const Tensor& k = next_param();
        const Tensor& b = next_param();
        cur = conv2d(cur, k, b, {.stride = l.stride, .padding = l.padding, .dilation = l.dilation, .groups = l.groups},
                     tape);
        break;
      }
      case LayerKind::MaxPool:
        cur = maxpool2d(cur, tape);
        break;
      case LayerKind::UpConv:
        cur = upconv2x(cur, next_param(), tape);
        break;
      case LayerKind::Relu:
        cur = relu(cur, tape);
        break;
      case LayerKind::Dense: {
        const Tensor& w = next_param();
        const Tensor& b = next_param();
        cur = dense(cur, w, b, tape);
        break;
      }
      case LayerKind::Softmax:
        cur = softmax(cur, tape);
        break;
      case LayerKind::ConcatSkip:
        cur = concat_channels(cur, outputs[static_cast<std::size_t>(l.skip_source)], tape);
        break;
      case LayerKind::GlobalAvgPool:
        cur = global_avg_pool(cur, tape);
        break;
      case LayerKind::Flatten:
        cur = flatten2d(cur, tape);
        break;
    }
    outputs.push_back(cur);
  }
  return cur;
}

std::int64_t param_count(const ModelSpec& spec) {
  std::int64_t total = 0;
  FeatureShape in{true, 3, spec.input_resolution, spec.input_resolution, 0};
  const auto shapes = propagate_shapes(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        total += l.out_channels * (in.c / l.groups) * l.kernel * l.kernel + l.out_channels;
        break;
      case LayerKind::UpConv:
        total += in.c * l.out_channels * 4;
        break;
      case LayerKind::Dense:
        total += in.features * l.out_channels + l.out_channels;
        break;
      default:
        break;
    }
    in = shapes[i];
  }
  return total;
}

std::int64_t param_count(const ModelInstance& model) {
  std::int64_t total = 0;
  for (const Tensor& p : model.params) total += p.size();
  return total;
}

std::string summarize(const ModelSpec& spec) {
  const auto shapes = propagate_shapes(spec);
  std::ostringstream os;
  os << spec.name << " (classes=" << spec.classes << ", resolution=" << spec.input_resolution
     << ", width_scale=" << spec.width_scale << ")\n";
  FeatureShape in{true, 3, spec.input_resolution, spec.input_resolution, 0};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::int64_t params = 0;
    std::ostringstream detail;
    detail << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        detail << " " << in.c << "->" << l.out_channels << " k" << l.kernel << " s" << l.stride << " p" << l.padding;
        if (l.dilation != 1) detail << " d" << l.dilation;
        if (l.groups != 1) detail << " g" << l.groups;
        params = l.out_channels * (in.c / l.groups) * l.kernel * l.kernel + l.out_channels;
        break;
      case LayerKind::UpConv:
        detail << " " << in.c << "->" << l.out_channels;
        params = in.c * l.out_channels * 4;
        break;
      case LayerKind::Dense:
        detail << " " << in.features << "->" << l.out_channels;
        params = in.features * l.out_channels + l.out_channels;
        break;
      case LayerKind::ConcatSkip:
        detail << " <- layer " << l.skip_source;
        break;
      default:
        break;
    }
    char line[128];
    std::snprintf(line, sizeof(line), "%3zu  %-28s %-16s %12lld\n", i, detail.str().c_str(), shapes[i].str().c_str(),
                  static_cast<long long>(params));
    os << line;
    in = shapes[i];
  }
  os << "total parameters: " << param_count(spec) << "\n";
  return os.str();
}

namespace {

constexpr const char* kCheckpointMagic = "mrnet-checkpoint 1";

nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::Conv:
      j["channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["dilation"] = l.dilation;
      j["groups"] = l.groups;
      break;
    case LayerKind::UpConv:
    case LayerKind::Dense:
      j["channels"] = l.out_channels;
      break;
    case LayerKind::ConcatSkip:
      j["source"] = l.skip_source;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::Conv:
      l.out_channels = j.at("channels").get<std::int64_t>();
      l.kernel = j.at("kernel").get<std::int64_t>();
      l.stride = j.at("stride").get<std::int64_t>();
      l.padding = j.at("padding").get<std::int64_t>();
      l.dilation = j.at("dilation").get<std::int64_t>();
      l.groups = j.at("groups").get<std::int64_t>();
      break;
    case LayerKind::UpConv:
    case LayerKind::Dense:
      l.out_channels = j.at("channels").get<std::int64_t>();
      break;
    case LayerKind::ConcatSkip:
      l.skip_source = j.at("source").get<std::int64_t>();
      break;
    default:
      break;
  }
  return l;
}

[[noreturn]] void ckpt_error(const std::filesystem::path& path, const std::string& msg) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + msg);
}

}  // namespace

void save_checkpoint(const ModelInstance& model, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  nlohmann::json header;
  header["format_version"] = 1;
  header["name"] = model.spec.name;
  header["classes"] = model.spec.classes;
  header["input_resolution"] = model.spec.input_resolution;
  header["width_scale"] = model.spec.width_scale;
  header["element_type"] = "f64";
  header["init_seed"] = model.init_seed;
  header["mean_epoch_seconds"] = model.mean_epoch_seconds;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : model.spec.layers) layers.push_back(layer_to_json(l));
  header["layers"] = layers;
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    nlohmann::json p;
    p["name"] = model.param_names[i];
    p["shape"] = model.params[i].shape();
    params.push_back(p);
  }
  header["parameters"] = params;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) ckpt_error(path, "cannot open for writing");
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const Tensor& p : model.params) {
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  out.flush();
  if (!out) ckpt_error(path, "write failed");
}

ModelInstance load_checkpoint(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ifstream in(path, std::ios::binary);
  if (!in) ckpt_error(path, "cannot open");
  std::string magic, header_line;
  if (!std::getline(in, magic)) ckpt_error(path, "missing header");
  if (magic != kCheckpointMagic) ckpt_error(path, "bad magic or unsupported format version '" + magic + "'");
  if (!std::getline(in, header_line)) ckpt_error(path, "missing header json");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    ckpt_error(path, std::string("corrupt header: ") + e.what());
  }

  ModelInstance m;
  try {
    if (header.at("format_version").get<int>() != 1) ckpt_error(path, "unsupported format version");
    if (header.at("element_type").get<std::string>() != "f64") ckpt_error(path, "unsupported element type");
    m.spec.name = header.at("name").get<std::string>();
    m.spec.classes = header.at("classes").get<std::int64_t>();
    m.spec.input_resolution = header.at("input_resolution").get<std::int64_t>();
    m.spec.width_scale = header.at("width_scale").get<double>();
    m.init_seed = header.at("init_seed").get<std::uint64_t>();
    m.mean_epoch_seconds = header.at("mean_epoch_seconds").get<double>();
    for (const auto& jl : header.at("layers")) m.spec.layers.push_back(layer_from_json(jl));

    // Structural validation before any buffer is touched.
    ModelInstance ref = materialize(m.spec, 0);
    const auto& jparams = header.at("parameters");
    if (jparams.size() != ref.params.size()) ckpt_error(path, "parameter count does not match layer description");
    for (std::size_t i = 0; i < ref.params.size(); ++i) {
      const auto& jp = jparams[i];
      if (jp.at("name").get<std::string>() != ref.param_names[i]) ckpt_error(path, "parameter name mismatch");
      if (jp.at("shape").get<Shape>() != ref.params[i].shape()) ckpt_error(path, "parameter shape mismatch");
    }
    m.param_names = std::move(ref.param_names);
    m.params = std::move(ref.params);
  } catch (const nlohmann::json::exception& e) {
    ckpt_error(path, std::string("corrupt header: ") + e.what());
  }

  for (Tensor& p : m.params) {
    in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(p.size() * sizeof(double)))
      ckpt_error(path, "truncated parameter data");
  }
  char extra;
  if (in.read(&extra, 1) && in.gcount() == 1) ckpt_error(path, "trailing data after parameters");
  return m;
}

}  // namespace mrnet
