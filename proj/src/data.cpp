#include "mrnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mrnet/png_io.hpp"
#include "mrnet/rng.hpp"

namespace mrnet {

namespace {

[[noreturn]] void data_error(const std::string& msg) { throw std::runtime_error(msg); }

void check_csv_field(const std::string& field) {
  if (field.find(',') != std::string::npos || field.find('\n') != std::string::npos)
    data_error("manifest field contains a comma or newline: '" + field + "'");
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  data_error("unknown split '" + name + "'");
}

std::int64_t DatasetManifest::count(Split s) const {
  std::int64_t n = 0;
  for (const auto& r : records) n += (r.split == s) ? 1 : 0;
  return n;
}

std::vector<const ManifestRecord*> DatasetManifest::of_split(Split s) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) data_error("manifest " + path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) data_error("manifest " + path.string() + ": empty file");
  if (line != "path,label_index,label_name,split")
    data_error("manifest " + path.string() + ": unexpected header '" + line + "'");

  DatasetManifest m;
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";
  std::map<std::int64_t, std::string> names;
  std::set<std::string> seen_paths;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string p, idx, name, sp;
    if (!std::getline(ss, p, ',') || !std::getline(ss, idx, ',') || !std::getline(ss, name, ',') ||
        !std::getline(ss, sp))
      data_error("manifest " + path.string() + ": malformed record at line " + std::to_string(lineno));
    ManifestRecord r;
    r.path = p;
    std::filesystem::path fp(p);
    r.resolved_path = fp.is_absolute() ? fp : base / fp;
    r.label = std::stoll(idx);
    r.label_name = name;
    r.split = split_from_name(sp);
    if (r.label < 0) data_error("manifest " + path.string() + ": negative label at line " + std::to_string(lineno));
    if (!seen_paths.insert(p).second)
      data_error("manifest " + path.string() + ": duplicate path '" + p + "'");
    auto [it, inserted] = names.emplace(r.label, r.label_name);
    if (!inserted && it->second != r.label_name)
      data_error("manifest " + path.string() + ": label " + idx + " has conflicting names");
    m.records.push_back(std::move(r));
  }

  const auto n = static_cast<std::int64_t>(names.size());
  for (std::int64_t i = 0; i < n; ++i) {
    auto it = names.find(i);
    if (it == names.end())
      data_error("manifest " + path.string() + ": label indices are not dense (missing " + std::to_string(i) + ")");
    m.class_names.push_back(it->second);
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) data_error("manifest " + path.string() + ": cannot open for writing");
  out << "path,label_index,label_name,split\n";
  for (const auto& r : manifest.records) {
    check_csv_field(r.path);
    check_csv_field(r.label_name);
    out << r.path << ',' << r.label << ',' << r.label_name << ',' << split_name(r.split) << '\n';
  }
  if (!out) data_error("manifest " + path.string() + ": write failed");
}

DatasetManifest split_dataset(std::vector<ManifestRecord> records, std::vector<std::string> class_names,
                              const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.validation <= 0.0 || ratios.test <= 0.0)
    data_error("split: ratios must be positive");
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    data_error("split: ratios must sum to 1");

  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);

  Rng rng(seed);
  for (auto& [label, idxs] : by_class) {
    rng.shuffle(idxs);
    const auto n = static_cast<std::int64_t>(idxs.size());
    // Floor allocation with a tiny nudge so exact fractions like 1/7 of 140
    // land on their true integer value; the remainder goes to train.
    const auto n_val = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * ratios.validation + 1e-9));
    const auto n_test = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * ratios.test + 1e-9));
    const std::int64_t n_train = n - n_val - n_test;
    if (n_train < 1 || n_val < 1 || n_test < 1)
      data_error("split: class " + std::to_string(label) + " has only " + std::to_string(n) +
                 " items, too few to populate every split");
    for (std::int64_t i = 0; i < n; ++i) {
      Split s = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Validation : Split::Test);
      records[idxs[static_cast<std::size_t>(i)]].split = s;
    }
  }

  DatasetManifest m;
  m.records = std::move(records);
  m.class_names = std::move(class_names);
  return m;
}

Tensor load_image(const std::filesystem::path& path) {
  const PngImage png = read_png(path);
  const std::int64_t H = png.height, W = png.width;
  Tensor t(Shape{3, H, W});
  double* d = t.data();
  const std::uint8_t* src = png.pixels.data();
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < 3; ++c) d[(c * H + y) * W + x] = src[(y * W + x) * 3 + c] / 255.0;
  return t;
}

void save_image(const Tensor& img, const std::filesystem::path& path) {
  if (img.rank() != 3 || img.dim(0) != 3)
    data_error("save_image: expected a (3,H,W) tensor, got " + shape_str(img.shape()));
  const std::int64_t H = img.dim(1), W = img.dim(2);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(H * W * 3));
  const double* d = img.data();
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(d[(c * H + y) * W + x], 0.0, 1.0);
        bytes[static_cast<std::size_t>((y * W + x) * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  write_png_rgb8(path, H, W, bytes);
}

Tensor resize(const Tensor& img, std::int64_t target) {
  if (img.rank() != 3) data_error("resize: expected a (C,H,W) tensor, got " + shape_str(img.shape()));
  if (target < 1) data_error("resize: target must be positive");
  const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (H == target && W == target) return img.clone();

  Tensor out(Shape{C, target, target});
  const double* in = img.data();
  double* o = out.data();
  const double sy = static_cast<double>(H) / static_cast<double>(target);
  const double sx = static_cast<double>(W) / static_cast<double>(target);
  for (std::int64_t c = 0; c < C; ++c) {
    const double* plane = in + c * H * W;
    for (std::int64_t ty = 0; ty < target; ++ty) {
      const double fy = std::clamp((ty + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
      const auto y0 = static_cast<std::int64_t>(fy);
      const std::int64_t y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::int64_t tx = 0; tx < target; ++tx) {
        const double fx = std::clamp((tx + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
        const auto x0 = static_cast<std::int64_t>(fx);
        const std::int64_t x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = plane[y0 * W + x0] * (1.0 - wx) + plane[y0 * W + x1] * wx;
        const double bot = plane[y1 * W + x0] * (1.0 - wx) + plane[y1 * W + x1] * wx;
        o[(c * target + ty) * target + tx] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

std::vector<TextureParams> SyntheticSpec::resolved_textures() const {
  if (!textures.empty()) return textures;
  std::vector<TextureParams> out;
  const double cap = static_cast<double>(resolution) / 3.0;
  for (std::int64_t k = 0; k < classes; ++k) {
    TextureParams p;
    p.base_frequency = std::min(4.0 * std::pow(2.2, static_cast<double>(k)), cap);
    p.orientation = static_cast<double>(k) * 3.14159265358979323846 / static_cast<double>(classes);
    p.noise_amplitude = 0.05;
    out.push_back(p);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (classes < 1) data_error("synthetic: classes must be positive");
  if (per_class < 1) data_error("synthetic: per-class count must be positive");
  if (resolution < 8) data_error("synthetic: resolution must be at least 8");
  const auto tex = resolved_textures();
  if (static_cast<std::int64_t>(tex.size()) != classes)
    data_error("synthetic: need one texture parameter set per class");
  for (std::size_t i = 0; i < tex.size(); ++i)
    for (std::size_t j = i + 1; j < tex.size(); ++j)
      if (tex[i].base_frequency == tex[j].base_frequency && tex[i].orientation == tex[j].orientation &&
          tex[i].noise_amplitude == tex[j].noise_amplitude)
        data_error("synthetic: texture parameters for classes " + std::to_string(i) + " and " + std::to_string(j) +
                   " are identical");
}

Tensor synth_texture(const TextureParams& params, std::int64_t resolution, std::uint64_t image_seed) {
  const std::int64_t R = resolution;
  Rng rng(image_seed);

  // Sum of random-phase sinusoids drawn from a narrow annulus/sector around
  // (base_frequency, orientation): band-limited oriented noise.
  constexpr int kComponents = 12;
  struct Component {
    double kx, ky, phase;
  };
  std::array<Component, kComponents> comps;
  for (auto& c : comps) {
    const double f = params.base_frequency * rng.uniform(0.8, 1.2);
    const double a = params.orientation + rng.uniform(-0.26, 0.26);
    const double two_pi = 2.0 * 3.14159265358979323846;
    c.kx = two_pi * f * std::cos(a) / static_cast<double>(R);
    c.ky = two_pi * f * std::sin(a) / static_cast<double>(R);
    c.phase = two_pi * rng.uniform();
  }
  const double scale = 0.30 / std::sqrt(static_cast<double>(kComponents) / 2.0);

  Tensor img(Shape{3, R, R});
  double* d = img.data();
  std::vector<double> base(static_cast<std::size_t>(R * R));
  for (std::int64_t y = 0; y < R; ++y)
    for (std::int64_t x = 0; x < R; ++x) {
      double v = 0.0;
      for (const auto& c : comps) v += std::sin(c.kx * x + c.ky * y + c.phase);
      base[static_cast<std::size_t>(y * R + x)] = 0.5 + scale * v;
    }
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < R * R; ++i) {
      const double noise = params.noise_amplitude * rng.uniform(-1.0, 1.0);
      d[c * R * R + i] = std::clamp(base[static_cast<std::size_t>(i)] + noise, 0.0, 1.0);
    }
  return img;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                   const SplitRatios& ratios) {
  spec.validate();
  const auto textures = spec.resolved_textures();

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "images"))
    data_error("synthetic: cannot create output directory " + (out_dir / "images").string());

  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  for (std::int64_t k = 0; k < spec.classes; ++k) {
    const std::string cname = "class" + std::to_string(k);
    class_names.push_back(cname);
    std::filesystem::create_directories(out_dir / "images" / cname, ec);
    if (ec) data_error("synthetic: cannot create class directory");
    for (std::int64_t i = 0; i < spec.per_class; ++i) {
      const std::uint64_t image_seed =
          Rng(spec.seed).fork(static_cast<std::uint64_t>(k) * 1000003ULL + static_cast<std::uint64_t>(i)).next_u64();
      Tensor img = synth_texture(textures[static_cast<std::size_t>(k)], spec.resolution, image_seed);
      char fname[64];
      std::snprintf(fname, sizeof(fname), "img_%03lld.png", static_cast<long long>(i));
      const std::filesystem::path rel = std::filesystem::path("images") / cname / fname;
      save_image(img, out_dir / rel);
      ManifestRecord r;
      r.path = rel.generic_string();
      r.resolved_path = out_dir / rel;
      r.label = k;
      r.label_name = cname;
      records.push_back(std::move(r));
    }
  }

  DatasetManifest manifest = split_dataset(std::move(records), std::move(class_names), ratios, spec.seed);
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

}  // namespace mrnet
