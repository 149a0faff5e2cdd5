#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrnet/tensor.hpp"

namespace mrnet {

enum class Split { Train, Validation, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestRecord {
  std::string path;  // as stored in the manifest file (usually relative)
  std::filesystem::path resolved_path;
  std::int64_t label = 0;
  std::string label_name;
  Split split = Split::Train;
};

// List of (image, label, split) records; the dataset abstraction for both
// generated corpora and user-supplied ones.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;

  std::int64_t n_classes() const { return static_cast<std::int64_t>(class_names.size()); }
  std::int64_t count(Split s) const;
  std::vector<const ManifestRecord*> of_split(Split s) const;
};

// File format: header line "path,label_index,label_name,split" followed by
// one CSV record per image. Paths are stored relative to the manifest file.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

// Stratified per-class shuffle and assignment. Within each class the
// validation and test sizes are floor allocations of the ratios; the
// remainder goes to train. Deterministic for fixed (records, ratios, seed).
DatasetManifest split_dataset(std::vector<ManifestRecord> records, std::vector<std::string> class_names,
                              const SplitRatios& ratios, std::uint64_t seed);

// Decodes an 8-bit RGB PNG to a (3,H,W) tensor with values byte/255.
Tensor load_image(const std::filesystem::path& path);

// Encodes a (3,H,W) tensor in [0,1] to an 8-bit RGB PNG (values are clamped
// and rounded to bytes).
void save_image(const Tensor& img, const std::filesystem::path& path);

// Bilinear rescale of (3,H,W) to (3,target,target).
Tensor resize(const Tensor& img, std::int64_t target);

struct TextureParams {
  double base_frequency = 0.0;  // cycles per image edge
  double orientation = 0.0;     // radians
  double noise_amplitude = 0.0;
};

// Seeded stand-in corpus: each class is an oriented band-limited noise
// texture, pairwise distinct across classes.
struct SyntheticSpec {
  std::int64_t classes = 3;
  std::int64_t per_class = 100;
  std::int64_t resolution = 64;
  std::uint64_t seed = 0;
  std::vector<TextureParams> textures;  // empty -> defaults for `classes`

  std::vector<TextureParams> resolved_textures() const;
  void validate() const;
};

// Renders one texture image (3,R,R) for a class; exposed for tests.
Tensor synth_texture(const TextureParams& params, std::int64_t resolution, std::uint64_t image_seed);

// Writes classes x per_class PNGs under out_dir/images/<class>/ plus
// out_dir/manifest.csv, split with `ratios`. Fully seed-deterministic.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                   const SplitRatios& ratios = {});

}  // namespace mrnet
