#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "gfrnet/supervision.hpp"
#include "gfrnet/tensor.hpp"

namespace gfrnet {

struct Sample {
  Tensor image;    // (1, 3, h, w) in [0, 1]
  GroundTruth gt;  // same spatial dims
  std::string id;
};

struct PaletteEntry {
  int index = 0;
  uint8_t r = 0, g = 0, b = 0;
  std::string name;
};

struct Palette {
  std::vector<PaletteEntry> entries;

  void validate(int num_classes) const;  // indices unique and dense in [0, C)
  const PaletteEntry& entry(int index) const;
};

Palette default_palette(int num_classes);
Palette load_palette(const std::string& path);
// One ASCII line per class: "index r g b name".
void write_palette(const std::string& path, const Palette& palette);

// 1-4 axis-aligned rectangles/discs of per-class colors on a gray background;
// background is class 0. Fully determined by the generator state.
std::vector<Sample> gen_shapes(Prng& rng, int n, int size, int num_classes);

// Contextual-ambiguity task (3 classes): consecutive samples form a pair with
// a byte-identical textured patch; only a tinted block in the far corner
// tells class 1 from class 2. The patch and the cue are separated by at least
// half the image per axis, so no window of half the image size or less that
// touches the patch can see the cue.
std::vector<Sample> gen_ambiguous(Prng& rng, int n, int size);

// Binary netpbm with maxval 255. Images map bytes to [0,1] by /255; label
// files carry the class index per pixel with 255 reserved for ignore.
Tensor load_image_ppm(const std::string& path);
GroundTruth load_labels_pgm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image01);
void write_pgm(const std::string& path, const LabelMap& labels);

// Identical window applied to image and labels.
Sample random_crop(const Sample& s, int64_t crop_h, int64_t crop_w, Prng& rng);

// Per-channel (x - mean) / stddev. The usual ImageNet statistics are provided
// as conventional defaults for pre-trained-style normalization.
inline constexpr std::array<double, 3> kImagenetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImagenetStd = {0.229, 0.224, 0.225};
Tensor normalize(const Tensor& image, std::array<double, 3> mean, std::array<double, 3> stddev);

// Dataset manifest: one "image_path label_path" line per sample, paths
// relative to the manifest location.
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& rows);
std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path);
std::vector<Sample> load_manifest_samples(const std::string& manifest_path, int num_classes);

}  // namespace gfrnet
