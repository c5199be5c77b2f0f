#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "scattnet/tensor.hpp"

namespace scattnet {

using Rgb = std::array<std::uint8_t, 3>;

// Ordered class-name/color binding for mask encoding. Indices are dense
// from 0; colors must be unique.
struct Palette {
  struct Entry {
    std::string name;
    Rgb color;
  };
  std::vector<Entry> entries;
  std::set<int> excluded_classes;  // reporting-time exclusion

  int size() const { return static_cast<int>(entries.size()); }
  void validate() const;
  int index_of_color(const Rgb& color) const;  // -1 if absent
};

// White/blue/cyan/green/yellow/red for impervious surfaces, buildings,
// low vegetation, trees, cars, clutter.
Palette isprs_palette();

// 2-D class-index raster.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;  // row-major

  LabelMap() = default;
  LabelMap(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t numel() const { return labels.size(); }
};

// Aligned image/mask pair; image is [C,h,w] in [0,1].
struct SamplePatch {
  Tensor image;
  LabelMap mask;
};

Tensor load_raster(const std::string& path);          // [C,H,W], /255
LabelMap decode_mask(const std::string& path, const Palette& palette);
LabelMap decode_mask_pixels(const std::uint8_t* rgb, int width, int height,
                            int channels, const Palette& palette,
                            const std::string& origin);
void save_mask(const std::string& path, const LabelMap& mask,
               const Palette& palette);
void save_raster(const std::string& path, const Tensor& image);  // [C,H,W]

SamplePatch random_crop(const Tensor& image, const LabelMap& mask, int size,
                        std::mt19937_64& rng);

struct AugmentOptions {
  int max_translation = 0;  // 0 means size/8, negative disables translation
};
// Rotation from {0,90,180,270} degrees plus a shifted re-crop with reflect
// padding, applied identically to image and mask.
SamplePatch augment(const SamplePatch& patch, std::mt19937_64& rng,
                    const AugmentOptions& opts = {});

// Deterministic building blocks, exposed for tests.
SamplePatch rotate90(const SamplePatch& patch, int quarter_turns);
SamplePatch translate_reflect(const SamplePatch& patch, int dy, int dx);

struct SynthSpec {
  int num_tiles = 16;
  int tile_size = 64;
  int num_classes = 3;
  float shape_density = 0.4f;  // total non-background pixel fraction
};

// Colored geometric tiles with exact-by-construction masks: class 0 is
// textured background, the last class gets small 4-8 px blobs, the rest
// large rectangles. Per-class pixel counts hit the density targets exactly
// (up to available space). Deterministic per (seed, tile index).
std::vector<SamplePatch> synth_dataset(const SynthSpec& spec,
                                       std::uint64_t seed,
                                       const Palette& palette);

// Manifest: "image_path mask_path" per line, '#' comments.
std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path);
std::vector<SamplePatch> load_dataset(const std::string& manifest_path,
                                      const Palette& palette);

}  // namespace scattnet
