#include "scattnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "scattnet/errors.hpp"
#include "scattnet/init.hpp"
#include "scattnet/png_io.hpp"

namespace scattnet {

void Palette::validate() const {
  if (entries.empty()) throw DataError("palette has no entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      if (entries[i].color == entries[j].color) {
        throw DataError("palette colors must be unique; classes " +
                        std::to_string(i) + " and " + std::to_string(j) +
                        " share one");
      }
    }
  }
}

int Palette::index_of_color(const Rgb& color) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].color == color) return static_cast<int>(i);
  }
  return -1;
}

Palette isprs_palette() {
  Palette p;
  p.entries = {
      {"impervious_surfaces", {255, 255, 255}},
      {"buildings", {0, 0, 255}},
      {"low_vegetation", {0, 255, 255}},
      {"trees", {0, 255, 0}},
      {"cars", {255, 255, 0}},
      {"clutter", {255, 0, 0}},
  };
  p.excluded_classes = {5};  // clutter is usually left out of mean scores
  return p;
}

Tensor load_raster(const std::string& path) {
  PngImage img = read_png(path);
  Tensor t({img.channels, img.height, img.width});
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* px =
          &img.pixels[(static_cast<std::size_t>(y) * img.width + x) *
                      img.channels];
      for (int c = 0; c < img.channels; ++c) {
        t[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
            px[c] * inv;
      }
    }
  }
  return t;
}

LabelMap decode_mask_pixels(const std::uint8_t* rgb, int width, int height,
                            int channels, const Palette& palette,
                            const std::string& origin) {
  palette.validate();
  LabelMap mask(width, height);
  std::map<Rgb, std::size_t> unknown;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px =
          &rgb[(static_cast<std::size_t>(y) * width + x) * channels];
      Rgb color = {px[0], px[1], px[2]};
      int idx = palette.index_of_color(color);
      if (idx < 0) {
        ++unknown[color];
      } else {
        mask.at(y, x) = static_cast<std::uint8_t>(idx);
      }
    }
  }
  if (!unknown.empty()) {
    std::ostringstream os;
    os << "mask '" << origin << "' contains colors outside the palette:";
    for (const auto& [color, count] : unknown) {
      os << " rgb(" << int(color[0]) << ',' << int(color[1]) << ','
         << int(color[2]) << ") x" << count;
    }
    throw DataError(os.str());
  }
  return mask;
}

LabelMap decode_mask(const std::string& path, const Palette& palette) {
  PngImage img = read_png(path);
  return decode_mask_pixels(img.pixels.data(), img.width, img.height,
                            img.channels, palette, path);
}

void save_mask(const std::string& path, const LabelMap& mask,
               const Palette& palette) {
  PngImage img;
  img.width = mask.width;
  img.height = mask.height;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(mask.width) * mask.height * 3);
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    int cls = mask.labels[i];
    if (cls >= palette.size()) {
      throw DataError("mask label " + std::to_string(cls) +
                      " outside palette of size " +
                      std::to_string(palette.size()));
    }
    const Rgb& c = palette.entries[static_cast<std::size_t>(cls)].color;
    img.pixels[3 * i] = c[0];
    img.pixels[3 * i + 1] = c[1];
    img.pixels[3 * i + 2] = c[2];
  }
  write_png(path, img);
}

void save_raster(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 4)) {
    throw DataError("save_raster expects [3|4,H,W], got " + image.shape_str());
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  PngImage img;
  img.width = w;
  img.height = h;
  img.channels = c;
  img.pixels.resize(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float v = image[(static_cast<std::size_t>(ch) * h + y) * w + x];
        v = std::clamp(v, 0.0f, 1.0f);
        img.pixels[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  write_png(path, img);
}

SamplePatch random_crop(const Tensor& image, const LabelMap& mask, int size,
                        std::mt19937_64& rng) {
  if (image.rank() != 3) {
    throw ContractError("random_crop expects image [C,H,W], got " +
                        image.shape_str());
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (mask.height != h || mask.width != w) {
    throw ContractError("random_crop: mask " + std::to_string(mask.width) +
                        "x" + std::to_string(mask.height) +
                        " does not match image " + image.shape_str());
  }
  if (size > h || size > w) {
    throw ContractError("random_crop size " + std::to_string(size) +
                        " exceeds image " + image.shape_str());
  }
  const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - size + 1));
  const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - size + 1));
  SamplePatch out;
  out.image = Tensor({c, size, size});
  out.mask = LabelMap(size, size);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.image[(static_cast<std::size_t>(ch) * size + y) * size + x] =
            image[(static_cast<std::size_t>(ch) * h + y0 + y) * w + x0 + x];
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.mask.at(y, x) = mask.at(y0 + y, x0 + x);
  return out;
}

SamplePatch rotate90(const SamplePatch& patch, int quarter_turns) {
  const int c = patch.image.dim(0), s = patch.image.dim(1);
  if (patch.image.dim(2) != s) {
    throw ContractError("rotate90 requires a square patch, got " +
                        patch.image.shape_str());
  }
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  SamplePatch out = patch;
  for (int t = 0; t < quarter_turns; ++t) {
    SamplePatch next;
    next.image = Tensor({c, s, s});
    next.mask = LabelMap(s, s);
    // one clockwise quarter turn: (i,j) -> (j, s-1-i)
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        for (int ch = 0; ch < c; ++ch)
          next.image[(static_cast<std::size_t>(ch) * s + j) * s + (s - 1 - i)] =
              out.image[(static_cast<std::size_t>(ch) * s + i) * s + j];
        next.mask.at(j, s - 1 - i) = out.mask.at(i, j);
      }
    out = std::move(next);
  }
  return out;
}

namespace {

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

SamplePatch translate_reflect(const SamplePatch& patch, int dy, int dx) {
  const int c = patch.image.dim(0), h = patch.image.dim(1), w = patch.image.dim(2);
  SamplePatch out;
  out.image = Tensor({c, h, w});
  out.mask = LabelMap(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect_index(y + dy, h);
    for (int x = 0; x < w; ++x) {
      const int sx = reflect_index(x + dx, w);
      for (int ch = 0; ch < c; ++ch)
        out.image[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            patch.image[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      out.mask.at(y, x) = patch.mask.at(sy, sx);
    }
  }
  return out;
}

SamplePatch augment(const SamplePatch& patch, std::mt19937_64& rng,
                    const AugmentOptions& opts) {
  const int s = patch.image.dim(1);
  if (patch.image.dim(2) != s) {
    throw ContractError("augment requires a square patch");
  }
  const int turns = static_cast<int>(rng() % 4);
  const int m = opts.max_translation == 0   ? s / 8
                : opts.max_translation < 0 ? 0
                                           : opts.max_translation;
  const int dy = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * m + 1)) - m;
  const int dx = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * m + 1)) - m;
  SamplePatch out = rotate90(patch, turns);
  if (dy != 0 || dx != 0) out = translate_reflect(out, dy, dx);
  return out;
}

// ---------------------------------------------------------------------
// synthetic dataset

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 on (seed ^ golden-ratio * stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Paints up to `budget` background pixels of the rectangle with `cls`,
// row-major; returns how many were painted.
long paint_rect(LabelMap& mask, int y0, int x0, int h, int w, std::uint8_t cls,
                long budget) {
  long painted = 0;
  for (int y = y0; y < y0 + h && painted < budget; ++y) {
    if (y < 0 || y >= mask.height) continue;
    for (int x = x0; x < x0 + w && painted < budget; ++x) {
      if (x < 0 || x >= mask.width) continue;
      if (mask.at(y, x) == 0) {
        mask.at(y, x) = cls;
        ++painted;
      }
    }
  }
  return painted;
}

// True when the rectangle plus a one-pixel margin is fully inside the tile
// and still background, so a painted blob stays a distinct 4-8 px object.
bool blob_fits(const LabelMap& mask, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > mask.height || x0 + w > mask.width)
    return false;
  for (int y = std::max(0, y0 - 1); y < std::min(mask.height, y0 + h + 1); ++y)
    for (int x = std::max(0, x0 - 1); x < std::min(mask.width, x0 + w + 1); ++x)
      if (mask.at(y, x) != 0) return false;
  return true;
}

}  // namespace

std::vector<SamplePatch> synth_dataset(const SynthSpec& spec,
                                       std::uint64_t seed,
                                       const Palette& palette) {
  if (spec.num_tiles < 1) throw ContractError("synth_dataset: num_tiles must be >= 1");
  if (spec.tile_size < 8) throw ContractError("synth_dataset: tile_size must be >= 8");
  if (spec.num_classes < 2 || spec.num_classes > palette.size()) {
    throw ContractError("synth_dataset: num_classes must be in [2, palette size]");
  }
  if (!(spec.shape_density > 0.0f && spec.shape_density < 0.9f)) {
    throw ContractError("synth_dataset: shape_density must be in (0, 0.9)");
  }
  const int s = spec.tile_size;
  const int k = spec.num_classes;
  const long total = static_cast<long>(s) * s;
  const long per_class_target =
      std::lround(static_cast<double>(spec.shape_density) * total / (k - 1));

  std::vector<SamplePatch> tiles;
  tiles.reserve(static_cast<std::size_t>(spec.num_tiles));
  for (int tile = 0; tile < spec.num_tiles; ++tile) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(tile)));
    LabelMap mask(s, s);

    for (int cls = 1; cls < k; ++cls) {
      const bool blobs = (cls == k - 1) && k >= 3;  // car-like specks
      long painted = 0;
      int attempts = 0;
      while (painted < per_class_target && attempts < 100000) {
        ++attempts;
        int h, w;
        if (blobs) {
          // 4..8 px footprints
          static const int dims[5][2] = {{2, 2}, {2, 3}, {3, 2}, {2, 4}, {4, 2}};
          const int* d = dims[rng() % 5];
          h = d[0];
          w = d[1];
        } else {
          const int lo = std::max(4, s / 8), hi = std::max(lo + 1, s / 3);
          h = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
          w = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
        }
        const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(s));
        const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(s));
        if (blobs) {
          // never clip or truncate a blob; stop just short of the target
          // rather than leave a fragment smaller than 4 px
          if (per_class_target - painted < 4) break;
          if (per_class_target - painted < static_cast<long>(h) * w) continue;
          if (!blob_fits(mask, y0, x0, h, w)) continue;
          painted += paint_rect(mask, y0, x0, h, w,
                                static_cast<std::uint8_t>(cls),
                                static_cast<long>(h) * w);
        } else {
          painted += paint_rect(mask, y0, x0, h, w,
                                static_cast<std::uint8_t>(cls),
                                per_class_target - painted);
        }
      }
    }

    // Per-class color signature: palette color, mild brightness wobble,
    // Gaussian pixel noise.
    Tensor image({3, s, s});
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const int cls = mask.at(y, x);
        const Rgb& base = palette.entries[static_cast<std::size_t>(cls)].color;
        const float wobble =
            cls == 0 ? 0.08f * std::sin(0.2f * y) * std::cos(0.17f * x) : 0.0f;
        for (int ch = 0; ch < 3; ++ch) {
          float v = base[static_cast<std::size_t>(ch)] / 255.0f;
          v = 0.15f + 0.7f * v + wobble + 0.04f * normal_sample(rng);
          image[(static_cast<std::size_t>(ch) * s + y) * s + x] =
              std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
    tiles.push_back(SamplePatch{std::move(image), std::move(mask)});
  }
  return tiles;
}

std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string img, msk, extra;
    if (!(ls >> img)) continue;  // blank line
    if (!(ls >> msk) || (ls >> extra)) {
      throw DataError("manifest " + path + ":" + std::to_string(line_no) +
                      ": expected 'image_path mask_path'");
    }
    pairs.emplace_back(img, msk);
  }
  return pairs;
}

std::vector<SamplePatch> load_dataset(const std::string& manifest_path,
                                      const Palette& palette) {
  // Relative manifest entries resolve against the manifest's directory.
  const std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  std::vector<SamplePatch> out;
  for (const auto& [img_rel, mask_rel] : read_manifest(manifest_path)) {
    const std::string img_path = resolve(img_rel);
    const std::string mask_path = resolve(mask_rel);
    SamplePatch p;
    p.image = load_raster(img_path);
    p.mask = decode_mask(mask_path, palette);
    if (p.mask.height != p.image.dim(1) || p.mask.width != p.image.dim(2)) {
      throw DataError("image/mask size mismatch: " + img_path + " vs " +
                      mask_path);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace scattnet
