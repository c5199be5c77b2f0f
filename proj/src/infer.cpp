#include "scattnet/infer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "scattnet/errors.hpp"

namespace scattnet {

namespace {

int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

Tensor reflect_pad(const Tensor& image, int target_h, int target_w) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({c, target_h, target_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < target_h; ++y) {
      const int sy = reflect_index(y, h);
      for (int x = 0; x < target_w; ++x) {
        const int sx = reflect_index(x, w);
        out[(static_cast<std::size_t>(ch) * target_h + y) * target_w + x] =
            image[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      }
    }
  return out;
}

}  // namespace

std::pair<TileGrid, std::vector<Tensor>> tile_image(const Tensor& image,
                                                    int window) {
  if (image.rank() != 3) {
    throw ContractError("tile_image expects [C,H,W], got " + image.shape_str());
  }
  if (window < 1) throw ContractError("tile_image: window must be > 0");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  TileGrid grid;
  grid.window = window;
  grid.original_height = h;
  grid.original_width = w;
  grid.padded_height = ((h + window - 1) / window) * window;
  grid.padded_width = ((w + window - 1) / window) * window;

  const Tensor padded = (grid.padded_height == h && grid.padded_width == w)
                            ? image
                            : reflect_pad(image, grid.padded_height,
                                          grid.padded_width);
  std::vector<Tensor> tiles;
  for (int row = 0; row < grid.rows(); ++row) {
    for (int col = 0; col < grid.cols(); ++col) {
      const int y0 = row * window, x0 = col * window;
      grid.tiles.push_back(TileGrid::Tile{row, col, y0, x0});
      Tensor tile({c, window, window});
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < window; ++y)
          for (int x = 0; x < window; ++x)
            tile[(static_cast<std::size_t>(ch) * window + y) * window + x] =
                padded[(static_cast<std::size_t>(ch) * grid.padded_height +
                        y0 + y) *
                           grid.padded_width +
                       x0 + x];
      tiles.push_back(std::move(tile));
    }
  }
  return {std::move(grid), std::move(tiles)};
}

LabelMap stitch(const TileGrid& grid, const std::vector<LabelMap>& tiles) {
  if (tiles.size() != grid.tiles.size()) {
    throw ContractError("stitch: got " + std::to_string(tiles.size()) +
                        " tiles for a grid of " +
                        std::to_string(grid.tiles.size()));
  }
  LabelMap padded(grid.padded_width, grid.padded_height);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const LabelMap& t = tiles[i];
    if (t.width != grid.window || t.height != grid.window) {
      throw ContractError("stitch: tile " + std::to_string(i) + " is " +
                          std::to_string(t.width) + "x" +
                          std::to_string(t.height) + ", expected window " +
                          std::to_string(grid.window));
    }
    const auto& pos = grid.tiles[i];
    for (int y = 0; y < grid.window; ++y)
      for (int x = 0; x < grid.window; ++x)
        padded.at(pos.y0 + y, pos.x0 + x) = t.at(y, x);
  }
  if (grid.padded_height == grid.original_height &&
      grid.padded_width == grid.original_width) {
    return padded;
  }
  LabelMap out(grid.original_width, grid.original_height);
  for (int y = 0; y < grid.original_height; ++y)
    for (int x = 0; x < grid.original_width; ++x) out.at(y, x) = padded.at(y, x);
  return out;
}

TiledPrediction predict_tiled(const Model& model, const Tensor& image,
                              int window, int max_threads) {
  auto [grid, tiles] = tile_image(image, window);
  const int k = model.config().num_classes;
  std::vector<LabelMap> tile_labels(tiles.size());
  std::vector<Tensor> tile_logits(tiles.size());

  auto run_tile = [&](std::size_t i) {
    const Tensor& t = tiles[i];
    Tensor batch({1, t.dim(0), t.dim(1), t.dim(2)}, t.vec());
    Tensor logits = model.forward_eval(batch);
    tile_labels[i] = argmax_labels(logits, 0);
    tile_logits[i] = std::move(logits);
  };

  const int workers = std::max(
      1, std::min<int>(max_threads, static_cast<int>(tiles.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tiles.size(); ++i) run_tile(i);
  } else {
    std::vector<std::thread> pool;
    std::size_t stride = tiles.size();
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = static_cast<std::size_t>(w); i < stride;
             i += static_cast<std::size_t>(workers))
          run_tile(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  TiledPrediction out;
  out.labels = stitch(grid, tile_labels);
  out.logits = Tensor({k, grid.original_height, grid.original_width});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& pos = grid.tiles[i];
    for (int c = 0; c < k; ++c)
      for (int y = 0; y < grid.window; ++y) {
        const int oy = pos.y0 + y;
        if (oy >= grid.original_height) continue;
        for (int x = 0; x < grid.window; ++x) {
          const int ox = pos.x0 + x;
          if (ox >= grid.original_width) continue;
          out.logits[(static_cast<std::size_t>(c) * grid.original_height + oy) *
                         grid.original_width +
                     ox] = tile_logits[i].at(0, c, y, x);
        }
      }
  }
  return out;
}

namespace {

// 5-stop blue-cyan-green-yellow-red ramp.
void heat_color(float t, std::uint8_t rgb[3]) {
  static const float stops[5][3] = {{0, 0, 255},
                                    {0, 255, 255},
                                    {0, 255, 0},
                                    {255, 255, 0},
                                    {255, 0, 0}};
  t = std::clamp(t, 0.0f, 1.0f) * 4.0f;
  const int lo = std::min(3, static_cast<int>(t));
  const float f = t - lo;
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(
        std::lround(stops[lo][c] + f * (stops[lo + 1][c] - stops[lo][c])));
  }
}

}  // namespace

PngImage heatmap_overlay(const Tensor& logits, const Tensor& image,
                         int class_index, float alpha) {
  if (logits.rank() != 3) {
    throw ContractError("heatmap_overlay expects logits [K,H,W], got " +
                        logits.shape_str());
  }
  if (image.rank() != 3) {
    throw ContractError("heatmap_overlay expects image [C,H,W], got " +
                        image.shape_str());
  }
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (class_index < 0 || class_index >= k) {
    throw ContractError("heatmap class index " + std::to_string(class_index) +
                        " out of range [0," + std::to_string(k) + ")");
  }
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    throw ContractError("heatmap alpha must lie in [0,1]");
  }
  if (image.dim(1) != h || image.dim(2) != w) {
    throw ContractError("heatmap: image " + image.shape_str() +
                        " does not match logits " + logits.shape_str());
  }

  float lo = logits[static_cast<std::size_t>(class_index) * h * w];
  float hi = lo;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v =
          logits[(static_cast<std::size_t>(class_index) * h + y) * w + x];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const bool flat = !(hi > lo);  // constant plane: all-cold fallback

  PngImage out;
  out.width = w;
  out.height = h;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  const int ci = image.dim(0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float gray = 0.0f;
      for (int c = 0; c < ci; ++c)
        gray += image[(static_cast<std::size_t>(c) * h + y) * w + x];
      gray = std::clamp(gray / ci, 0.0f, 1.0f);
      const float base = gray * 255.0f;
      float heat = 0.0f;
      if (!flat) {
        const float v =
            logits[(static_cast<std::size_t>(class_index) * h + y) * w + x];
        heat = (v - lo) / (hi - lo);
      }
      std::uint8_t hc[3];
      heat_color(heat, hc);
      for (int c = 0; c < 3; ++c) {
        const float blended = (1.0f - alpha) * base + alpha * hc[c];
        out.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0f, 255.0f)));
      }
    }
  }
  return out;
}

}  // namespace scattnet
