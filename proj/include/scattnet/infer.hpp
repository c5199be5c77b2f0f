#pragma once

#include <string>
#include <vector>

#include "scattnet/data.hpp"
#include "scattnet/model.hpp"
#include "scattnet/png_io.hpp"
#include "scattnet/tensor.hpp"

namespace scattnet {

// Disjoint cover of the reflect-padded image by window-sized tiles.
struct TileGrid {
  int window = 0;
  int padded_height = 0;
  int padded_width = 0;
  int original_height = 0;
  int original_width = 0;
  struct Tile {
    int row;
    int col;
    int y0;
    int x0;
  };
  std::vector<Tile> tiles;

  int rows() const { return padded_height / window; }
  int cols() const { return padded_width / window; }
};

// Reflect-pads [C,H,W] to the smallest window multiples, then cuts the
// exact partition.
std::pair<TileGrid, std::vector<Tensor>> tile_image(const Tensor& image,
                                                    int window);

// Reassembles per-tile label maps by placement and crops back to the
// original size.
LabelMap stitch(const TileGrid& grid, const std::vector<LabelMap>& tiles);

// Per-tile model inference, optionally parallel (worker count capped by
// max_threads; <=1 means sequential). Also returns stitched pre-softmax
// logits [K,H,W] cropped to the original size.
struct TiledPrediction {
  LabelMap labels;
  Tensor logits;  // [K,H,W]
};
TiledPrediction predict_tiled(const Model& model, const Tensor& image,
                              int window, int max_threads = 1);

// Selected pre-softmax channel, min-max normalized, mapped through a
// blue-cyan-green-yellow-red ramp and alpha-blended over the grayscale
// rendering of the input. A constant logit plane normalizes to all-cold.
PngImage heatmap_overlay(const Tensor& logits, const Tensor& image,
                         int class_index, float alpha);

}  // namespace scattnet
