#include "scattnet/png_io.hpp"

#include <png.h>

#include <cstring>

#include "scattnet/errors.hpp"

namespace scattnet {

PngImage read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG '" + path + "': " + img.message);
  }
  const bool has_alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = has_alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  PngImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = has_alpha ? 4 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("PNG decode failed for '" + path + "': " + img.message);
  }
  return out;
}

void write_png(const std::string& path, const PngImage& image) {
  if (image.channels != 3 && image.channels != 4) {
    throw DataError("write_png supports RGB/RGBA only, got " +
                    std::to_string(image.channels) + " channels");
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.width) *
                                 image.height * image.channels) {
    throw DataError("write_png: pixel buffer size mismatch for " + path);
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0,
                               nullptr)) {
    throw DataError("cannot write PNG '" + path + "': " + img.message);
  }
}

}  // namespace scattnet
