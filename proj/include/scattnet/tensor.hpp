#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace scattnet {

// Dense N-dimensional float32 array, row-major. Activations use N×C×H×W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor full(std::vector<int> shape, float value);
  static Tensor zeros_like(const Tensor& other);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_.size(); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 accessors (N,C,H,W).
  float& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  std::size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

// Binary tensor format: magic "SCTN", u8 version=1, u8 rank,
// rank u32 little-endian dims, then f32 little-endian payload, row-major.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace scattnet
