#include "scattnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "scattnet/errors.hpp"

namespace scattnet {

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw ContractError("tensor dims must be positive, got shape " +
                          shape_to_string(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0f) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw ContractError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  for (float& v : t.data_) v = value;
  return t;
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

constexpr char kMagic[4] = {'S', 'C', 'T', 'N'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("tensor stream truncated while reading u32");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  unsigned char version = 1;
  unsigned char rank = static_cast<unsigned char>(t.rank());
  out.put(static_cast<char>(version));
  out.put(static_cast<char>(rank));
  for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  static_assert(sizeof(float) == 4);
  // Little-endian payload; this targets little-endian hosts.
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad tensor magic, expected \"SCTN\"");
  }
  int version = in.get();
  if (version != 1) {
    throw DataError("unsupported tensor version " + std::to_string(version));
  }
  int rank = in.get();
  if (rank < 0 || rank > 8) {
    throw DataError("implausible tensor rank " + std::to_string(rank));
  }
  std::vector<int> shape(static_cast<std::size_t>(rank));
  std::size_t numel = 1;
  for (int& d : shape) {
    std::uint32_t v = read_u32(in);
    if (v == 0 || v > (1u << 28)) {
      throw DataError("implausible tensor dim " + std::to_string(v));
    }
    d = static_cast<int>(v);
    numel *= v;
  }
  std::vector<float> data(numel);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(numel * sizeof(float)));
  if (!in) throw DataError("tensor stream truncated in payload");
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  write_tensor(out, t);
  if (!out) throw DataError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for reading: " + path);
  return read_tensor(in);
}

}  // namespace scattnet
