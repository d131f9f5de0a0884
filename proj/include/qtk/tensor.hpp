#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace qtk {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of 64-bit floats.
//
// Every dimension is positive and product(shape) == data.size(). Values
// handed in from outside (files, user buffers) go through from_external(),
// which rejects NaN and infinity.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_external(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// .qtn binary format: "QTNS", u8 version (1), u8 rank, rank x u32 LE dims,
// then product(dims) x f32 LE values. Values widen to f64 on load.
Tensor read_qtn(const std::filesystem::path& path);
void write_qtn(const std::filesystem::path& path, const Tensor& t);

Tensor decode_qtn(std::span<const unsigned char> bytes, const std::string& origin = "<buffer>");
std::vector<unsigned char> encode_qtn(const Tensor& t);

}  // namespace qtk
