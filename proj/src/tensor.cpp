#include "qtk/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "qtk/errors.hpp"

namespace qtk {

namespace {

constexpr unsigned char kMagic[4] = {'Q', 'T', 'N', 'S'};
constexpr unsigned char kVersion = 1;

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
}

Tensor Tensor::from_external(Shape shape, std::vector<double> data) {
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw ParseError("non-finite value at flat index " + std::to_string(i));
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(shape_.size()));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor decode_qtn(std::span<const unsigned char> bytes, const std::string& origin) {
  if (bytes.size() < 6 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw ParseError(origin + ": missing QTNS magic");
  if (bytes[4] != kVersion)
    throw ParseError(origin + ": unsupported qtn version " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  std::size_t offset = 6;
  if (bytes.size() < offset + 4 * rank) throw ParseError(origin + ": truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, offset += 4) shape[i] = read_u32_le(bytes.data() + offset);
  for (auto d : shape)
    if (d == 0) throw DegenerateInputError(origin + ": empty tensor " + shape_string(shape));
  const std::size_t n = shape_size(shape);
  if (bytes.size() != offset + 4 * n)
    throw ParseError(origin + ": payload holds " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                     std::to_string(4 * n));
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, offset += 4)
    data[i] = static_cast<double>(std::bit_cast<float>(read_u32_le(bytes.data() + offset)));
  try {
    return Tensor::from_external(std::move(shape), std::move(data));
  } catch (const ParseError& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

std::vector<unsigned char> encode_qtn(const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("qtn supports rank <= 255");
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<unsigned char>(t.rank()));
  for (auto d : t.shape()) put_u32_le(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.data()) put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor read_qtn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open tensor file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_qtn(bytes, path.string());
}

void write_qtn(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_qtn(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write tensor file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace qtk
