#include "szlab/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace szlab {

namespace {

constexpr std::uint8_t kVersion = 0x01;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  return v;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<std::uint8_t> encode_tnsr(const Tensor& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw InvalidArgument("TNSR1: rank too large");
  std::vector<std::uint8_t> out = {'T', 'N', 'S', 'R', kVersion, static_cast<std::uint8_t>(t.rank())};
  for (auto d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("TNSR1: dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tnsr(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), "TNSR", 4) != 0) throw InvalidArgument("TNSR1: bad magic");
  if (bytes[4] != kVersion) throw InvalidArgument("TNSR1: unsupported version " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  if (rank == 0) throw InvalidArgument("TNSR1: rank 0");
  std::size_t pos = 6;
  if (bytes.size() < pos + 4 * rank) throw InvalidArgument("TNSR1: truncated header");
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_u32(bytes, pos);
    pos += 4;
  }
  const std::size_t n = shape_size(shape);
  if (bytes.size() != pos + 4 * n) throw InvalidArgument("TNSR1: payload length mismatch");
  std::vector<float> data(n);
  for (auto& v : data) {
    v = std::bit_cast<float>(get_u32(bytes, pos));
    pos += 4;
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_tnsr(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tnsr(read_file_bytes(path)); }

}  // namespace szlab
