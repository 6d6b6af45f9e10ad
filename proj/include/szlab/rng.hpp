#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "szlab/tensor.hpp"

namespace szlab {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Identity of a random sequence. The pair fully determines every draw.
struct RngStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  /// Child stream keyed by `tag`; children of one parent are independent.
  RngStream derive(std::uint64_t tag) const noexcept;
  RngStream derive(std::uint64_t tag_a, std::uint64_t tag_b) const noexcept { return derive(tag_a).derive(tag_b); }

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

/// Philox4x32-10 counter-based generator.
///
/// The key is the master seed, the high 64 counter bits hold the stream id and
/// the low 64 bits count blocks, so a draw depends only on
/// (master_seed, stream_id, call index).
class Rng {
 public:
  explicit Rng(RngStream stream) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Standard normal via Box-Muller (platform independent, unlike std::normal_distribution).
  double normal() noexcept;

  const RngStream& stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  RngStream stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 0;
  std::optional<double> spare_normal_;
};

template <typename Real = float>
BasicTensor<Real> randn(Rng& rng, const Shape& shape) {
  if (shape.empty()) throw InvalidArgument("randn: shape must be nonempty");
  BasicTensor<Real> out(shape);
  for (auto& v : out.values()) v = static_cast<Real>(rng.normal());
  return out;
}

template <typename Real = float>
BasicTensor<Real> randn(const RngStream& stream, const Shape& shape) {
  Rng rng(stream);
  return randn<Real>(rng, shape);
}

}  // namespace szlab
