#include "szlab/defense.hpp"

#include <cmath>
#include <numbers>

namespace szlab {

namespace {

using Block = std::array<double, 64>;

const std::array<double, 64>& dct_matrix() {
  static const auto m = [] {
    std::array<double, 64> c{};
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) c[k * 8 + n] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return c;
  }();
  return m;
}

// forward: C B C^T, inverse: C^T B C
Block transform(const Block& in, bool inverse) {
  const auto& c = dct_matrix();
  Block tmp{}, out{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += (inverse ? c[k * 8 + i] : c[i * 8 + k]) * in[k * 8 + j];
      tmp[i * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += tmp[i * 8 + k] * (inverse ? c[k * 8 + j] : c[j * 8 + k]);
      out[i * 8 + j] = acc;
    }
  return out;
}

Block to_block(const Tensor& t) {
  if (t.size() != 64 || t.rank() != 2 || t.dim(0) != 8) {
    throw InvalidArgument("expected an 8x8 block, got " + shape_string(t.shape()));
  }
  Block b{};
  for (std::size_t i = 0; i < 64; ++i) b[i] = t[i];
  return b;
}

Tensor from_block(const Block& b) {
  Tensor t({8, 8});
  for (std::size_t i = 0; i < 64; ++i) t[i] = static_cast<float>(b[i]);
  return t;
}

// Symmetric reflection without repeating the edge sample (abcd|cba).
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

void JpegConfig::validate() const {
  if (quality < 1 || quality > 100) throw InvalidArgument("JPEG quality must lie in [1, 100]");
}

const QuantTable& base_luminance_table() {
  static const QuantTable t = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                               14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                               18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                               49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return t;
}

QuantTable quality_scale(const QuantTable& base, int quality) {
  JpegConfig{quality}.validate();
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable out{};
  for (std::size_t i = 0; i < 64; ++i) {
    if (base[i] < 1) throw InvalidArgument("quantization table entries must be >= 1");
    out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  }
  return out;
}

Tensor dct8(const Tensor& block) { return from_block(transform(to_block(block), false)); }
Tensor idct8(const Tensor& block) { return from_block(transform(to_block(block), true)); }

Tensor jpeg_compress(const Tensor& image, const JpegConfig& cfg) {
  cfg.validate();
  const bool channel = image.rank() == 3;
  if (!(image.rank() == 2 || (channel && image.dim(0) == 1))) {
    throw InvalidArgument("jpeg_compress: expected a single-channel image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  const auto table = quality_scale(base_luminance_table(), cfg.quality);
  Tensor out(image.shape());
  std::vector<double> padded(ph * pw);
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x)
      padded[y * pw + x] = image[reflect(static_cast<std::ptrdiff_t>(y), h) * w + reflect(static_cast<std::ptrdiff_t>(x), w)];
  for (std::size_t by = 0; by < ph; by += 8) {
    for (std::size_t bx = 0; bx < pw; bx += 8) {
      Block b{};
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) b[i * 8 + j] = padded[(by + i) * pw + bx + j] * 255.0 - 128.0;
      Block coef = transform(b, false);
      for (std::size_t k = 0; k < 64; ++k) coef[k] = std::nearbyint(coef[k] / table[k]) * table[k];
      const Block rec = transform(coef, true);
      for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
          const std::size_t y = by + i, x = bx + j;
          if (y >= h || x >= w) continue;
          out[y * w + x] = static_cast<float>(std::clamp((rec[i * 8 + j] + 128.0) / 255.0, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

}  // namespace szlab
