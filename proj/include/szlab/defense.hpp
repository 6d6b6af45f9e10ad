#pragma once

#include <array>

#include "szlab/tensor.hpp"

namespace szlab {

struct JpegConfig {
  int quality = 25;
  void validate() const;
};

using QuantTable = std::array<int, 64>;

/// IJG standard luminance quantization table (row-major, quality 50).
const QuantTable& base_luminance_table();

/// IJG quality mapping: scale = 5000/q below 50, else 200 - 2q; entries clamped to [1, 255].
QuantTable quality_scale(const QuantTable& base, int quality);

/// Orthonormal type-II 2-D DCT of an 8x8 block and its inverse.
Tensor dct8(const Tensor& block);
Tensor idct8(const Tensor& block);

/// Grayscale baseline-JPEG quantization round trip. Accepts [H, W] or [1, H, W]
/// in [0, 1]; sides that are not multiples of 8 are reflect-padded and cropped back.
Tensor jpeg_compress(const Tensor& image, const JpegConfig& cfg);

}  // namespace szlab
