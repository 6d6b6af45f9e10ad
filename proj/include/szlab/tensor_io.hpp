#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "szlab/tensor.hpp"

namespace szlab {

// TNSR1 layout: "TNSR", version byte 0x01, u8 rank, rank x u32 LE dims,
// then the little-endian f32 payload.
std::vector<std::uint8_t> encode_tnsr(const Tensor& t);
Tensor decode_tnsr(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace szlab
