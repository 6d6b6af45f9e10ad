#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "szlab/tensor.hpp"

namespace szlab {

/// Binary 8-bit PGM (P5). Values are clamped to [lo, hi] and mapped to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& image, double lo = 0.0, double hi = 1.0);
/// Reads a P5 file back into a [1, H, W] tensor in [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

/// Comma separated table with a header row; numbers printed with 9 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Same with preformatted cells, for tables that mix labels and numbers.
void write_text_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows);

/// Plain comma split (no quoting), header row separate.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws when absent
};
CsvTable read_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double v);

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal line plot, one polyline per series.
void write_svg_lines(const std::filesystem::path& path, const std::string& title, const std::vector<SvgSeries>& series);

}  // namespace szlab
