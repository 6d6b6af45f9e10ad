#include "szlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace szlab {

namespace {

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  return out;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image, double lo, double hi) {
  if (image.rank() < 2) throw InvalidArgument("write_pgm: need a 2-D image");
  if (!(hi > lo)) throw InvalidArgument("write_pgm: empty value range");
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  auto out = open_out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::clamp((static_cast<double>(image[i]) - lo) / (hi - lo), 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw InvalidArgument("read_pgm: unsupported PGM header in " + path.string());
  }
  in.get();
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw InvalidArgument("read_pgm: truncated payload");
  Tensor out({1, h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n" << std::setprecision(9);
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw InvalidArgument("write_csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

void write_text_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw InvalidArgument("write_text_csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InvalidArgument("csv: no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("csv: empty file " + path.string());
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw InvalidArgument("csv: ragged row in " + path.string());
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string format_number(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_svg_lines(const std::filesystem::path& path, const std::string& title, const std::vector<SvgSeries>& series) {
  constexpr double W = 640, H = 400, pad = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("write_svg_lines: x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  auto out = open_out(path);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
      << "</text>\n"
      << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\"" << H - 2 * pad
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << pad << "\" y=\"" << H - pad + 16 << "\" font-size=\"11\">" << x0 << "</text>\n"
      << "<text x=\"" << W - pad << "\" y=\"" << H - pad + 16 << "\" font-size=\"11\" text-anchor=\"end\">" << x1
      << "</text>\n"
      << "<text x=\"" << pad - 4 << "\" y=\"" << H - pad << "\" font-size=\"11\" text-anchor=\"end\">" << y0
      << "</text>\n"
      << "<text x=\"" << pad - 4 << "\" y=\"" << pad + 10 << "\" font-size=\"11\" text-anchor=\"end\">" << y1
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << pad + (s.x[i] - x0) / (x1 - x0) * (W - 2 * pad) << "," << H - pad - (s.y[i] - y0) / (y1 - y0) * (H - 2 * pad)
          << " ";
    }
    out << "\"/>\n<text x=\"" << W - pad - 4 << "\" y=\"" << pad + 16 + 14 * k << "\" font-size=\"12\" fill=\"" << color
        << "\" text-anchor=\"end\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace szlab
