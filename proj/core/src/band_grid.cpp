#include "smartcast/band_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "smartcast/error.hpp"
#include "text_util.hpp"

namespace smartcast::vegindex {

namespace {

std::string format_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

BandGrid::BandGrid(int w, int h, std::vector<std::string> names, float nd)
    : width(w), height(h), nodata(nd), band_names(std::move(names)) {
  if (width <= 0 || height <= 0) throw DataError("band grid dimensions must be positive");
  data.assign(pixel_count() * bands(), 0.0f);
}

bool BandGrid::is_nodata(float v) const { return std::isnan(nodata) ? std::isnan(v) : v == nodata; }

std::size_t BandGrid::band_index(const std::string& name) const {
  const auto it = std::find(band_names.begin(), band_names.end(), name);
  if (it == band_names.end()) throw DataError("unknown band name '" + name + "'");
  return static_cast<std::size_t>(it - band_names.begin());
}

std::span<float> BandGrid::band(std::size_t index) {
  return {data.data() + index * pixel_count(), pixel_count()};
}

std::span<const float> BandGrid::band(std::size_t index) const {
  return {data.data() + index * pixel_count(), pixel_count()};
}

void BandGrid::validate() const {
  if (width <= 0 || height <= 0) throw DataError("band grid dimensions must be positive");
  if (bands() == 0 || bands() > kMaxBands) {
    throw DataError("band grid must have 1.." + std::to_string(kMaxBands) + " bands, has " + std::to_string(bands()));
  }
  if (data.size() != pixel_count() * bands()) throw DataError("band grid data length does not match width*height*bands");
  for (const auto& name : band_names) {
    if (name.empty() || name.find(',') != std::string::npos || name.find('\n') != std::string::npos) {
      throw DataError("invalid band name '" + name + "'");
    }
  }
}

void BandGrid::validate_reflectance() const {
  validate();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = data[i];
    if (!is_nodata(v) && !(v >= 0.0f && v <= 1.0f)) {
      throw DataError("reflectance " + format_float(v) + " outside [0, 1] in band '" + band_names[i / pixel_count()] + "'");
    }
  }
}

void write_band_grid(std::ostream& out, const BandGrid& grid) {
  grid.validate();
  out << "BGRID 1\n" << grid.width << ' ' << grid.height << ' ' << grid.bands() << '\n';
  out << "nodata=" << format_float(grid.nodata) << '\n';
  for (std::size_t b = 0; b < grid.bands(); ++b) out << (b ? "," : "") << grid.band_names[b];
  out << '\n';
  std::vector<unsigned char> bytes(grid.data.size() * 4);
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(grid.data[i]);
    for (int k = 0; k < 4; ++k) {
      bytes[i * 4 + static_cast<std::size_t>(k)] = static_cast<unsigned char>(bits & 0xffU);
      bits >>= 8;
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("band grid: write failed");
}

void save_band_grid(const std::filesystem::path& path, const BandGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_band_grid(out, grid);
}

BandGrid read_band_grid(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "BGRID 1") throw DataError("band grid: bad magic line, expected 'BGRID 1'");

  if (!std::getline(in, line)) throw DataError("band grid: missing dimensions line");
  const auto dims = detail::split(line, ' ');
  if (dims.size() != 3) throw DataError("band grid: dimensions line must be '<width> <height> <bands>'");
  const auto w = detail::parse_int(dims[0]);
  const auto h = detail::parse_int(dims[1]);
  const auto nb = detail::parse_int(dims[2]);
  if (!w || !h || !nb || *w <= 0 || *h <= 0 || *nb <= 0 || *nb > static_cast<long long>(kMaxBands)) {
    throw DataError("band grid: invalid dimensions '" + line + "'");
  }

  if (!std::getline(in, line) || line.rfind("nodata=", 0) != 0) throw DataError("band grid: missing nodata line");
  float nodata = 0.0f;
  {
    const std::string_view text = std::string_view(line).substr(7);
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), nodata);
    if (ec != std::errc() || ptr != text.data() + text.size()) throw DataError("band grid: bad nodata value");
  }

  if (!std::getline(in, line)) throw DataError("band grid: missing band names");
  std::vector<std::string> names;
  for (auto n : detail::split(line, ',')) names.emplace_back(n);
  if (names.size() != static_cast<std::size_t>(*nb)) throw DataError("band grid: band name count differs from header");

  BandGrid grid(static_cast<int>(*w), static_cast<int>(*h), std::move(names), nodata);
  std::vector<unsigned char> bytes(grid.data.size() * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError("band grid: truncated sample data");
  }
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 3; k >= 0; --k) bits = (bits << 8) | bytes[i * 4 + static_cast<std::size_t>(k)];
    grid.data[i] = std::bit_cast<float>(bits);
  }
  grid.validate();
  return grid;
}

BandGrid load_band_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open band grid '" + path.string() + "'");
  try {
    return read_band_grid(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<ManifestEntry> load_stack_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stack manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "date,path") {
    throw DataError(path.string() + ":1: bad header, expected 'date,path'");
  }
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto comma = text.find(',');
    if (comma == std::string_view::npos) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'date,path'");
    ManifestEntry e;
    try {
      e.date = parse_iso_date(detail::trim(text.substr(0, comma)));
    } catch (const DataError& err) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + err.what());
    }
    e.path = std::filesystem::path(std::string(detail::trim(text.substr(comma + 1))));
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    if (!entries.empty() && !(entries.back().date < e.date)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": dates must be strictly increasing");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_stack_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "date,path\n";
  for (const auto& e : entries) out << format_iso_date(e.date) << ',' << e.path.generic_string() << '\n';
}

std::filesystem::path heatmap_sidecar_path(const std::filesystem::path& pgm_path) {
  return pgm_path.string() + ".scale.txt";
}

HeatmapScale write_pgm_heatmap(const std::filesystem::path& path, std::span<const double> values, int width, int height,
                               std::span<const unsigned char> is_nodata) {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width <= 0 || height <= 0 || values.size() != n) throw std::invalid_argument("write_pgm_heatmap: size mismatch");
  if (!is_nodata.empty() && is_nodata.size() != n) throw std::invalid_argument("write_pgm_heatmap: mask size mismatch");

  const auto blank = [&](std::size_t i) { return (!is_nodata.empty() && is_nodata[i]) || !std::isfinite(values[i]); };
  HeatmapScale scale{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < n; ++i) {
    if (blank(i)) continue;
    scale.min = std::min(scale.min, values[i]);
    scale.max = std::max(scale.max, values[i]);
  }
  if (scale.min > scale.max) scale = {0.0, 0.0};

  std::vector<unsigned char> pixels(n, 0);
  const double span = scale.max - scale.min;
  for (std::size_t i = 0; i < n; ++i) {
    if (blank(i) || span <= 0.0) continue;
    const double t = (values[i] - scale.min) / span;
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));

  std::ofstream side(heatmap_sidecar_path(path));
  if (!side) throw DataError("cannot write heatmap sidecar for '" + path.string() + "'");
  side << "min=" << detail::format_double(scale.min) << "\nmax=" << detail::format_double(scale.max)
       << "\nnodata_value=0\n";
  return scale;
}

}  // namespace smartcast::vegindex
