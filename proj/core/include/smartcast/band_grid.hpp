#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "smartcast/date.hpp"

namespace smartcast::vegindex {

inline constexpr std::size_t kMaxBands = 13;

// Multiband float32 raster, band-major then row-major.
struct BandGrid {
  int width = 0;
  int height = 0;
  float nodata = -9999.0f;
  std::vector<std::string> band_names;
  std::vector<float> data;

  BandGrid() = default;
  BandGrid(int width, int height, std::vector<std::string> band_names, float nodata = -9999.0f);

  std::size_t bands() const { return band_names.size(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool is_nodata(float v) const;

  // Throws DataError for an unknown band name.
  std::size_t band_index(const std::string& name) const;
  std::span<float> band(std::size_t index);
  std::span<const float> band(std::size_t index) const;

  // Shape checks only.
  void validate() const;
  // Imagery contract: every value is reflectance in [0, 1] or nodata.
  void validate_reflectance() const;

  friend bool operator==(const BandGrid&, const BandGrid&) = default;
};

// Text header (`BGRID 1`, `<w> <h> <bands>`, `nodata=<float>`, band names)
// followed by raw little-endian float32 samples.
void write_band_grid(std::ostream& out, const BandGrid& grid);
void save_band_grid(const std::filesystem::path& path, const BandGrid& grid);
BandGrid read_band_grid(std::istream& in);
BandGrid load_band_grid(const std::filesystem::path& path);

struct ManifestEntry {
  Date date{};
  std::filesystem::path path;
};

// `date,path` CSV; relative paths resolve against the manifest directory.
// Dates must be strictly increasing.
std::vector<ManifestEntry> load_stack_manifest(const std::filesystem::path& path);
void write_stack_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

struct HeatmapScale {
  double min = 0.0;
  double max = 0.0;
};

// 8-bit binary PGM (P5): min -> 0, max -> 255, nodata -> 0. The scaling bounds
// go to a sidecar `<path>.scale.txt`. `is_nodata` marks cells to blank.
HeatmapScale write_pgm_heatmap(const std::filesystem::path& path, std::span<const double> values, int width,
                               int height, std::span<const unsigned char> is_nodata = {});

std::filesystem::path heatmap_sidecar_path(const std::filesystem::path& pgm_path);

}  // namespace smartcast::vegindex
