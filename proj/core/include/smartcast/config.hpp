#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "smartcast/kriging.hpp"
#include "smartcast/lstm.hpp"
#include "smartcast/vegindex.hpp"

namespace smartcast::pipeline {

struct PathsConfig {
  std::filesystem::path sensor_csv;
  std::filesystem::path sensor_locations;  // CSV `sensor_id,x,y`
  std::filesystem::path stack_manifest;
  std::filesystem::path output_dir;

  friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct SoilModelConfig {
  std::size_t input_length = timeseries::kDefaultInputLength;
  int encoder_hidden = 200;
  int decoder_hidden = 200;
  int head_hidden = 100;
  bool residual = false;
  int max_gap = timeseries::kDefaultMaxGap;
  double test_fraction = 0.2;
  // Chronological tail of the training windows held out for epoch selection.
  // 0 selects on training loss.
  double validation_fraction = 0.1;
  lstm::TrainConfig train;

  lstm::Architecture architecture() const;

  friend bool operator==(const SoilModelConfig&, const SoilModelConfig&) = default;
};

struct IndexModelConfig {
  vegindex::IndexKind kind = vegindex::IndexKind::ndvi;
  int encoder_hidden = 50;
  int decoder_hidden = 50;
  int head_hidden = 20;
  bool residual = false;
  double test_fraction = 0.2;
  double validation_fraction = 0.0;
  lstm::TrainConfig train;

  lstm::Architecture architecture() const;

  friend bool operator==(const IndexModelConfig&, const IndexModelConfig&) = default;
};

struct VariogramConfig {
  // Used as-is when set; otherwise fitted per depth.
  std::optional<kriging::Variogram> fixed;
  std::size_t n_bins = 6;
  // Defaults to the largest sensor separation.
  std::optional<double> max_lag;

  friend bool operator==(const VariogramConfig&, const VariogramConfig&) = default;
};

struct GridConfig {
  kriging::GridGeometry geometry{16, 16, 0.0, 0.0, 10.0};
  // Skip cells where the forecast index image is nodata. Requires the grid
  // and image shapes to agree.
  bool mask_with_index = true;

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  PathsConfig paths;
  SoilModelConfig soil;
  IndexModelConfig index;
  VariogramConfig variogram;
  GridConfig grid;
  vegindex::BandMapping bands;
  int forecast_day = static_cast<int>(timeseries::kDefaultHorizon);

  // Value checks only; throws ConfigError.
  void validate() const;
  // Every input path must exist; throws ConfigError naming the first missing one.
  void check_paths() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError on
// unknown keys, missing required keys and type mismatches.
RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir,
                            std::string_view source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

// Pretty JSON with sorted keys; parse_config_text(serialize_config(c)) == c
// for configs whose paths are absolute.
std::string serialize_config(const RunConfig& config);

}  // namespace smartcast::pipeline
