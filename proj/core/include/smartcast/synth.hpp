#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smartcast/band_grid.hpp"
#include "smartcast/date.hpp"
#include "smartcast/timeseries.hpp"
#include "smartcast/vegindex.hpp"

namespace smartcast::pipeline {

struct SensorLocation {
  std::string sensor_id;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const SensorLocation&, const SensorLocation&) = default;
};

std::vector<SensorLocation> load_sensor_locations(const std::filesystem::path& path);
void save_sensor_locations(const std::filesystem::path& path, const std::vector<SensorLocation>& locations);

struct SynthSpec {
  int sensors = 4;
  std::vector<int> depths{10, 30, 60};
  int days = 400;
  Date start = Date{std::chrono::year{2021} / 1 / 1};

  int width = 16;
  int height = 16;
  double cell_size = 10.0;
  int images = 24;
  // Image dates advance by a uniform whole number of days in this range.
  int min_image_gap = 6;
  int max_image_gap = 12;

  // Daily rain probability, mean event depth and cap (mm).
  double rain_probability = 0.05;
  double rain_mean_mm = 6.0;
  double rain_max_mm = 15.0;
  // Each sensor's plot is irrigated every N days, N drawn per sensor from
  // this range. Irrigation is reported in the rainfall column.
  double irrigation_mm = 15.0;
  int min_irrigation_interval = 7;
  int max_irrigation_interval = 7;
  // AR(1) moisture noise: x_t = ar_coefficient * x_{t-1} + N(0, noise_sd^2).
  double ar_coefficient = 0.7;
  double noise_sd = 0.2;
  double pixel_noise_sd = 0.004;
  // Probability that one day of one feature is left blank (single-day gaps).
  double missing_rate = 0.01;

  // No water input, noise or missing values: moisture is exactly a sinusoid.
  static SynthSpec noiseless();
  void validate() const;
};

struct SynthData {
  std::vector<timeseries::SensorRecord> records;
  std::vector<SensorLocation> locations;
  std::vector<vegindex::ManifestEntry> image_dates;  // paths are file names
  std::vector<vegindex::BandGrid> images;
  std::vector<vegindex::IndexImage> ndvi;  // exact field the bands encode
};

// Deterministic per (seed, spec). Moisture per sensor and depth is a
// depth-dependent base level, a smooth spatial offset, a yearly sinusoid,
// rain and irrigation pulses routed through a delayed kernel that widens with
// depth, and AR(1) noise. NDVI is a seasonal term plus Gaussian bumps circling
// inside the grid; bands are B04 (red), B08 (nir) and B11 (swir) encoding that
// NDVI and a related NDWI.
SynthData synth_generate(std::uint64_t seed, const SynthSpec& spec);

struct SynthFiles {
  std::filesystem::path sensor_csv;
  std::filesystem::path sensor_locations;
  std::filesystem::path stack_manifest;
  std::filesystem::path config;
};

// Writes sensors.csv, sensor_locations.csv, stack/manifest.csv with one
// BandGrid per image, and a config.json tying them together.
SynthFiles synth_write(const SynthData& data, const SynthSpec& spec, std::uint64_t seed,
                       const std::filesystem::path& dir);

}  // namespace smartcast::pipeline
