#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smartcast/date.hpp"

namespace smartcast::timeseries {

// Column order of the per-day feature matrix.
enum Feature : std::size_t {
  kMoisture = 0,
  kSoilTemp = 1,
  kSalinity = 2,
  kRainfall = 3,
};
inline constexpr std::size_t kFeatureCount = 4;
inline constexpr std::size_t kDefaultHorizon = 14;
inline constexpr std::size_t kDefaultInputLength = 30;
inline constexpr int kDefaultMaxGap = 3;

inline constexpr std::string_view kSensorCsvHeader =
    "date,sensor_id,depth_cm,moisture,soil_temp,salinity,rainfall";

struct SensorRecord {
  Date date{};
  std::string sensor_id;
  int depth_cm = 0;
  // Empty CSV fields are carried as nullopt and filled by build_series.
  std::optional<double> moisture;
  std::optional<double> soil_temp;
  std::optional<double> salinity;
  std::optional<double> rainfall;

  std::optional<double> feature(std::size_t f) const;

  friend bool operator==(const SensorRecord&, const SensorRecord&) = default;
};

bool is_valid_depth(int depth_cm);

// Parses sensor CSV text. `source` only labels error messages.
std::vector<SensorRecord> parse_sensor_csv(std::istream& in, std::string_view source = "<stream>");
std::vector<SensorRecord> load_sensor_csv(const std::filesystem::path& path);

void write_sensor_csv(std::ostream& out, std::span<const SensorRecord> records);

using FeatureRow = std::array<double, kFeatureCount>;

struct SensorSeries {
  std::string sensor_id;
  int depth_cm = 0;
  std::vector<Date> dates;
  std::vector<FeatureRow> features;
  // 1 where at least one feature of that day was gap-filled.
  std::vector<std::uint8_t> filled;

  std::size_t size() const { return dates.size(); }
};

struct SeriesOptions {
  int max_gap = kDefaultMaxGap;
};

SensorSeries build_series(std::span<const SensorRecord> records, std::string_view sensor_id, int depth_cm,
                          const SeriesOptions& options = {});

// Distinct (sensor_id, depth_cm) keys in first-appearance order.
std::vector<std::pair<std::string, int>> series_keys(std::span<const SensorRecord> records);

// Per-feature standardization. Population standard deviation.
class Scaler {
 public:
  Scaler() = default;
  Scaler(std::vector<double> mean, std::vector<double> stddev);

  static Scaler identity(std::size_t n_features);
  // `rows` is row-major with `n_features` columns.
  static Scaler fit(std::span<const double> rows, std::size_t n_features);

  std::size_t size() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return stddev_; }

  double apply(std::size_t feature, double x) const { return (x - mean_[feature]) / stddev_[feature]; }
  double invert(std::size_t feature, double z) const { return z * stddev_[feature] + mean_[feature]; }

  void apply_rows(std::span<double> rows) const;
  void invert_rows(std::span<double> rows) const;

  friend bool operator==(const Scaler&, const Scaler&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

// Fits on the half-open day range [begin, end) of the series.
Scaler fit_scaler(const SensorSeries& series, std::size_t begin, std::size_t end);
SensorSeries apply_scaler(const Scaler& scaler, SensorSeries series);

// Day numbers (days since 1970-01-01) covered by one supervised sample,
// inclusive on both ends.
struct SampleSpan {
  long input_begin = 0;
  long input_end = 0;
  long target_begin = 0;
  long target_end = 0;
};

struct WindowSet {
  std::size_t input_length = 0;
  std::size_t n_features = 0;
  std::size_t horizon = 0;
  std::vector<double> inputs;   // [sample][step][feature]
  std::vector<double> targets;  // [sample][horizon step]
  std::vector<SampleSpan> spans;

  std::size_t size() const { return spans.size(); }
  bool empty() const { return spans.empty(); }

  std::span<const double> input(std::size_t i) const {
    const std::size_t stride = input_length * n_features;
    return {inputs.data() + i * stride, stride};
  }
  std::span<const double> target(std::size_t i) const { return {targets.data() + i * horizon, horizon}; }

  WindowSet select(std::span<const std::size_t> indices) const;
  void append(const WindowSet& other);
};

// Sliding windows of `input_length` days over all four features with the
// moisture column of the following `horizon` days as target.
WindowSet make_windows(const SensorSeries& series, std::size_t input_length,
                       std::size_t horizon = kDefaultHorizon);

struct Split {
  WindowSet train;
  WindowSet test;
};

// Chronological split: train = first floor(N * (1 - test_fraction)) samples,
// the rest is test. Train samples whose target days reach the first test
// input day are dropped so no test day overlaps a train target day.
Split chrono_split(const WindowSet& windows, double test_fraction);

}  // namespace smartcast::timeseries
