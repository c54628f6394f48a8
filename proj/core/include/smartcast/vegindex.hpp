#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smartcast/band_grid.hpp"
#include "smartcast/date.hpp"
#include "smartcast/lstm.hpp"
#include "smartcast/timeseries.hpp"

namespace smartcast::vegindex {

enum class IndexKind { ndvi, ndwi };

std::string_view to_string(IndexKind kind);
IndexKind index_kind_from_string(std::string_view name);

// Which named bands play Red, NIR and SWIR. Never inferred from band count.
struct BandMapping {
  std::string red = "B04";
  std::string nir = "B08";
  std::string swir = "B11";

  friend bool operator==(const BandMapping&, const BandMapping&) = default;
};

struct IndexImage {
  int width = 0;
  int height = 0;
  IndexKind kind = IndexKind::ndvi;
  float nodata = -9999.0f;
  std::vector<float> values;  // row-major

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool is_nodata(float v) const;

  friend bool operator==(const IndexImage&, const IndexImage&) = default;
};

// NDVI = (NIR - Red) / (NIR + Red), NDWI = (NIR - SWIR) / (NIR + SWIR), per
// pixel. A zero denominator or any nodata input yields nodata.
IndexImage compute_index(const BandGrid& grid, IndexKind kind, const BandMapping& mapping);

// Date-sorted sequence of index images sharing one shape.
class ImageStack {
 public:
  struct Entry {
    Date date{};
    IndexImage image;
  };

  // Dates must be strictly increasing and shapes uniform.
  void add(Date date, IndexImage image);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  int width() const { return entries_.empty() ? 0 : entries_.front().image.width; }
  int height() const { return entries_.empty() ? 0 : entries_.front().image.height; }

 private:
  std::vector<Entry> entries_;
};

inline constexpr std::size_t kHistoryLength = 5;
inline constexpr std::size_t kPixelFeatures = 2;

// One (value, days-to-target) window per pixel.
struct PixelWindows {
  std::size_t pixel_count = 0;
  Date target_date{};
  std::array<long, kHistoryLength> days_to_target{};
  std::vector<double> inputs;       // [pixel][step][value, days]
  std::vector<std::uint8_t> valid;  // 0 where any window value is nodata

  std::span<const double> window(std::size_t pixel) const {
    constexpr std::size_t stride = kHistoryLength * kPixelFeatures;
    return {inputs.data() + pixel * stride, stride};
  }
};

// Uses the five most recent images dated strictly before `target_date`.
PixelWindows flatten_stack(const ImageStack& stack, Date target_date);

std::vector<float> flatten_image(const IndexImage& image);

// Runs the index model on every valid pixel independently. Masked pixels get
// `nodata`; predictions are clamped to [-1, 1].
std::vector<float> predict_pixels(const lstm::Seq2SeqModel& model, const PixelWindows& windows, float nodata);

IndexImage reshape_to_image(std::span<const float> flat, int width, int height, IndexKind kind, float nodata);

// Every run of six consecutive images gives, per pixel valid in all six, a
// sample with the first five as (value, days-to-target) input and the sixth
// as the target. Samples are ordered by run, then pixel.
timeseries::WindowSet stack_windows_for_training(const ImageStack& stack);

}  // namespace smartcast::vegindex
