#include "smartcast/vegindex.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "smartcast/error.hpp"

namespace smartcast::vegindex {

namespace {

long day_number(Date d) { return static_cast<long>(d.time_since_epoch().count()); }

}  // namespace

std::string_view to_string(IndexKind kind) { return kind == IndexKind::ndvi ? "ndvi" : "ndwi"; }

IndexKind index_kind_from_string(std::string_view name) {
  if (name == "ndvi" || name == "NDVI") return IndexKind::ndvi;
  if (name == "ndwi" || name == "NDWI") return IndexKind::ndwi;
  throw ConfigError("unknown index kind '" + std::string(name) + "', expected ndvi or ndwi");
}

bool IndexImage::is_nodata(float v) const { return std::isnan(nodata) ? std::isnan(v) : v == nodata; }

IndexImage compute_index(const BandGrid& grid, IndexKind kind, const BandMapping& mapping) {
  grid.validate();
  const auto nir = grid.band(grid.band_index(mapping.nir));
  const auto other = grid.band(grid.band_index(kind == IndexKind::ndvi ? mapping.red : mapping.swir));

  IndexImage image{grid.width, grid.height, kind, grid.nodata, std::vector<float>(grid.pixel_count())};
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    const float a = nir[i];
    const float b = other[i];
    if (grid.is_nodata(a) || grid.is_nodata(b)) {
      image.values[i] = grid.nodata;
      continue;
    }
    const double den = static_cast<double>(a) + static_cast<double>(b);
    if (den == 0.0) {
      image.values[i] = grid.nodata;
      continue;
    }
    const double ratio = (static_cast<double>(a) - static_cast<double>(b)) / den;
    image.values[i] = static_cast<float>(std::clamp(ratio, -1.0, 1.0));
  }
  return image;
}

void ImageStack::add(Date date, IndexImage image) {
  if (image.width <= 0 || image.height <= 0 || image.values.size() != image.pixel_count()) {
    throw DataError("image stack: malformed index image");
  }
  if (!entries_.empty()) {
    if (!(entries_.back().date < date)) {
      throw DataError("image stack: dates must be strictly increasing (" + format_iso_date(date) + " after " +
                      format_iso_date(entries_.back().date) + ")");
    }
    if (image.width != width() || image.height != height()) {
      throw DataError("image stack: image " + format_iso_date(date) + " has a different shape");
    }
  }
  entries_.push_back({date, std::move(image)});
}

PixelWindows flatten_stack(const ImageStack& stack, Date target_date) {
  const auto& entries = stack.entries();
  const auto end = std::lower_bound(entries.begin(), entries.end(), target_date,
                                    [](const ImageStack::Entry& e, Date d) { return e.date < d; });
  const auto available = static_cast<std::size_t>(end - entries.begin());
  if (available < kHistoryLength) {
    throw DataError("insufficient history: " + std::to_string(available) + " image(s) before " +
                    format_iso_date(target_date) + ", need " + std::to_string(kHistoryLength));
  }
  const std::size_t first = available - kHistoryLength;

  PixelWindows out;
  out.pixel_count = entries.front().image.pixel_count();
  out.target_date = target_date;
  for (std::size_t k = 0; k < kHistoryLength; ++k) out.days_to_target[k] = days_between(entries[first + k].date, target_date);

  out.inputs.resize(out.pixel_count * kHistoryLength * kPixelFeatures);
  out.valid.assign(out.pixel_count, 1);
  for (std::size_t p = 0; p < out.pixel_count; ++p) {
    for (std::size_t k = 0; k < kHistoryLength; ++k) {
      const IndexImage& img = entries[first + k].image;
      const float v = img.values[p];
      if (img.is_nodata(v)) out.valid[p] = 0;
      const std::size_t at = (p * kHistoryLength + k) * kPixelFeatures;
      out.inputs[at] = static_cast<double>(v);
      out.inputs[at + 1] = static_cast<double>(out.days_to_target[k]);
    }
  }
  return out;
}

std::vector<float> flatten_image(const IndexImage& image) { return image.values; }

std::vector<float> predict_pixels(const lstm::Seq2SeqModel& model, const PixelWindows& windows, float nodata) {
  const auto& arch = model.architecture();
  if (arch.input_dim != static_cast<int>(kPixelFeatures) || arch.horizon != 1) {
    throw std::invalid_argument("predict_pixels: model must take 2 features and predict 1 step");
  }
  if (windows.valid.size() != windows.pixel_count) throw std::invalid_argument("predict_pixels: mask size mismatch");

  std::vector<float> out(windows.pixel_count, nodata);
  lstm::Matrix sequence(static_cast<Eigen::Index>(kHistoryLength), static_cast<Eigen::Index>(kPixelFeatures));
  for (std::size_t p = 0; p < windows.pixel_count; ++p) {
    if (!windows.valid[p]) continue;
    const auto w = windows.window(p);
    for (std::size_t k = 0; k < w.size(); ++k) sequence.data()[k] = w[k];
    const double y = lstm::predict(model, sequence)(0);
    out[p] = static_cast<float>(std::clamp(y, -1.0, 1.0));
  }
  return out;
}

IndexImage reshape_to_image(std::span<const float> flat, int width, int height, IndexKind kind, float nodata) {
  if (width <= 0 || height <= 0 ||
      flat.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw std::invalid_argument("reshape_to_image: length " + std::to_string(flat.size()) + " does not match " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  return IndexImage{width, height, kind, nodata, std::vector<float>(flat.begin(), flat.end())};
}

timeseries::WindowSet stack_windows_for_training(const ImageStack& stack) {
  const auto& entries = stack.entries();
  if (entries.size() < kHistoryLength + 1) {
    throw DataError("stack of " + std::to_string(entries.size()) + " image(s) is too short, need at least " +
                    std::to_string(kHistoryLength + 1));
  }
  timeseries::WindowSet ws;
  ws.input_length = kHistoryLength;
  ws.n_features = kPixelFeatures;
  ws.horizon = 1;

  const std::size_t pixels = entries.front().image.pixel_count();
  for (std::size_t run = 0; run + kHistoryLength < entries.size(); ++run) {
    const auto& target = entries[run + kHistoryLength];
    const timeseries::SampleSpan span{day_number(entries[run].date), day_number(entries[run + kHistoryLength - 1].date),
                                      day_number(target.date), day_number(target.date)};
    for (std::size_t p = 0; p < pixels; ++p) {
      bool ok = !target.image.is_nodata(target.image.values[p]);
      for (std::size_t k = 0; ok && k < kHistoryLength; ++k) {
        const auto& img = entries[run + k].image;
        ok = !img.is_nodata(img.values[p]);
      }
      if (!ok) continue;
      for (std::size_t k = 0; k < kHistoryLength; ++k) {
        const auto& e = entries[run + k];
        ws.inputs.push_back(static_cast<double>(e.image.values[p]));
        ws.inputs.push_back(static_cast<double>(days_between(e.date, target.date)));
      }
      ws.targets.push_back(static_cast<double>(target.image.values[p]));
      ws.spans.push_back(span);
    }
  }
  return ws;
}

}  // namespace smartcast::vegindex
