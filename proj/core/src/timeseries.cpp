#include "smartcast/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <tuple>

#include "smartcast/error.hpp"
#include "text_util.hpp"

namespace smartcast::timeseries {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

long day_number(Date d) { return static_cast<long>(d.time_since_epoch().count()); }

std::string where(std::string_view source, std::size_t line) {
  return std::string(source) + ":" + std::to_string(line);
}

std::optional<double> parse_field(std::string_view field, std::string_view name, std::string_view source,
                                  std::size_t line) {
  field = detail::trim(field);
  if (field.empty()) return std::nullopt;
  const auto v = detail::parse_double(field);
  if (!v || !std::isfinite(*v)) {
    throw DataError(where(source, line) + ": malformed " + std::string(name) + " value '" + std::string(field) +
                    "'");
  }
  return v;
}

}  // namespace

std::optional<double> SensorRecord::feature(std::size_t f) const {
  switch (f) {
    case kMoisture: return moisture;
    case kSoilTemp: return soil_temp;
    case kSalinity: return salinity;
    case kRainfall: return rainfall;
    default: throw std::out_of_range("feature index out of range");
  }
}

bool is_valid_depth(int depth_cm) { return depth_cm >= 10 && depth_cm <= 120 && depth_cm % 10 == 0; }

std::vector<SensorRecord> parse_sensor_csv(std::istream& in, std::string_view source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(std::string(source) + ": empty file, header missing");
  if (detail::trim(line) != kSensorCsvHeader) {
    throw DataError(std::string(source) + ":1: bad header, expected '" + std::string(kSensorCsvHeader) + "'");
  }

  std::vector<SensorRecord> records;
  std::map<std::tuple<std::string, int, long>, std::size_t> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    const auto fields = detail::split(text, ',');
    if (fields.size() != 7) {
      throw DataError(where(source, line_no) + ": expected 7 fields, found " + std::to_string(fields.size()));
    }

    SensorRecord rec;
    try {
      rec.date = parse_iso_date(detail::trim(fields[0]));
    } catch (const DataError& e) {
      throw DataError(where(source, line_no) + ": " + e.what());
    }
    rec.sensor_id = std::string(detail::trim(fields[1]));
    if (rec.sensor_id.empty()) throw DataError(where(source, line_no) + ": empty sensor_id");
    const auto depth = detail::parse_int(detail::trim(fields[2]));
    if (!depth || !is_valid_depth(static_cast<int>(*depth))) {
      throw DataError(where(source, line_no) + ": depth_cm '" + std::string(fields[2]) +
                      "' not in {10,20,...,120}");
    }
    rec.depth_cm = static_cast<int>(*depth);
    rec.moisture = parse_field(fields[3], "moisture", source, line_no);
    rec.soil_temp = parse_field(fields[4], "soil_temp", source, line_no);
    rec.salinity = parse_field(fields[5], "salinity", source, line_no);
    rec.rainfall = parse_field(fields[6], "rainfall", source, line_no);

    if (rec.moisture && (*rec.moisture < 0.0 || *rec.moisture > 100.0)) {
      throw DataError(where(source, line_no) + ": moisture " + detail::format_double(*rec.moisture) +
                      " out of range [0, 100]");
    }
    if (rec.rainfall && *rec.rainfall < 0.0) {
      throw DataError(where(source, line_no) + ": rainfall " + detail::format_double(*rec.rainfall) +
                      " is negative");
    }

    const auto key = std::make_tuple(rec.sensor_id, rec.depth_cm, day_number(rec.date));
    const auto [it, inserted] = seen.emplace(key, line_no);
    if (!inserted) {
      throw DataError(where(source, line_no) + ": duplicate key (" + rec.sensor_id + ", " +
                      std::to_string(rec.depth_cm) + ", " + format_iso_date(rec.date) + ") first seen on line " +
                      std::to_string(it->second));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<SensorRecord> load_sensor_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sensor CSV '" + path.string() + "'");
  return parse_sensor_csv(in, path.string());
}

void write_sensor_csv(std::ostream& out, std::span<const SensorRecord> records) {
  out << kSensorCsvHeader << '\n';
  for (const auto& r : records) {
    out << format_iso_date(r.date) << ',' << r.sensor_id << ',' << r.depth_cm;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      out << ',';
      if (const auto v = r.feature(f)) out << detail::format_double(*v);
    }
    out << '\n';
  }
}

SensorSeries build_series(std::span<const SensorRecord> records, std::string_view sensor_id, int depth_cm,
                          const SeriesOptions& options) {
  std::vector<const SensorRecord*> matching;
  for (const auto& r : records) {
    if (r.sensor_id == sensor_id && r.depth_cm == depth_cm) matching.push_back(&r);
  }
  const std::string key = "(" + std::string(sensor_id) + ", " + std::to_string(depth_cm) + " cm)";
  if (matching.empty()) throw DataError("no records for sensor " + key);
  if (matching.size() < 2) throw DataError("insufficient data for sensor " + key + ": need at least 2 records");

  std::stable_sort(matching.begin(), matching.end(),
                   [](const SensorRecord* a, const SensorRecord* b) { return a->date < b->date; });
  for (std::size_t i = 1; i < matching.size(); ++i) {
    if (matching[i]->date == matching[i - 1]->date) {
      throw DataError("duplicate date " + format_iso_date(matching[i]->date) + " for sensor " + key);
    }
  }

  const Date first = matching.front()->date;
  const std::size_t length = static_cast<std::size_t>(days_between(first, matching.back()->date)) + 1;

  SensorSeries series;
  series.sensor_id = std::string(sensor_id);
  series.depth_cm = depth_cm;
  series.dates.resize(length);
  series.features.assign(length, FeatureRow{kNaN, kNaN, kNaN, kNaN});
  series.filled.assign(length, 0);
  for (std::size_t t = 0; t < length; ++t) series.dates[t] = first + std::chrono::days{t};
  for (const auto* r : matching) {
    auto& row = series.features[static_cast<std::size_t>(days_between(first, r->date))];
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      if (const auto v = r->feature(f)) row[f] = *v;
    }
  }

  // Linear gap fill, column by column. Observed values are never touched.
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::size_t t = 0;
    while (t < length) {
      if (!std::isnan(series.features[t][f])) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end < length && std::isnan(series.features[end][f])) ++end;
      const std::size_t gap = end - t;
      if (t == 0 || end == length) {
        throw DataError("unfillable gap of " + std::to_string(gap) + " day(s) at the " +
                        (t == 0 ? "start" : "end") + " of sensor " + key + " starting " +
                        format_iso_date(series.dates[t]));
      }
      if (gap > static_cast<std::size_t>(options.max_gap)) {
        throw DataError("unfillable gap of " + std::to_string(gap) + " day(s) (max_gap " +
                        std::to_string(options.max_gap) + ") in sensor " + key + " starting " +
                        format_iso_date(series.dates[t]));
      }
      const double lo = series.features[t - 1][f];
      const double hi = series.features[end][f];
      const double span = static_cast<double>(gap + 1);
      for (std::size_t k = t; k < end; ++k) {
        const double alpha = static_cast<double>(k - t + 1) / span;
        series.features[k][f] = lo + alpha * (hi - lo);
        series.filled[k] = 1;
      }
      t = end;
    }
  }
  return series;
}

std::vector<std::pair<std::string, int>> series_keys(std::span<const SensorRecord> records) {
  std::vector<std::pair<std::string, int>> keys;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& r : records) {
    auto key = std::make_pair(r.sensor_id, r.depth_cm);
    if (seen.insert(key).second) keys.push_back(std::move(key));
  }
  return keys;
}

Scaler::Scaler(std::vector<double> mean, std::vector<double> stddev) : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size()) throw std::invalid_argument("scaler mean/stddev size mismatch");
  for (double s : stddev_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("degenerate scaler: standard deviation must be > 0");
  }
}

Scaler Scaler::identity(std::size_t n_features) {
  return Scaler(std::vector<double>(n_features, 0.0), std::vector<double>(n_features, 1.0));
}

Scaler Scaler::fit(std::span<const double> rows, std::size_t n_features) {
  if (n_features == 0 || rows.size() % n_features != 0) throw std::invalid_argument("scaler: ragged rows");
  const std::size_t n = rows.size() / n_features;
  if (n < 2) throw DataError("degenerate scaler: need at least 2 rows");
  std::vector<double> mean(n_features, 0.0);
  std::vector<double> stddev(n_features, 0.0);
  for (std::size_t f = 0; f < n_features; ++f) {
    bool distinct = false;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = rows[i * n_features + f];
      sum += v;
      if (v != rows[f]) distinct = true;
    }
    if (!distinct) throw DataError("degenerate scaler: feature " + std::to_string(f) + " is constant");
    mean[f] = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = rows[i * n_features + f] - mean[f];
      ss += d * d;
    }
    stddev[f] = std::sqrt(ss / static_cast<double>(n));
  }
  return Scaler(std::move(mean), std::move(stddev));
}

void Scaler::apply_rows(std::span<double> rows) const {
  const std::size_t nf = size();
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = apply(i % nf, rows[i]);
}

void Scaler::invert_rows(std::span<double> rows) const {
  const std::size_t nf = size();
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = invert(i % nf, rows[i]);
}

Scaler fit_scaler(const SensorSeries& series, std::size_t begin, std::size_t end) {
  if (begin >= end || end > series.size()) throw std::invalid_argument("fit_scaler: bad train range");
  std::vector<double> rows;
  rows.reserve((end - begin) * kFeatureCount);
  for (std::size_t t = begin; t < end; ++t) rows.insert(rows.end(), series.features[t].begin(), series.features[t].end());
  return Scaler::fit(rows, kFeatureCount);
}

SensorSeries apply_scaler(const Scaler& scaler, SensorSeries series) {
  if (scaler.size() != kFeatureCount) throw std::invalid_argument("apply_scaler: scaler has wrong feature count");
  for (auto& row : series.features) scaler.apply_rows(row);
  return series;
}

WindowSet WindowSet::select(std::span<const std::size_t> indices) const {
  WindowSet out;
  out.input_length = input_length;
  out.n_features = n_features;
  out.horizon = horizon;
  out.inputs.reserve(indices.size() * input_length * n_features);
  out.targets.reserve(indices.size() * horizon);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("WindowSet::select index out of range");
    const auto in = input(i);
    const auto tg = target(i);
    out.inputs.insert(out.inputs.end(), in.begin(), in.end());
    out.targets.insert(out.targets.end(), tg.begin(), tg.end());
    out.spans.push_back(spans[i]);
  }
  return out;
}

void WindowSet::append(const WindowSet& other) {
  if (other.empty()) return;
  if (empty() && inputs.empty()) {
    input_length = other.input_length;
    n_features = other.n_features;
    horizon = other.horizon;
  }
  if (other.input_length != input_length || other.n_features != n_features || other.horizon != horizon) {
    throw std::invalid_argument("WindowSet::append shape mismatch");
  }
  inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
  targets.insert(targets.end(), other.targets.begin(), other.targets.end());
  spans.insert(spans.end(), other.spans.begin(), other.spans.end());
}

WindowSet make_windows(const SensorSeries& series, std::size_t input_length, std::size_t horizon) {
  if (input_length == 0 || horizon == 0) throw std::invalid_argument("make_windows: zero window length");
  const std::size_t T = series.size();
  if (T < input_length + horizon) {
    throw DataError("series of " + std::to_string(T) + " days yields no windows for input length " +
                    std::to_string(input_length) + " and horizon " + std::to_string(horizon));
  }
  const std::size_t n = T - input_length - horizon + 1;

  WindowSet ws;
  ws.input_length = input_length;
  ws.n_features = kFeatureCount;
  ws.horizon = horizon;
  ws.inputs.reserve(n * input_length * kFeatureCount);
  ws.targets.reserve(n * horizon);
  ws.spans.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = i; t < i + input_length; ++t) {
      ws.inputs.insert(ws.inputs.end(), series.features[t].begin(), series.features[t].end());
    }
    for (std::size_t t = i + input_length; t < i + input_length + horizon; ++t) {
      ws.targets.push_back(series.features[t][kMoisture]);
    }
    ws.spans.push_back({day_number(series.dates[i]), day_number(series.dates[i + input_length - 1]),
                        day_number(series.dates[i + input_length]),
                        day_number(series.dates[i + input_length + horizon - 1])});
  }
  return ws;
}

Split chrono_split(const WindowSet& windows, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("chrono_split: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = windows.size();
  // The epsilon keeps exact products such as 10 * 0.8 from flooring to 7.
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - test_fraction) + 1e-9));
  if (n_train == 0 || n_train >= n) {
    throw DataError("chrono_split of " + std::to_string(n) + " sample(s) at test_fraction " +
                    detail::format_double(test_fraction) + " leaves an empty side");
  }

  std::vector<std::size_t> test_idx;
  long first_test_day = std::numeric_limits<long>::max();
  for (std::size_t i = n_train; i < n; ++i) {
    test_idx.push_back(i);
    first_test_day = std::min(first_test_day, windows.spans[i].input_begin);
  }
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < n_train; ++i) {
    if (windows.spans[i].target_end < first_test_day) train_idx.push_back(i);
  }
  if (train_idx.empty()) {
    throw DataError("chrono_split: every train sample overlaps the test period; need more data");
  }
  return {windows.select(train_idx), windows.select(test_idx)};
}

}  // namespace smartcast::timeseries
