#include "smartcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "smartcast/config.hpp"
#include "smartcast/error.hpp"
#include "text_util.hpp"

namespace smartcast::pipeline {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kYear = 365.0;
constexpr int kBumps = 4;
constexpr double kOrbitDays = 200.0;

// Hand-rolled transforms keep the output identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

double base_level(int depth) { return 18.0 + 0.08 * depth; }
double seasonal_amplitude(int depth) { return 5.0 * std::exp(-depth / 150.0); }
double seasonal_lag(int depth) { return depth / 4.0; }
double water_delay(int depth) { return depth / 5.0; }
double water_timescale(int depth) { return 1.5 + depth / 30.0; }
double water_gain(int depth) { return 0.6 * std::exp(-depth / 150.0); }

// Gamma-like pulse starting `delay` days after the input and peaking `tau`
// days later with unit height.
double water_kernel(double lag_days, double delay, double tau) {
  const double r = (lag_days - delay) / tau;
  if (r <= 0.0) return 0.0;
  return r * std::exp(1.0 - r);
}

// Gaussian bump circling (cx, cy) so it never leaves the grid.
struct Bump {
  double cx, cy, radius, omega, phase, amplitude, sigma;
};

}  // namespace

std::vector<SensorLocation> load_sensor_locations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sensor locations '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "sensor_id,x,y") {
    throw DataError(path.string() + ":1: bad header, expected 'sensor_id,x,y'");
  }
  std::vector<SensorLocation> out;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = detail::split(text, ',');
    if (fields.size() != 3) throw DataError(where + "expected 3 fields");
    SensorLocation loc{std::string(detail::trim(fields[0])), 0.0, 0.0};
    const auto x = detail::parse_double(detail::trim(fields[1]));
    const auto y = detail::parse_double(detail::trim(fields[2]));
    if (loc.sensor_id.empty() || !x || !y || !std::isfinite(*x) || !std::isfinite(*y)) {
      throw DataError(where + "bad sensor location");
    }
    if (!seen.insert(loc.sensor_id).second) throw DataError(where + "duplicate sensor '" + loc.sensor_id + "'");
    loc.x = *x;
    loc.y = *y;
    out.push_back(std::move(loc));
  }
  return out;
}

void save_sensor_locations(const std::filesystem::path& path, const std::vector<SensorLocation>& locations) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "sensor_id,x,y\n";
  for (const auto& l : locations) {
    out << l.sensor_id << ',' << detail::format_double(l.x) << ',' << detail::format_double(l.y) << '\n';
  }
}

SynthSpec SynthSpec::noiseless() {
  SynthSpec s;
  s.rain_probability = 0.0;
  s.irrigation_mm = 0.0;
  s.noise_sd = 0.0;
  s.pixel_noise_sd = 0.0;
  s.missing_rate = 0.0;
  return s;
}

void SynthSpec::validate() const {
  if (sensors <= 0 || days <= 0 || width <= 0 || height <= 0 || images <= 0) {
    throw ConfigError("synthetic scenario dimensions must be positive");
  }
  if (depths.empty()) throw ConfigError("synthetic scenario needs at least one depth");
  for (int d : depths) {
    if (!timeseries::is_valid_depth(d)) throw ConfigError("invalid synthetic depth " + std::to_string(d));
  }
  if (std::set<int>(depths.begin(), depths.end()).size() != depths.size()) {
    throw ConfigError("synthetic depths must be distinct");
  }
  if (!(cell_size > 0.0)) throw ConfigError("synthetic cell_size must be positive");
  if (min_image_gap < 1 || max_image_gap < min_image_gap) throw ConfigError("bad synthetic image gap range");
  if (static_cast<long>(images) * max_image_gap >= days) {
    throw ConfigError("synthetic image dates do not fit inside the sensor period");
  }
  if (irrigation_mm < 0.0 || min_irrigation_interval < 1 || max_irrigation_interval < min_irrigation_interval) {
    throw ConfigError("bad synthetic irrigation parameters");
  }
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(rain_probability) || !prob(missing_rate) || rain_mean_mm < 0.0 || rain_max_mm < 0.0 || noise_sd < 0.0 || pixel_noise_sd < 0.0 ||
      ar_coefficient <= -1.0 || ar_coefficient >= 1.0) {
    throw ConfigError("bad synthetic noise or rain parameters");
  }
}

SynthData synth_generate(std::uint64_t seed, const SynthSpec& spec) {
  spec.validate();
  Rng rng(seed);
  SynthData out;
  const double dx = spec.width * spec.cell_size;
  const double dy = spec.height * spec.cell_size;

  for (int s = 0; s < spec.sensors; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "S%02d", s + 1);
    const double x = dx * rng.uniform(0.1, 0.9);
    const double y = dy * rng.uniform(0.1, 0.9);
    out.locations.push_back({id, x, y});
  }

  const double phase = rng.uniform(0.0, kYear);
  std::vector<double> rain(static_cast<std::size_t>(spec.days), 0.0);
  for (auto& r : rain) {
    if (rng.uniform() < spec.rain_probability) {
      r = std::min(spec.rain_max_mm, -spec.rain_mean_mm * std::log(1.0 - rng.uniform()));
    }
  }

  const auto spatial = [&](double x, double y) {
    return 3.0 * std::sin(kTwoPi * x / dx + 0.5) * std::cos(std::numbers::pi * y / dy) + 1.5 * x / dx;
  };

  // [sensor][depth][day]
  for (int s = 0; s < spec.sensors; ++s) {
    const auto& loc = out.locations[static_cast<std::size_t>(s)];
    const double rain_factor = rng.uniform(0.8, 1.2);
    const int interval = rng.integer(spec.min_irrigation_interval, spec.max_irrigation_interval);
    const int first = rng.integer(0, interval - 1);
    std::vector<double> water(rain.size());
    for (std::size_t t = 0; t < water.size(); ++t) {
      water[t] = rain[t] * rain_factor;
      if (static_cast<int>(t) >= first && (static_cast<int>(t) - first) % interval == 0) water[t] += spec.irrigation_mm;
    }
    for (int depth : spec.depths) {
      const double delay = water_delay(depth);
      const double tau = water_timescale(depth);
      const int reach = static_cast<int>(std::ceil(delay + 8.0 * tau));
      double noise = 0.0;
      bool prev_blank = false;
      for (int t = 0; t < spec.days; ++t) {
        double pulse = 0.0;
        for (int k = std::max(0, t - reach); k <= t; ++k) {
          pulse += water[static_cast<std::size_t>(k)] * water_kernel(t - k, delay, tau);
        }
        noise = spec.ar_coefficient * noise + spec.noise_sd * rng.normal();
        const double season = std::sin(kTwoPi * (t + phase - seasonal_lag(depth)) / kYear);
        const double moisture = std::clamp(
            base_level(depth) + spatial(loc.x, loc.y) + seasonal_amplitude(depth) * season + water_gain(depth) * pulse + noise,
            0.0, 100.0);
        // The warm season is the dry season.
        const double temp = 15.0 - 8.0 * season + 0.3 * rng.normal();
        const double salinity = 1.2 + 0.05 * spatial(loc.x, loc.y) - 0.01 * water_gain(depth) * pulse + 0.02 * rng.normal();

        timeseries::SensorRecord rec;
        rec.date = spec.start + std::chrono::days{t};
        rec.sensor_id = loc.sensor_id;
        rec.depth_cm = depth;
        rec.moisture = moisture;
        rec.soil_temp = temp;
        rec.salinity = salinity;
        rec.rainfall = water[static_cast<std::size_t>(t)];

        const double u = rng.uniform();
        const int which = rng.integer(0, 3);
        const bool interior = t > 0 && t + 1 < spec.days;
        if (interior && !prev_blank && u < spec.missing_rate) {
          switch (which) {
            case 0: rec.moisture.reset(); break;
            case 1: rec.soil_temp.reset(); break;
            case 2: rec.salinity.reset(); break;
            default: rec.rainfall.reset(); break;
          }
          prev_blank = true;
        } else {
          prev_blank = false;
        }
        out.records.push_back(std::move(rec));
      }
    }
  }

  std::vector<int> offsets(static_cast<std::size_t>(spec.images));
  {
    int t = spec.days - 1 - rng.integer(0, 2);
    for (int i = spec.images - 1; i >= 0; --i) {
      offsets[static_cast<std::size_t>(i)] = t;
      t -= rng.integer(spec.min_image_gap, spec.max_image_gap);
    }
  }

  std::vector<Bump> bumps(kBumps);
  const double extent = std::min(dx, dy);
  for (auto& b : bumps) {
    b.cx = dx * rng.uniform(0.2, 0.8);
    b.cy = dy * rng.uniform(0.2, 0.8);
    b.radius = extent * rng.uniform(0.15, 0.3);
    b.omega = (rng.uniform() < 0.5 ? -1.0 : 1.0) * kTwoPi / (kOrbitDays * rng.uniform(0.7, 1.3));
    b.phase = rng.uniform(0.0, kTwoPi);
    b.amplitude = (rng.uniform() < 0.3 ? -1.0 : 1.0) * rng.uniform(0.12, 0.28);
    b.sigma = extent * rng.uniform(0.12, 0.25);
  }

  const std::size_t pixels = static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height);
  for (int i = 0; i < spec.images; ++i) {
    const int t = offsets[static_cast<std::size_t>(i)];
    const Date date = spec.start + std::chrono::days{t};
    vegindex::BandGrid grid(spec.width, spec.height, {"B04", "B08", "B11"});
    vegindex::IndexImage ndvi{spec.width, spec.height, vegindex::IndexKind::ndvi, grid.nodata,
                              std::vector<float>(pixels)};
    auto red = grid.band(0);
    auto nir = grid.band(1);
    auto swir = grid.band(2);
    const double season = 0.05 * std::sin(kTwoPi * (t + phase) / kYear);
    for (int r = 0; r < spec.height; ++r) {
      for (int c = 0; c < spec.width; ++c) {
        const double px = (c + 0.5) * spec.cell_size;
        const double py = (r + 0.5) * spec.cell_size;
        double n = 0.3 + season;
        for (const auto& b : bumps) {
          const double ex = px - (b.cx + b.radius * std::cos(b.omega * t + b.phase));
          const double ey = py - (b.cy + b.radius * std::sin(b.omega * t + b.phase));
          n += b.amplitude * std::exp(-(ex * ex + ey * ey) / (2.0 * b.sigma * b.sigma));
        }
        n = std::clamp(n + spec.pixel_noise_sd * rng.normal(), -0.2, 0.95);
        const double w = std::clamp(0.8 * n - 0.1, -0.2, 0.95);
        const double nir_v = 0.45 + 0.05 * std::cos(kTwoPi * px / dx) * std::sin(kTwoPi * py / dy);
        const auto at = static_cast<std::size_t>(r) * static_cast<std::size_t>(spec.width) + static_cast<std::size_t>(c);
        nir[at] = static_cast<float>(nir_v);
        red[at] = static_cast<float>(nir_v * (1.0 - n) / (1.0 + n));
        swir[at] = static_cast<float>(nir_v * (1.0 - w) / (1.0 + w));
        ndvi.values[at] = static_cast<float>(n);
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.bgrid", i);
    out.image_dates.push_back({date, name});
    out.images.push_back(std::move(grid));
    out.ndvi.push_back(std::move(ndvi));
  }
  return out;
}

SynthFiles synth_write(const SynthData& data, const SynthSpec& spec, std::uint64_t seed,
                       const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "stack");
  SynthFiles files{dir / "sensors.csv", dir / "sensor_locations.csv", dir / "stack" / "manifest.csv", dir / "config.json"};

  {
    std::ofstream out(files.sensor_csv);
    if (!out) throw DataError("cannot open '" + files.sensor_csv.string() + "' for writing");
    timeseries::write_sensor_csv(out, data.records);
  }
  save_sensor_locations(files.sensor_locations, data.locations);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    vegindex::save_band_grid(dir / "stack" / data.image_dates[i].path, data.images[i]);
  }
  vegindex::write_stack_manifest(files.stack_manifest, data.image_dates);

  // Paths are stored relative to the scenario directory so it can be moved.
  RunConfig config;
  config.seed = seed;
  config.paths = {"sensors.csv", "sensor_locations.csv", fs::path("stack") / "manifest.csv", "output"};
  config.grid.geometry = {spec.width, spec.height, 0.0, 0.0, spec.cell_size};
  config.soil.encoder_hidden = 32;
  config.soil.decoder_hidden = 32;
  config.soil.head_hidden = 16;
  config.soil.residual = true;
  config.soil.validation_fraction = 0.0;
  config.soil.train.epochs = 100;
  config.index.residual = true;
  config.index.train.epochs = 20;
  config.index.train.batch_size = 64;
  std::ofstream out(files.config);
  if (!out) throw DataError("cannot open '" + files.config.string() + "' for writing");
  out << serialize_config(config);
  return files;
}

}  // namespace smartcast::pipeline
