#include "smartcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_util.hpp"

namespace smartcast::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSoilInitStream = 100;
constexpr std::uint64_t kSoilTrainStream = 300;
constexpr std::uint64_t kIndexInitStream = 500;
constexpr std::uint64_t kIndexTrainStream = 501;
constexpr std::uint64_t kGradcheckStream = 700;
// Three variogram parameters from fewer than 15 pairs is noise fitting.
constexpr std::size_t kMinFitSamples = 6;

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

// Moves every entry of `src` into `dst`, merging directories and replacing files.
void merge_move(const fs::path& src, const fs::path& dst) {
  fs::create_directories(dst);
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(src)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& from : entries) {
    const fs::path to = dst / from.filename();
    if (fs::is_directory(from) && fs::is_directory(to)) {
      merge_move(from, to);
      fs::remove(from);
      continue;
    }
    if (fs::exists(to)) fs::remove_all(to);
    fs::rename(from, to);
  }
}

void scale_windows(const timeseries::Scaler& scaler, timeseries::WindowSet& ws, std::size_t target_feature) {
  scaler.apply_rows(ws.inputs);
  for (double& t : ws.targets) t = scaler.apply(target_feature, t);
}

// Holds out the chronological tail of `train` for validation when asked to.
void split_validation(const timeseries::WindowSet& train, double fraction, timeseries::WindowSet& fit,
                      timeseries::WindowSet& val) {
  if (fraction <= 0.0) {
    fit.append(train);
    return;
  }
  auto split = timeseries::chrono_split(train, fraction);
  fit.append(split.train);
  val.append(split.test);
}

double largest_separation(std::span<const kriging::SamplePoint> samples) {
  double best = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      best = std::max(best, std::hypot(samples[i].x - samples[j].x, samples[i].y - samples[j].y));
    }
  }
  return best;
}

// Zero nugget, sample variance as sill, half the sensor spread as range.
kriging::Variogram heuristic_variogram(std::span<const kriging::SamplePoint> samples, const kriging::GridGeometry& g) {
  double mean = 0.0;
  for (const auto& s : samples) mean += s.value;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.value - mean) * (s.value - mean);
  var /= static_cast<double>(samples.size());
  double range = largest_separation(samples) / 2.0;
  if (!(range > 0.0)) range = std::max(g.width, g.height) * g.cell_size / 2.0;
  return {0.0, var > 0.0 ? var : 1.0, range};
}

std::string depth_name(int depth) { return "depth_" + std::to_string(depth) + "cm"; }

json finite_number(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("report metric '" + what + "' is not finite");
  return v;
}

lstm::SequenceBatch to_batch(const lstm::Matrix& sequence) {
  lstm::SequenceBatch out(static_cast<std::size_t>(sequence.rows()));
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) out[static_cast<std::size_t>(t)] = sequence.row(t).transpose();
  return out;
}

vegindex::BandGrid index_to_band_grid(const vegindex::IndexImage& image) {
  vegindex::BandGrid grid(image.width, image.height, {std::string(vegindex::to_string(image.kind))}, image.nodata);
  std::copy(image.values.begin(), image.values.end(), grid.band(0).begin());
  return grid;
}

void write_index_heatmap(const fs::path& path, const vegindex::IndexImage& image) {
  std::vector<double> values(image.values.begin(), image.values.end());
  std::vector<unsigned char> blank(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) blank[i] = image.is_nodata(image.values[i]) ? 1 : 0;
  vegindex::write_pgm_heatmap(path, values, image.width, image.height, blank);
}

json soil_json(const SoilDepthMetrics& m) {
  const std::string tag = std::to_string(m.depth_cm) + "cm.";
  return {{"depth_cm", m.depth_cm},
          {"sensors", m.sensors},
          {"train_windows", m.train_windows},
          {"validation_windows", m.validation_windows},
          {"test_windows", m.test_windows},
          {"best_epoch", m.best_epoch},
          {"test_rmse", finite_number(m.test_rmse, tag + "test_rmse")},
          {"test_mae", finite_number(m.test_mae, tag + "test_mae")},
          {"persistence_rmse", finite_number(m.persistence_rmse, tag + "persistence_rmse")}};
}

json index_json(const IndexMetrics& m) {
  return {{"index", std::string(vegindex::to_string(m.kind))},
          {"images", m.images},
          {"train_samples", m.train_samples},
          {"validation_samples", m.validation_samples},
          {"test_samples", m.test_samples},
          {"best_epoch", m.best_epoch},
          {"test_rmse", finite_number(m.test_rmse, "index.test_rmse")},
          {"test_mae", finite_number(m.test_mae, "index.test_mae")},
          {"persistence_rmse", finite_number(m.persistence_rmse, "index.persistence_rmse")},
          {"persistence_mae", finite_number(m.persistence_mae, "index.persistence_mae")}};
}

json interpolation_json(const DepthInterpolation& d) {
  const std::string tag = std::to_string(d.depth_cm) + "cm.";
  json loo = nullptr;
  if (d.loo) loo = {{"raw", finite_number(d.loo->raw, tag + "loo")}, {"clamped", d.loo->clamped}};
  json variogram = {{"nugget", finite_number(d.variogram.nugget, tag + "nugget")},
                    {"sill", finite_number(d.variogram.sill, tag + "sill")},
                    {"range", finite_number(d.variogram.range, tag + "range")},
                    {"source", d.variogram_source}};
  if (!d.variogram_note.empty()) variogram["note"] = d.variogram_note;
  return {{"kriging_samples", d.samples},
          {"variogram", variogram},
          {"loo_score", loo},
          {"layer", "volume/" + depth_name(d.depth_cm) + ".bgrid"},
          {"heatmap", "heatmaps/" + depth_name(d.depth_cm) + ".pgm"}};
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

StagedOutput::StagedOutput(fs::path output_dir) : output_(std::move(output_dir)), staging_(output_ / "_staging") {
  fs::create_directories(output_);
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

StagedOutput::~StagedOutput() {
  if (done_) return;
  try {
    quarantine();
  } catch (...) {
  }
}

void StagedOutput::commit() {
  merge_move(staging_, output_);
  fs::remove_all(staging_);
  fs::remove_all(output_ / "quarantine");
  done_ = true;
}

fs::path StagedOutput::quarantine() {
  const fs::path q = output_ / "quarantine";
  done_ = true;
  fs::remove_all(q);
  fs::rename(staging_, q);
  return q;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<SoilDepthModel> train_soil_models(const RunConfig& config, std::span<const timeseries::SensorRecord> records,
                                              const Logger& log) {
  std::map<int, std::vector<std::string>> by_depth;
  for (const auto& [id, depth] : timeseries::series_keys(records)) by_depth[depth].push_back(id);
  if (by_depth.empty()) throw DataError("no sensor records");

  const std::size_t L = config.soil.input_length;
  const std::size_t H = timeseries::kDefaultHorizon;
  std::vector<SoilDepthModel> out;
  for (const auto& [depth, ids] : by_depth) {
    timeseries::WindowSet train, val, test;
    run_stage("timeseries", [&] {
      for (const auto& id : ids) {
        const auto series = timeseries::build_series(records, id, depth, {config.soil.max_gap});
        const auto windows = timeseries::make_windows(series, L, H);
        const auto split = timeseries::chrono_split(windows, config.soil.test_fraction);
        split_validation(split.train, config.soil.validation_fraction, train, val);
        test.append(split.test);
      }
    });

    SoilDepthModel result;
    result.depth_cm = depth;
    run_stage("train-soil", [&] {
      const auto scaler = timeseries::Scaler::fit(train.inputs, timeseries::kFeatureCount);
      auto strain = train, sval = val, stest = test;
      scale_windows(scaler, strain, timeseries::kMoisture);
      scale_windows(scaler, sval, timeseries::kMoisture);
      scale_windows(scaler, stest, timeseries::kMoisture);

      result.model = lstm::init_params(config.soil.architecture(), derive_seed(config.seed, kSoilInitStream + depth));
      result.model.set_scaler(scaler);
      result.model.set_target_feature(timeseries::kMoisture);
      auto tc = config.soil.train;
      tc.seed = derive_seed(config.seed, kSoilTrainStream + depth);
      say(log, "soil " + std::to_string(depth) + " cm: " + std::to_string(ids.size()) + " sensor(s), " +
                   std::to_string(strain.size()) + " train / " + std::to_string(sval.size()) + " val / " +
                   std::to_string(stest.size()) + " test windows");
      const auto history = lstm::train(result.model, strain, sval, tc, [&](const lstm::EpochRecord& e) {
        say(log, "  epoch " + std::to_string(e.epoch) + " train " + detail::format_double(e.train_loss) + " val " +
                     detail::format_double(e.val_loss));
      });

      const auto pred = lstm::predict_windows(result.model, stest);
      std::vector<double> persistence(test.targets.size());
      for (std::size_t i = 0; i < test.size(); ++i) {
        const double last = test.input(i)[(L - 1) * timeseries::kFeatureCount + timeseries::kMoisture];
        std::fill_n(persistence.begin() + static_cast<std::ptrdiff_t>(i * H), H, last);
      }
      auto& m = result.metrics;
      m.depth_cm = depth;
      m.sensors = ids.size();
      m.train_windows = strain.size();
      m.validation_windows = sval.size();
      m.test_windows = stest.size();
      m.best_epoch = history.best_epoch;
      m.test_rmse = lstm::rmse(pred, test.targets);
      m.test_mae = lstm::mae(pred, test.targets);
      m.persistence_rmse = lstm::rmse(persistence, test.targets);
      say(log, "soil " + std::to_string(depth) + " cm: test RMSE " + detail::format_double(m.test_rmse) +
                   ", persistence " + detail::format_double(m.persistence_rmse));
    });
    out.push_back(std::move(result));
  }
  return out;
}

vegindex::ImageStack load_index_stack(const RunConfig& config) {
  vegindex::ImageStack stack;
  for (const auto& entry : vegindex::load_stack_manifest(config.paths.stack_manifest)) {
    const auto grid = vegindex::load_band_grid(entry.path);
    try {
      grid.validate_reflectance();
    } catch (const DataError& e) {
      throw DataError(entry.path.string() + ": " + e.what());
    }
    stack.add(entry.date, vegindex::compute_index(grid, config.index.kind, config.bands));
  }
  if (stack.size() == 0) throw DataError("stack manifest lists no images");
  return stack;
}

IndexModel train_index_model(const RunConfig& config, const vegindex::ImageStack& stack, const Logger& log) {
  timeseries::WindowSet train, val, test;
  run_stage("vegindex", [&] {
    const auto windows = vegindex::stack_windows_for_training(stack);
    if (windows.empty()) throw DataError("image stack has no pixel valid across six consecutive images");
    const auto split = timeseries::chrono_split(windows, config.index.test_fraction);
    split_validation(split.train, config.index.validation_fraction, train, val);
    test.append(split.test);
  });

  IndexModel result;
  run_stage("train-index", [&] {
    const auto scaler = timeseries::Scaler::fit(train.inputs, vegindex::kPixelFeatures);
    auto strain = train, sval = val, stest = test;
    scale_windows(scaler, strain, 0);
    scale_windows(scaler, sval, 0);
    scale_windows(scaler, stest, 0);

    result.model = lstm::init_params(config.index.architecture(), derive_seed(config.seed, kIndexInitStream));
    result.model.set_scaler(scaler);
    result.model.set_target_feature(0);
    auto tc = config.index.train;
    tc.seed = derive_seed(config.seed, kIndexTrainStream);
    say(log, std::string("index model (") + std::string(vegindex::to_string(config.index.kind)) + "): " +
                 std::to_string(strain.size()) + " train / " + std::to_string(sval.size()) + " val / " +
                 std::to_string(stest.size()) + " test samples");
    const auto history = lstm::train(result.model, strain, sval, tc, [&](const lstm::EpochRecord& e) {
      say(log, "  epoch " + std::to_string(e.epoch) + " train " + detail::format_double(e.train_loss) + " val " +
                   detail::format_double(e.val_loss));
    });

    auto pred = lstm::predict_windows(result.model, stest);
    for (double& p : pred) p = std::clamp(p, -1.0, 1.0);
    std::vector<double> persistence(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      persistence[i] = test.input(i)[(vegindex::kHistoryLength - 1) * vegindex::kPixelFeatures];
    }
    auto& m = result.metrics;
    m.kind = config.index.kind;
    m.images = stack.size();
    m.train_samples = strain.size();
    m.validation_samples = sval.size();
    m.test_samples = stest.size();
    m.best_epoch = history.best_epoch;
    m.test_rmse = lstm::rmse(pred, test.targets);
    m.test_mae = lstm::mae(pred, test.targets);
    m.persistence_rmse = lstm::rmse(persistence, test.targets);
    m.persistence_mae = lstm::mae(persistence, test.targets);
    say(log, "index model: test RMSE " + detail::format_double(m.test_rmse) + ", persistence " +
                 detail::format_double(m.persistence_rmse));
  });
  return result;
}

std::vector<SensorForecast> forecast_sensors(const std::vector<SoilDepthModel>& models,
                                             std::span<const timeseries::SensorRecord> records, const RunConfig& config) {
  std::map<int, const SoilDepthModel*> by_depth;
  for (const auto& m : models) by_depth[m.depth_cm] = &m;

  std::vector<std::pair<std::string, int>> keys = timeseries::series_keys(records);
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  std::vector<SensorForecast> out;
  for (const auto& [id, depth] : keys) {
    const auto it = by_depth.find(depth);
    if (it == by_depth.end()) throw DataError("no soil model for depth " + std::to_string(depth) + " cm");
    const auto& model = it->second->model;
    const auto L = static_cast<std::size_t>(config.soil.input_length);
    const auto series = timeseries::build_series(records, id, depth, {config.soil.max_gap});
    if (series.size() < L) {
      throw DataError("sensor " + id + " at " + std::to_string(depth) + " cm has " + std::to_string(series.size()) +
                      " day(s), need " + std::to_string(L) + " to forecast");
    }
    lstm::Matrix input(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(timeseries::kFeatureCount));
    const std::size_t first = series.size() - L;
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t f = 0; f < timeseries::kFeatureCount; ++f) {
        input(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) = series.features[first + t][f];
      }
    }
    const lstm::Vector y = lstm::predict(model, input);
    out.push_back({id, depth, series.dates.back(), std::vector<double>(y.data(), y.data() + y.size())});
  }
  return out;
}

void write_forecast_csv(std::ostream& out, std::span<const SensorForecast> forecasts) {
  out << "sensor_id,depth_cm,issued,step,date,moisture\n";
  for (const auto& f : forecasts) {
    for (std::size_t k = 0; k < f.values.size(); ++k) {
      out << f.sensor_id << ',' << f.depth_cm << ',' << format_iso_date(f.issued) << ',' << k + 1 << ','
          << format_iso_date(f.issued + std::chrono::days{static_cast<int>(k) + 1}) << ','
          << detail::format_double(f.values[k]) << '\n';
    }
  }
}

std::vector<SensorForecast> load_forecast_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forecasts '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "sensor_id,depth_cm,issued,step,date,moisture") {
    throw DataError(path.string() + ":1: bad forecast header");
  }
  std::vector<SensorForecast> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto f = detail::split(text, ',');
    if (f.size() != 6) throw DataError(where + "expected 6 fields");
    const auto depth = detail::parse_int(f[1]);
    const auto step = detail::parse_int(f[3]);
    const auto value = detail::parse_double(f[5]);
    if (!depth || !step || !value) throw DataError(where + "bad number");
    const Date issued = parse_iso_date(f[2]);
    const bool continues = !out.empty() && out.back().sensor_id == f[0] && out.back().depth_cm == *depth;
    if (!continues) out.push_back({std::string(f[0]), static_cast<int>(*depth), issued, {}});
    auto& cur = out.back();
    if (cur.issued != issued || *step != static_cast<long long>(cur.values.size()) + 1) {
      throw DataError(where + "forecast steps must run 1, 2, ... per sensor and depth");
    }
    cur.values.push_back(*value);
  }
  return out;
}

vegindex::IndexImage forecast_index(const IndexModel& model, const vegindex::ImageStack& stack, Date target) {
  const auto windows = vegindex::flatten_stack(stack, target);
  const auto& last = stack.entries().back().image;
  const auto values = vegindex::predict_pixels(model.model, windows, last.nodata);
  return vegindex::reshape_to_image(values, stack.width(), stack.height(), model.metrics.kind, last.nodata);
}

Interpolation interpolate_forecasts(std::span<const SensorForecast> forecasts, std::span<const SensorLocation> locations,
                                    const RunConfig& config, int day, const vegindex::IndexImage* mask) {
  if (forecasts.empty()) throw DataError("no forecasts to interpolate");
  std::map<std::string, const SensorLocation*> where;
  for (const auto& l : locations) where[l.sensor_id] = &l;
  std::map<int, std::vector<const SensorForecast*>> by_depth;
  for (const auto& f : forecasts) by_depth[f.depth_cm].push_back(&f);

  Interpolation interp;
  interp.target = forecasts.front().issued + std::chrono::days{day};
  std::vector<kriging::DepthLayer> layers;
  for (const auto& [depth, group] : by_depth) {
    std::vector<kriging::SamplePoint> samples;
    for (const auto* f : group) {
      if (day < 1 || static_cast<std::size_t>(day) > f->values.size()) {
        throw ConfigError("forecast day " + std::to_string(day) + " is outside 1.." + std::to_string(f->values.size()));
      }
      if (f->issued + std::chrono::days{day} != interp.target) {
        throw DataError("sensor " + f->sensor_id + " at " + std::to_string(depth) +
                        " cm was forecast from a different last day (" + format_iso_date(f->issued) + ")");
      }
      const auto it = where.find(f->sensor_id);
      if (it == where.end()) throw DataError("no location for sensor '" + f->sensor_id + "'");
      samples.push_back({it->second->x, it->second->y, f->values[static_cast<std::size_t>(day) - 1]});
    }

    DepthInterpolation info;
    info.depth_cm = depth;
    info.samples = samples.size();
    if (config.variogram.fixed) {
      info.variogram = *config.variogram.fixed;
      info.variogram_source = "config";
    } else {
      try {
        const double lag = config.variogram.max_lag.value_or(kriging::default_max_lag(samples));
        if (!(lag > 0.0)) throw DataError("a single sensor location gives no lags");
        if (samples.size() < kMinFitSamples) {
          throw DataError(std::to_string(samples.size()) + " sensors are too few to fit a variogram (need " +
                          std::to_string(kMinFitSamples) + ")");
        }
        info.variogram = kriging::fit_variogram(kriging::empirical_variogram(samples, config.variogram.n_bins, lag));
        info.variogram_source = "fitted";
      } catch (const DataError& e) {
        info.variogram = heuristic_variogram(samples, config.grid.geometry);
        info.variogram_source = "heuristic";
        info.variogram_note = e.what();
      }
    }

    std::optional<kriging::KrigingModel> model;
    try {
      model = kriging::KrigingModel::build(samples, info.variogram);
    } catch (const NumericError& e) {
      if (info.variogram_source != "fitted") throw;
      info.variogram = heuristic_variogram(samples, config.grid.geometry);
      info.variogram_source = "heuristic";
      info.variogram_note = std::string("fitted variogram rejected: ") + e.what();
      model = kriging::KrigingModel::build(samples, info.variogram);
    }

    kriging::GridField field = mask ? kriging::interpolate_grid(*model, config.grid.geometry, *mask)
                                    : kriging::interpolate_grid(*model, config.grid.geometry);
    const bool varied = std::any_of(samples.begin(), samples.end(),
                                    [&](const auto& s) { return s.value != samples.front().value; });
    if (samples.size() >= 3 && varied) info.loo = kriging::loo_score(samples, info.variogram);

    layers.push_back({depth, std::move(field)});
    interp.depths.push_back(std::move(info));
  }
  interp.volume = kriging::stack_depths(std::move(layers));
  return interp;
}

std::vector<std::string> export_interpolation(const Interpolation& interp, const fs::path& dir) {
  std::vector<std::string> written;
  const auto ex = kriging::export_volume(interp.volume, dir / "volume");
  written.push_back(ex.manifest.lexically_relative(dir).generic_string());
  for (const auto& p : ex.layers) written.push_back(p.lexically_relative(dir).generic_string());

  {
    std::ofstream csv(dir / "volume" / "grid.csv");
    if (!csv) throw DataError("cannot write grid CSV");
    kriging::write_grid_csv(csv, interp.volume);
    written.push_back("volume/grid.csv");
  }

  fs::create_directories(dir / "heatmaps");
  const auto& g = interp.volume.geometry;
  for (const auto& layer : interp.volume.layers) {
    std::vector<unsigned char> blank(layer.field.evaluated.size());
    for (std::size_t i = 0; i < blank.size(); ++i) blank[i] = layer.field.evaluated[i] ? 0 : 1;
    const std::string name = "heatmaps/" + depth_name(layer.depth_cm) + ".pgm";
    vegindex::write_pgm_heatmap(dir / name, layer.field.values, g.width, g.height, blank);
    written.push_back(name);
    written.push_back(vegindex::heatmap_sidecar_path(name).generic_string());
  }
  return written;
}

std::vector<std::string> save_soil_models(const std::vector<SoilDepthModel>& models, const fs::path& dir,
                                          const lstm::TrainConfig& train) {
  fs::create_directories(dir / "models");
  std::vector<std::string> written;
  for (const auto& m : models) {
    const std::string name = "models/soil_" + std::to_string(m.depth_cm) + "cm.ckpt";
    lstm::save_checkpoint(dir / name, m.model, &train);
    written.push_back(name);
  }
  return written;
}

std::vector<SoilDepthModel> load_soil_models(const fs::path& dir) {
  std::vector<SoilDepthModel> out;
  const fs::path models = dir / "models";
  if (fs::is_directory(models)) {
    for (const auto& e : fs::directory_iterator(models)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("soil_", 0) != 0 || name.size() < 12 || name.substr(name.size() - 7) != "cm.ckpt") continue;
      const auto depth = detail::parse_int(std::string_view(name).substr(5, name.size() - 12));
      if (!depth) continue;
      out.push_back({static_cast<int>(*depth), lstm::load_checkpoint(e.path()).model, {}});
      out.back().metrics.depth_cm = out.back().depth_cm;
    }
  }
  if (out.empty()) throw DataError("no soil checkpoints under '" + models.string() + "'; run train-soil first");
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.depth_cm < b.depth_cm; });
  return out;
}

std::string soil_metrics_json(const std::vector<SoilDepthModel>& models) {
  json depths = json::array();
  for (const auto& m : models) depths.push_back(soil_json(m.metrics));
  return pretty({{"depths", depths}});
}

std::string index_metrics_json(const IndexMetrics& metrics) { return pretty(index_json(metrics)); }

std::string interpolation_json(const Interpolation& interp) {
  json depths = json::array();
  for (const auto& d : interp.depths) {
    json entry = interpolation_json(d);
    entry["depth_cm"] = d.depth_cm;
    depths.push_back(entry);
  }
  return pretty({{"target_date", format_iso_date(interp.target)}, {"depths", depths}});
}

void write_index_image(const fs::path& dir, const vegindex::IndexImage& image) {
  vegindex::save_band_grid(dir / "index_forecast.bgrid", index_to_band_grid(image));
  write_index_heatmap(dir / "index_forecast.pgm", image);
}

vegindex::IndexImage load_index_image(const fs::path& path, vegindex::IndexKind kind) {
  const auto grid = vegindex::load_band_grid(path);
  if (grid.bands() != 1) throw DataError("'" + path.string() + "' should hold a single index band");
  return vegindex::IndexImage{grid.width, grid.height, kind, grid.nodata, grid.data};
}

ForecastReport run_forecast(const RunConfig& config, const Logger& log) {
  run_stage("config", [&] {
    config.validate();
    config.check_paths();
  });

  StagedOutput out(config.paths.output_dir);
  const fs::path stage_dir = out.dir();
  try {
    const auto records = run_stage("load", [&] { return timeseries::load_sensor_csv(config.paths.sensor_csv); });
    const auto locations = run_stage("load", [&] { return load_sensor_locations(config.paths.sensor_locations); });

    const auto soil = run_stage("train-soil", [&] { return train_soil_models(config, records, log); });
    const auto stack = run_stage("vegindex", [&] { return load_index_stack(config); });
    const auto index = run_stage("train-index", [&] { return train_index_model(config, stack, log); });

    const auto forecasts = run_stage("forecast", [&] { return forecast_sensors(soil, records, config); });
    Date issued = forecasts.front().issued;
    for (const auto& f : forecasts) issued = std::max(issued, f.issued);
    const Date target = issued + std::chrono::days{config.forecast_day};
    const auto index_image = run_stage("forecast-index", [&] { return forecast_index(index, stack, target); });

    const auto interp = run_stage("kriging", [&] {
      return interpolate_forecasts(forecasts, locations, config, config.forecast_day,
                                   config.grid.mask_with_index ? &index_image : nullptr);
    });

    json artifacts = json::array();
    run_stage("export", [&] {
      for (auto& p : save_soil_models(soil, stage_dir, config.soil.train)) artifacts.push_back(std::move(p));
      lstm::save_checkpoint(stage_dir / "models/index.ckpt", index.model, &config.index.train);
      artifacts.push_back("models/index.ckpt");
      {
        std::ofstream csv(stage_dir / "forecasts.csv");
        if (!csv) throw DataError("cannot write forecasts.csv");
        write_forecast_csv(csv, forecasts);
        artifacts.push_back("forecasts.csv");
      }
      write_index_image(stage_dir, index_image);
      artifacts.push_back("index_forecast.bgrid");
      artifacts.push_back("index_forecast.pgm");
      artifacts.push_back("index_forecast.pgm.scale.txt");
      for (auto& p : export_interpolation(interp, stage_dir)) artifacts.push_back(std::move(p));
    });

    ForecastReport report;
    run_stage("report", [&] {
      json depths = json::array();
      for (const auto& model : soil) {
        const int depth = model.depth_cm;
        const auto it = std::find_if(interp.depths.begin(), interp.depths.end(),
                                     [&](const auto& x) { return x.depth_cm == depth; });
        if (it == interp.depths.end()) throw DataError("depth " + std::to_string(depth) + " cm was not interpolated");
        json entry = soil_json(model.metrics);
        entry.update(interpolation_json(*it));
        json sensors = json::object();
        for (const auto& f : forecasts) {
          if (f.depth_cm != depth) continue;
          json values = json::array();
          for (double v : f.values) values.push_back(finite_number(v, std::to_string(depth) + "cm." + f.sensor_id));
          sensors[f.sensor_id] = values;
        }
        entry["forecasts"] = sensors;
        depths.push_back(entry);
      }
      json root = {
          {"seed", config.seed},
          {"issued_date", format_iso_date(issued)},
          {"forecast_day", config.forecast_day},
          {"forecast_date", format_iso_date(target)},
          {"depths", depths},
          {"index_model", index_json(index.metrics)},
          {"grid",
           {{"width", config.grid.geometry.width},
            {"height", config.grid.geometry.height},
            {"origin_x", config.grid.geometry.origin_x},
            {"origin_y", config.grid.geometry.origin_y},
            {"cell_size", config.grid.geometry.cell_size},
            {"masked_by_index", config.grid.mask_with_index}}},
          {"artifacts", artifacts}};
      report.json = pretty(root);
      std::ofstream f(stage_dir / "report.json");
      if (!f) throw DataError("cannot write report.json");
      f << report.json;
    });

    out.commit();
    report.path = config.paths.output_dir / "report.json";
    say(log, "wrote " + report.path.string());
    return report;
  } catch (...) {
    try {
      const auto q = out.quarantine();
      say(log, "partial outputs moved to " + q.string());
    } catch (...) {
    }
    throw;
  }
}

GradcheckOutcome run_gradcheck(const GradcheckSettings& s) {
  if (s.soil_hidden <= 0 || s.index_hidden <= 0 || s.soil_horizon <= 0 || s.soil_input_length == 0 ||
      s.index_window == 0) {
    throw ConfigError("gradcheck toy dimensions must be positive");
  }
  GradcheckOutcome out;
  out.soil_architecture = {static_cast<int>(timeseries::kFeatureCount), s.soil_hidden, s.soil_hidden, s.soil_hidden,
                           s.soil_horizon};
  out.index_architecture = {static_cast<int>(vegindex::kPixelFeatures), s.index_hidden, s.index_hidden, s.index_hidden, 1};

  lstm::GradientCheckOptions options;
  options.epsilon = s.epsilon;
  options.tolerance = s.tolerance;
  options.seed = s.seed;

  const auto check = [&](const lstm::Architecture& arch, std::size_t length, std::uint64_t stream) {
    const auto model = lstm::init_params(arch, derive_seed(s.seed, stream));
    std::mt19937_64 rng(derive_seed(s.seed, stream + 1));
    const auto draw = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
    lstm::Matrix input(static_cast<Eigen::Index>(length), arch.input_dim);
    for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = draw();
    lstm::Vector target(arch.horizon);
    for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = draw();

    if (!s.corrupt_gradient) return lstm::gradient_check(model, input, target, options);
    lstm::ForwardCache cache;
    lstm::seq2seq_forward(model, to_batch(input), &cache);
    const lstm::BatchMatrix tgt = target;
    auto grads = lstm::backward(model, cache, tgt, options.loss).grads;
    double& g = grads.encoder.W(0, 0);
    g += 0.5 * (1.0 + std::abs(g));
    return lstm::gradient_check(model, input, target, grads, options);
  };

  out.soil = check(out.soil_architecture, s.soil_input_length, kGradcheckStream);
  out.index = check(out.index_architecture, s.index_window, kGradcheckStream + 2);
  return out;
}

std::string gradcheck_summary(const GradcheckOutcome& o, const GradcheckSettings& s) {
  std::ostringstream text;
  const auto line = [&](const char* name, const lstm::Architecture& a, std::size_t length,
                        const lstm::GradientCheckReport& r) {
    text << name << ": input_dim=" << a.input_dim << " hidden=" << a.encoder_hidden << '/' << a.decoder_hidden
         << " head=" << a.head_hidden << " window=" << length << " horizon=" << a.horizon
         << " coordinates=" << r.coordinates_checked << " max_rel_error=" << detail::format_double(r.max_rel_error)
         << " worst=" << r.worst_tensor << '[' << r.worst_index << "] " << (r.passed ? "PASS" : "FAIL") << '\n';
  };
  line("soil", o.soil_architecture, s.soil_input_length, o.soil);
  line("index", o.index_architecture, s.index_window, o.index);
  text << "epsilon=" << detail::format_double(s.epsilon) << " tolerance=" << detail::format_double(s.tolerance)
       << (s.corrupt_gradient ? " (corrupted gradient injected)" : "") << '\n'
       << "gradcheck " << (o.passed() ? "PASS" : "FAIL") << '\n';
  return text.str();
}

}  // namespace smartcast::pipeline
