#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smartcast/config.hpp"
#include "smartcast/error.hpp"
#include "smartcast/kriging.hpp"
#include "smartcast/lstm.hpp"
#include "smartcast/synth.hpp"
#include "smartcast/timeseries.hpp"
#include "smartcast/vegindex.hpp"

namespace smartcast::pipeline {

using Logger = std::function<void(std::string_view)>;

// Runs `fn`, rethrowing any failure as a StageError that names `stage`.
template <typename Fn>
decltype(auto) run_stage(std::string_view stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(std::string(stage), e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(std::string(stage), ErrorKind::data, e.what());
  } catch (const std::invalid_argument& e) {
    throw StageError(std::string(stage), ErrorKind::data, e.what());
  }
}

// Outputs are written under `<out>/_staging` and only moved into `<out>` by
// commit(). Anything not committed ends up in `<out>/quarantine`.
class StagedOutput {
 public:
  explicit StagedOutput(std::filesystem::path output_dir);
  ~StagedOutput();
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  const std::filesystem::path& dir() const { return staging_; }
  const std::filesystem::path& output_dir() const { return output_; }

  void commit();
  // Returns the quarantine directory.
  std::filesystem::path quarantine();

 private:
  std::filesystem::path output_;
  std::filesystem::path staging_;
  bool done_ = false;
};

// Per-stage seeds derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct SoilDepthMetrics {
  int depth_cm = 0;
  std::size_t sensors = 0;
  std::size_t train_windows = 0;
  std::size_t validation_windows = 0;
  std::size_t test_windows = 0;
  std::size_t best_epoch = 0;
  double test_rmse = 0.0;
  double test_mae = 0.0;
  double persistence_rmse = 0.0;
};

struct SoilDepthModel {
  int depth_cm = 0;
  lstm::Seq2SeqModel model;
  SoilDepthMetrics metrics;
};

// One model per depth, pooling every sensor at that depth. Windows of each
// sensor are split chronologically before pooling; the scaler is fitted on
// the pooled training inputs only.
std::vector<SoilDepthModel> train_soil_models(const RunConfig& config, std::span<const timeseries::SensorRecord> records,
                                              const Logger& log = {});

struct IndexMetrics {
  vegindex::IndexKind kind = vegindex::IndexKind::ndvi;
  std::size_t images = 0;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
  std::size_t test_samples = 0;
  std::size_t best_epoch = 0;
  double test_rmse = 0.0;
  double test_mae = 0.0;
  double persistence_rmse = 0.0;
  double persistence_mae = 0.0;
};

struct IndexModel {
  lstm::Seq2SeqModel model;
  IndexMetrics metrics;
};

// Loads every BandGrid of the manifest and converts it to the configured index.
vegindex::ImageStack load_index_stack(const RunConfig& config);

IndexModel train_index_model(const RunConfig& config, const vegindex::ImageStack& stack, const Logger& log = {});

struct SensorForecast {
  std::string sensor_id;
  int depth_cm = 0;
  Date issued{};               // last observed day
  std::vector<double> values;  // issued + 1 .. issued + horizon

  friend bool operator==(const SensorForecast&, const SensorForecast&) = default;
};

std::vector<SensorForecast> forecast_sensors(const std::vector<SoilDepthModel>& models,
                                             std::span<const timeseries::SensorRecord> records, const RunConfig& config);

// `sensor_id,depth_cm,issued,step,date,moisture`
void write_forecast_csv(std::ostream& out, std::span<const SensorForecast> forecasts);
std::vector<SensorForecast> load_forecast_csv(const std::filesystem::path& path);

// Index image predicted for `target`, from the five images before it.
vegindex::IndexImage forecast_index(const IndexModel& model, const vegindex::ImageStack& stack, Date target);

struct DepthInterpolation {
  int depth_cm = 0;
  std::size_t samples = 0;
  kriging::Variogram variogram;
  std::string variogram_source;  // "config", "fitted" or "heuristic"
  std::string variogram_note;    // why a fit was not used, if it was not
  std::optional<kriging::LooScore> loo;
};

struct Interpolation {
  Date target{};
  kriging::MoistureVolume volume;
  std::vector<DepthInterpolation> depths;
};

// Kriges the day-`day` forecasts of every depth over the configured grid.
// Cells where `mask` is nodata are skipped.
Interpolation interpolate_forecasts(std::span<const SensorForecast> forecasts, std::span<const SensorLocation> locations,
                                    const RunConfig& config, int day, const vegindex::IndexImage* mask = nullptr);

// Writes the volume BandGrids, grid CSV and one PGM heatmap per depth into
// `dir`; returns paths relative to `dir`.
std::vector<std::string> export_interpolation(const Interpolation& interp, const std::filesystem::path& dir);

// Checkpoints as `models/soil_<depth>cm.ckpt` under `dir`; returns relative paths.
std::vector<std::string> save_soil_models(const std::vector<SoilDepthModel>& models, const std::filesystem::path& dir,
                                          const lstm::TrainConfig& train);
// Metrics are not stored in checkpoints and come back zeroed.
std::vector<SoilDepthModel> load_soil_models(const std::filesystem::path& dir);

// `index_forecast.bgrid` plus a PGM heatmap in `dir`.
void write_index_image(const std::filesystem::path& dir, const vegindex::IndexImage& image);
vegindex::IndexImage load_index_image(const std::filesystem::path& path, vegindex::IndexKind kind);

std::string soil_metrics_json(const std::vector<SoilDepthModel>& models);
std::string index_metrics_json(const IndexMetrics& metrics);
std::string interpolation_json(const Interpolation& interp);

struct ForecastReport {
  std::string json;  // pretty-printed, sorted keys
  std::filesystem::path path;
};

// End-to-end: train soil models, train the index model, forecast, krige the
// selected day per depth and export. Everything is staged and only committed
// to the output directory on success.
ForecastReport run_forecast(const RunConfig& config, const Logger& log = {});

struct GradcheckSettings {
  int soil_hidden = 8;
  std::size_t soil_input_length = 6;
  int soil_horizon = 3;
  int index_hidden = 5;
  std::size_t index_window = 5;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  // Perturbs one analytic gradient entry to prove failures are caught.
  bool corrupt_gradient = false;
};

struct GradcheckOutcome {
  lstm::Architecture soil_architecture;
  lstm::Architecture index_architecture;
  lstm::GradientCheckReport soil;
  lstm::GradientCheckReport index;

  bool passed() const { return soil.passed && index.passed; }
};

GradcheckOutcome run_gradcheck(const GradcheckSettings& settings);
std::string gradcheck_summary(const GradcheckOutcome& outcome, const GradcheckSettings& settings);

}  // namespace smartcast::pipeline
