// smartcast: soil moisture forecasting and interpolation from the command line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "smartcast/pipeline.hpp"

namespace fs = std::filesystem;
namespace sp = smartcast::pipeline;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> day;
};

void log_line(std::string_view msg) { std::cerr << msg << '\n'; }

sp::RunConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) throw smartcast::ConfigError("--config is required for this command");
  auto c = sp::parse_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.paths.output_dir = g.out;
  if (g.day) c.forecast_day = *g.day;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw smartcast::DataError("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_synth(const GlobalOptions& g, const sp::SynthSpec& spec) {
  const fs::path dir = g.out.empty() ? fs::path("scenario") : fs::path(g.out);
  const std::uint64_t seed = g.seed.value_or(7);
  const auto data = sp::synth_generate(seed, spec);
  const auto files = sp::synth_write(data, spec, seed, dir);
  std::cout << "wrote " << data.records.size() << " sensor rows and " << data.images.size() << " images\n"
            << "config: " << files.config.string() << '\n';
  return 0;
}

int cmd_train_soil(const GlobalOptions& g) {
  const auto config = load_config(g);
  config.check_paths();
  sp::StagedOutput out(config.paths.output_dir);
  const auto records = sp::run_stage("load", [&] { return smartcast::timeseries::load_sensor_csv(config.paths.sensor_csv); });
  const auto models = sp::train_soil_models(config, records, log_line);
  sp::run_stage("export", [&] {
    sp::save_soil_models(models, out.dir(), config.soil.train);
    write_text(out.dir() / "soil_metrics.json", sp::soil_metrics_json(models));
  });
  out.commit();
  std::cout << sp::soil_metrics_json(models);
  return 0;
}

int cmd_train_index(const GlobalOptions& g) {
  const auto config = load_config(g);
  config.check_paths();
  sp::StagedOutput out(config.paths.output_dir);
  const auto stack = sp::run_stage("vegindex", [&] { return sp::load_index_stack(config); });
  const auto model = sp::train_index_model(config, stack, log_line);
  sp::run_stage("export", [&] {
    fs::create_directories(out.dir() / "models");
    smartcast::lstm::save_checkpoint(out.dir() / "models" / "index.ckpt", model.model, &config.index.train);
    write_text(out.dir() / "index_metrics.json", sp::index_metrics_json(model.metrics));
  });
  out.commit();
  std::cout << sp::index_metrics_json(model.metrics);
  return 0;
}

int cmd_forecast(const GlobalOptions& g) {
  const auto config = load_config(g);
  config.check_paths();
  sp::StagedOutput out(config.paths.output_dir);
  const auto records = sp::run_stage("load", [&] { return smartcast::timeseries::load_sensor_csv(config.paths.sensor_csv); });
  const auto models = sp::run_stage("load", [&] { return sp::load_soil_models(config.paths.output_dir); });
  const auto forecasts = sp::run_stage("forecast", [&] { return sp::forecast_sensors(models, records, config); });
  sp::run_stage("export", [&] {
    std::ofstream csv(out.dir() / "forecasts.csv");
    sp::write_forecast_csv(csv, forecasts);
  });

  const fs::path index_ckpt = config.paths.output_dir / "models" / "index.ckpt";
  if (fs::exists(index_ckpt)) {
    smartcast::Date issued = forecasts.front().issued;
    for (const auto& f : forecasts) issued = std::max(issued, f.issued);
    const auto target = issued + std::chrono::days{config.forecast_day};
    sp::run_stage("forecast-index", [&] {
      const auto stack = sp::load_index_stack(config);
      sp::IndexModel model{smartcast::lstm::load_checkpoint(index_ckpt).model, {}};
      model.metrics.kind = config.index.kind;
      sp::write_index_image(out.dir(), sp::forecast_index(model, stack, target));
    });
    std::cout << "index forecast for " << smartcast::format_iso_date(target) << '\n';
  }
  out.commit();
  std::cout << "forecast " << forecasts.size() << " sensor series -> "
            << (config.paths.output_dir / "forecasts.csv").string() << '\n';
  return 0;
}

int cmd_interpolate(const GlobalOptions& g) {
  const auto config = load_config(g);
  config.check_paths();
  sp::StagedOutput out(config.paths.output_dir);
  const auto forecasts =
      sp::run_stage("load", [&] { return sp::load_forecast_csv(config.paths.output_dir / "forecasts.csv"); });
  const auto locations = sp::run_stage("load", [&] { return sp::load_sensor_locations(config.paths.sensor_locations); });
  std::optional<smartcast::vegindex::IndexImage> mask;
  if (config.grid.mask_with_index) {
    mask = sp::run_stage("load", [&] {
      const fs::path p = config.paths.output_dir / "index_forecast.bgrid";
      if (!fs::exists(p)) {
        throw smartcast::DataError("grid.mask_with_index is set but '" + p.string() +
                                   "' is missing; run train-index and forecast first");
      }
      return sp::load_index_image(p, config.index.kind);
    });
  }
  const auto interp = sp::run_stage("kriging", [&] {
    return sp::interpolate_forecasts(forecasts, locations, config, config.forecast_day, mask ? &*mask : nullptr);
  });
  sp::run_stage("export", [&] {
    sp::export_interpolation(interp, out.dir());
    write_text(out.dir() / "interpolation.json", sp::interpolation_json(interp));
  });
  out.commit();
  std::cout << sp::interpolation_json(interp);
  return 0;
}

int cmd_run(const GlobalOptions& g) {
  const auto config = load_config(g);
  const auto report = sp::run_forecast(config, log_line);
  std::cout << report.json;
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, sp::GradcheckSettings settings) {
  if (g.seed) settings.seed = *g.seed;
  const auto outcome = sp::run_gradcheck(settings);
  std::cout << sp::gradcheck_summary(outcome, settings);
  return outcome.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smartcast: soil moisture forecasting with LSTMs and ordinary kriging"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Run configuration JSON");
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--out", g.out, "Output directory (scenario directory for synth)");
  app.add_option("--day", g.day, "Forecast day to interpolate")->check(CLI::Range(1, 14));

  sp::SynthSpec spec;
  bool noiseless = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scenario");
  synth->add_option("--sensors", spec.sensors, "Number of sensors")->capture_default_str();
  synth->add_option("--depths", spec.depths, "Sensor depths in cm")->capture_default_str();
  synth->add_option("--days", spec.days, "Days of sensor data")->capture_default_str();
  synth->add_option("--width", spec.width, "Image width in pixels")->capture_default_str();
  synth->add_option("--height", spec.height, "Image height in pixels")->capture_default_str();
  synth->add_option("--cell-size", spec.cell_size, "Pixel size in map units")->capture_default_str();
  synth->add_option("--images", spec.images, "Number of images")->capture_default_str();
  synth->add_flag("--noiseless", noiseless, "No rain, noise or missing values");

  auto* train_soil = app.add_subcommand("train-soil", "Train one soil moisture model per depth");
  auto* train_index = app.add_subcommand("train-index", "Train the vegetation index model");
  auto* forecast = app.add_subcommand("forecast", "Forecast 14 days at every sensor from saved models");
  auto* interpolate = app.add_subcommand("interpolate", "Krige saved forecasts over the grid");
  auto* run = app.add_subcommand("run", "Train, forecast, interpolate and export in one go");

  sp::GradcheckSettings gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of both model gradients");
  gradcheck->add_option("--soil-hidden", gc.soil_hidden, "Soil toy hidden size")->capture_default_str();
  gradcheck->add_option("--soil-window", gc.soil_input_length, "Soil toy input length")->capture_default_str();
  gradcheck->add_option("--soil-horizon", gc.soil_horizon, "Soil toy horizon")->capture_default_str();
  gradcheck->add_option("--index-hidden", gc.index_hidden, "Index toy hidden size")->capture_default_str();
  gradcheck->add_option("--index-window", gc.index_window, "Index toy window")->capture_default_str();
  gradcheck->add_option("--epsilon", gc.epsilon, "Central difference step")->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance, "Max relative error")->capture_default_str();
  gradcheck->add_flag("--corrupt-gradient", gc.corrupt_gradient, "Perturb one analytic gradient entry");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (noiseless) {
        auto quiet = sp::SynthSpec::noiseless();
        quiet.sensors = spec.sensors;
        quiet.depths = spec.depths;
        quiet.days = spec.days;
        quiet.width = spec.width;
        quiet.height = spec.height;
        quiet.cell_size = spec.cell_size;
        quiet.images = spec.images;
        spec = quiet;
      }
      return cmd_synth(g, spec);
    }
    if (train_soil->parsed()) return cmd_train_soil(g);
    if (train_index->parsed()) return cmd_train_index(g);
    if (forecast->parsed()) return cmd_forecast(g);
    if (interpolate->parsed()) return cmd_interpolate(g);
    if (run->parsed()) return cmd_run(g);
    if (gradcheck->parsed()) return cmd_gradcheck(g, gc);
  } catch (const smartcast::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
