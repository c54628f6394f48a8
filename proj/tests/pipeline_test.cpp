#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <set>
#include <sstream>

#include "smartcast/config.hpp"
#include "smartcast/error.hpp"
#include "smartcast/pipeline.hpp"
#include "smartcast/synth.hpp"
#include "test_support.hpp"

namespace sp = smartcast::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;
using testing_support::TempDir;

namespace {

sp::SynthSpec small_spec() {
  sp::SynthSpec s;
  s.sensors = 6;
  s.depths = {10, 30};
  s.days = 160;
  s.width = 8;
  s.height = 8;
  s.images = 14;
  s.max_image_gap = 10;
  return s;
}

// Tiny networks and one epoch: exercises the plumbing, not the learning.
sp::RunConfig quick_config(const fs::path& dir, const sp::SynthSpec& spec, std::uint64_t seed) {
  const auto files = sp::synth_write(sp::synth_generate(seed, spec), spec, seed, dir);
  auto c = sp::parse_config(files.config);
  c.soil.input_length = 14;
  c.soil.encoder_hidden = c.soil.decoder_hidden = c.soil.head_hidden = 4;
  c.soil.train.epochs = 1;
  c.index.encoder_hidden = c.index.decoder_hidden = c.index.head_hidden = 3;
  c.index.train.epochs = 1;
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
  TempDir dir("cfg");
  const auto c = sp::parse_config_text(
      R"({"seed": 3, "paths": {"sensor_csv": "s.csv", "sensor_locations": "l.csv", "stack_manifest": "m.csv"}})",
      dir.path());
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.soil.input_length, 30u);
  EXPECT_EQ(c.soil.train.learning_rate, 1e-3);
  EXPECT_EQ(c.soil.encoder_hidden, 200);
  EXPECT_EQ(c.soil.head_hidden, 100);
  EXPECT_EQ(c.index.encoder_hidden, 50);
  EXPECT_EQ(c.index.head_hidden, 20);
  EXPECT_FALSE(c.soil.residual);
  EXPECT_EQ(c.forecast_day, 14);
  EXPECT_EQ(c.paths.sensor_csv, dir.path() / "s.csv");
  EXPECT_EQ(c.bands, smartcast::vegindex::BandMapping{});
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    sp::parse_config_text(
        R"({"seed": 1, "foo": 2, "paths": {"sensor_csv": "a", "sensor_locations": "b", "stack_manifest": "c"}})", "/");
    FAIL() << "expected a config error";
  } catch (const smartcast::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos) << e.what();
  }
}

TEST(Config, MissingSeedAndBadTypes) {
  EXPECT_THROW(sp::parse_config_text(R"({"paths": {"sensor_csv": "a", "sensor_locations": "b", "stack_manifest": "c"}})",
                                     "/"),
               smartcast::ConfigError);
  EXPECT_THROW(sp::parse_config_text(
                   R"({"seed": "x", "paths": {"sensor_csv": "a", "sensor_locations": "b", "stack_manifest": "c"}})", "/"),
               smartcast::ConfigError);
  EXPECT_THROW(sp::parse_config_text("{not json", "/"), smartcast::ConfigError);
}

TEST(Config, RoundTrip) {
  TempDir dir("cfg_rt");
  auto c = sp::parse_config_text(
      R"({"seed": 99, "paths": {"sensor_csv": "s.csv", "sensor_locations": "l.csv", "stack_manifest": "m.csv"},
          "soil_model": {"input_length": 21, "residual": true, "train": {"learning_rate": 0.002, "loss": "mae"}},
          "index_model": {"index": "ndwi", "train": {"loss": "mae"}},
          "variogram": {"nugget": 0.1, "sill": 2.0, "range": 35.0},
          "bands": {"red": "B03", "nir": "B8A", "swir": "B12"},
          "forecast_day": 7})",
      dir.path());
  EXPECT_EQ(c.index.kind, smartcast::vegindex::IndexKind::ndwi);
  ASSERT_TRUE(c.variogram.fixed.has_value());
  const auto again = sp::parse_config_text(sp::serialize_config(c), "/");
  EXPECT_EQ(again, c);
  EXPECT_EQ(sp::serialize_config(again), sp::serialize_config(c));
}

TEST(Config, CheckPathsNamesMissingFile) {
  TempDir dir("cfg_paths");
  write_text(dir.path() / "s.csv", "");
  write_text(dir.path() / "l.csv", "");
  const auto c = sp::parse_config_text(
      R"({"seed": 1, "paths": {"sensor_csv": "s.csv", "sensor_locations": "l.csv", "stack_manifest": "m.csv"}})",
      dir.path());
  try {
    c.check_paths();
    FAIL() << "expected a config error";
  } catch (const smartcast::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv"), std::string::npos) << e.what();
  }
}

TEST(Synth, SameSeedSameBytes) {
  TempDir a("synth_a"), b("synth_b");
  const auto spec = small_spec();
  const auto fa = sp::synth_write(sp::synth_generate(5, spec), spec, 5, a.path());
  const auto fb = sp::synth_write(sp::synth_generate(5, spec), spec, 5, b.path());
  EXPECT_EQ(testing_support::slurp(fa.sensor_csv), testing_support::slurp(fb.sensor_csv));
  EXPECT_EQ(testing_support::slurp(fa.sensor_locations), testing_support::slurp(fb.sensor_locations));
  for (const auto& e : fs::directory_iterator(a.path() / "stack")) {
    EXPECT_EQ(testing_support::slurp(e.path()), testing_support::slurp(b.path() / "stack" / e.path().filename()));
  }
  const auto other = sp::synth_generate(6, spec);
  EXPECT_NE(other.records, sp::synth_generate(5, spec).records);
}

TEST(Synth, NoiselessMoistureIsAnExactSinusoid) {
  auto spec = sp::SynthSpec::noiseless();
  spec.sensors = 3;
  spec.days = 200;
  spec.images = 10;
  const auto data = sp::synth_generate(11, spec);
  const double w = 2.0 * std::numbers::pi / 365.0;
  for (const auto& [id, depth] : smartcast::timeseries::series_keys(data.records)) {
    const auto s = smartcast::timeseries::build_series(data.records, id, depth);
    EXPECT_EQ(std::count(s.filled.begin(), s.filled.end(), 1), 0);
    const auto m = [&](std::size_t t) { return s.features[t][smartcast::timeseries::kMoisture]; };
    // A sinusoid of period 365 with offset c obeys m(t+1) - 2cos(w) m(t) + m(t-1) = 2c(1 - cos w).
    const double amplitude = 5.0 * std::exp(-depth / 150.0);
    for (std::size_t t : {20u, 97u, 180u}) {
      const double c = (m(t + 1) - 2.0 * std::cos(w) * m(t) + m(t - 1)) / (2.0 * (1.0 - std::cos(w)));
      const double c0 = (m(11) - 2.0 * std::cos(w) * m(10) + m(9)) / (2.0 * (1.0 - std::cos(w)));
      EXPECT_NEAR(c, c0, 1e-6);
      const double a = m(t) - c, b = m(t + 1) - c;
      const double quad = (b - std::cos(w) * a) / std::sin(w);
      EXPECT_NEAR(std::hypot(a, quad), amplitude, 1e-6);
    }
  }
}

TEST(Synth, NdviStackWithinRangeAndBandsConsistent) {
  const auto spec = small_spec();
  const auto data = sp::synth_generate(8, spec);
  ASSERT_EQ(data.images.size(), static_cast<std::size_t>(spec.images));
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    data.images[i].validate_reflectance();
    const auto ndvi = smartcast::vegindex::compute_index(data.images[i], smartcast::vegindex::IndexKind::ndvi, {});
    for (std::size_t p = 0; p < ndvi.values.size(); ++p) {
      EXPECT_GE(ndvi.values[p], -1.0f);
      EXPECT_LE(ndvi.values[p], 1.0f);
      EXPECT_NEAR(ndvi.values[p], data.ndvi[i].values[p], 1e-5);
    }
  }
}

TEST(Synth, RecordsRespectSensorContract) {
  const auto data = sp::synth_generate(9, small_spec());
  std::set<std::tuple<std::string, int, long>> keys;
  for (const auto& r : data.records) {
    if (r.moisture) {
      EXPECT_GE(*r.moisture, 0.0);
      EXPECT_LE(*r.moisture, 100.0);
    }
    if (r.rainfall) {
      EXPECT_GE(*r.rainfall, 0.0);
    }
    EXPECT_TRUE(smartcast::timeseries::is_valid_depth(r.depth_cm));
    EXPECT_TRUE(keys.emplace(r.sensor_id, r.depth_cm, r.date.time_since_epoch().count()).second);
  }
}

TEST(Stages, FailureNamesStage) {
  try {
    sp::run_stage("kriging", [] { throw smartcast::NumericError("boom"); });
    FAIL();
  } catch (const smartcast::StageError& e) {
    EXPECT_EQ(e.stage(), "kriging");
    EXPECT_EQ(e.kind(), smartcast::ErrorKind::numeric);
    EXPECT_EQ(e.exit_code(), 4);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(Stages, UncommittedOutputIsQuarantined) {
  TempDir dir("stage");
  const fs::path out = dir.path() / "out";
  {
    sp::StagedOutput staged(out);
    write_text(staged.dir() / "partial.txt", "x");
  }
  EXPECT_FALSE(fs::exists(out / "partial.txt"));
  EXPECT_TRUE(fs::exists(out / "quarantine" / "partial.txt"));
  {
    sp::StagedOutput staged(out);
    write_text(staged.dir() / "done.txt", "y");
    staged.commit();
  }
  EXPECT_TRUE(fs::exists(out / "done.txt"));
  EXPECT_FALSE(fs::exists(out / "_staging"));
  EXPECT_FALSE(fs::exists(out / "quarantine"));
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_EQ(sp::derive_seed(7, 1), sp::derive_seed(7, 1));
  EXPECT_NE(sp::derive_seed(7, 1), sp::derive_seed(7, 2));
  EXPECT_NE(sp::derive_seed(7, 1), sp::derive_seed(8, 1));
}

TEST(Gradcheck, DefaultPassesCorruptFailsDimsHonored) {
  sp::GradcheckSettings s;
  const auto ok = sp::run_gradcheck(s);
  EXPECT_TRUE(ok.passed());
  EXPECT_EQ(ok.soil_architecture.encoder_hidden, 8);
  EXPECT_EQ(ok.soil_architecture.horizon, 3);
  EXPECT_EQ(ok.index_architecture.encoder_hidden, 5);
  s.corrupt_gradient = true;
  EXPECT_FALSE(sp::run_gradcheck(s).passed());

  sp::GradcheckSettings small;
  small.soil_hidden = 3;
  small.soil_horizon = 2;
  small.soil_input_length = 4;
  const auto out = sp::run_gradcheck(small);
  EXPECT_EQ(out.soil_architecture.encoder_hidden, 3);
  EXPECT_NE(sp::gradcheck_summary(out, small).find("3"), std::string::npos);
}

TEST(Forecasts, CsvRoundTrip) {
  TempDir dir("fc");
  const std::vector<sp::SensorForecast> f{{"a", 10, smartcast::parse_iso_date("2022-03-04"), {1.5, 2.25, 3.0}},
                                          {"b", 30, smartcast::parse_iso_date("2022-03-04"), {4.0, 5.0, 6.125}}};
  {
    std::ofstream out(dir.path() / "f.csv");
    sp::write_forecast_csv(out, f);
  }
  EXPECT_EQ(sp::load_forecast_csv(dir.path() / "f.csv"), f);
}

TEST(Interpolation, TooFewSensorsFallBackToHeuristicVariogram) {
  TempDir dir("interp");
  auto spec = small_spec();
  spec.sensors = 4;
  auto c = quick_config(dir.path(), spec, 3);
  c.grid.mask_with_index = false;
  const auto data = sp::synth_generate(3, spec);
  std::vector<sp::SensorForecast> f;
  for (const auto& loc : data.locations) {
    for (int d : spec.depths) f.push_back({loc.sensor_id, d, smartcast::parse_iso_date("2021-05-01"),
                                           std::vector<double>(14, 20.0 + loc.x / 10.0 + d / 10.0)});
  }
  const auto interp = sp::interpolate_forecasts(f, data.locations, c, 14);
  ASSERT_EQ(interp.depths.size(), 2u);
  for (const auto& d : interp.depths) {
    EXPECT_EQ(d.variogram_source, "heuristic");
    EXPECT_FALSE(d.variogram_note.empty());
  }
  ASSERT_EQ(interp.volume.layers.size(), 2u);
  EXPECT_EQ(interp.target, smartcast::parse_iso_date("2021-05-15"));
}

TEST(RunForecast, SmallScenarioEndToEndAndDeterministic) {
  TempDir dir("run");
  const auto spec = small_spec();
  auto c = quick_config(dir.path(), spec, 4);

  c.paths.output_dir = dir.path() / "out_a";
  const auto a = sp::run_forecast(c);
  c.paths.output_dir = dir.path() / "out_b";
  const auto b = sp::run_forecast(c);
  EXPECT_EQ(a.json, b.json);

  const auto report = json::parse(testing_support::slurp(a.path));
  std::multiset<int> depths;
  for (const auto& d : report.at("depths")) depths.insert(d.at("depth_cm").get<int>());
  EXPECT_EQ(depths, (std::multiset<int>{10, 30}));
  for (const auto& art : report.at("artifacts")) {
    const auto rel = art.get<std::string>();
    EXPECT_TRUE(fs::exists(dir.path() / "out_a" / rel)) << rel;
    if (rel.ends_with(".bgrid")) {
      EXPECT_EQ(testing_support::slurp(dir.path() / "out_a" / rel), testing_support::slurp(dir.path() / "out_b" / rel));
    }
  }
  EXPECT_FALSE(fs::exists(dir.path() / "out_a" / "_staging"));
  EXPECT_FALSE(fs::exists(dir.path() / "out_a" / "quarantine"));
}

TEST(RunForecast, NoTestWindowsIsATimeseriesStageError) {
  TempDir dir("run_bad");
  auto c = quick_config(dir.path(), small_spec(), 4);
  c.soil.test_fraction = 1e-12;
  try {
    sp::run_forecast(c);
    FAIL() << "expected a stage error";
  } catch (const smartcast::StageError& e) {
    EXPECT_EQ(e.stage(), "timeseries") << e.what();
    EXPECT_EQ(e.kind(), smartcast::ErrorKind::data);
  }
  EXPECT_FALSE(fs::exists(c.paths.output_dir / "report.json"));
}
