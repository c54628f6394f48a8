// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any
// criterion fails. `--cli <path>` runs the end-to-end criteria through the
// smartcast executable instead of the library, `--only <n>` runs one check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/kriging_oracle.hpp"
#include "oracles/lstm_oracle.hpp"
#include "smartcast/config.hpp"
#include "smartcast/kriging.hpp"
#include "smartcast/lstm.hpp"
#include "smartcast/pipeline.hpp"
#include "smartcast/synth.hpp"
#include "smartcast/vegindex.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
namespace kr = smartcast::kriging;
namespace lstm = smartcast::lstm;
namespace sp = smartcast::pipeline;
namespace vi = smartcast::vegindex;
using nlohmann::json;
using testing_support::slurp;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string g_cli;
fs::path g_work;

// The scenario the synth subcommand writes by default (seed 7).
fs::path bundled_scenario() {
  const fs::path dir = g_work / "scenario";
  if (fs::exists(dir / "config.json")) return dir;
  if (!g_cli.empty()) {
    const std::string cmd = "\"" + g_cli + "\" synth --seed 7 --out \"" + dir.string() + "\" > \"" +
                            (g_work / "synth.log").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("synth subcommand failed");
  } else {
    const sp::SynthSpec spec;
    sp::synth_write(sp::synth_generate(7, spec), spec, 7, dir);
  }
  return dir;
}

// Runs the pipeline on `config_path` into `out`; returns the wall time.
double run_pipeline(const fs::path& config_path, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!g_cli.empty()) {
    const std::string cmd = "\"" + g_cli + "\" run --config \"" + config_path.string() + "\" --out \"" + out.string() +
                            "\" > \"" + (out.string() + ".log") + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw std::runtime_error("smartcast run exited with status " + std::to_string(rc));
  } else {
    auto c = sp::parse_config(config_path);
    c.paths.output_dir = out;
    sp::run_forecast(c);
  }
  return seconds_since(t0);
}

lstm::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  lstm::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Result gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const sp::GradcheckSettings s;  // soil hidden 8, L 6, H 3; index hidden 5, window 5
  const auto out = sp::run_gradcheck(s);
  const double secs = seconds_since(t0);
  const bool ok = out.soil.max_rel_error < 1e-4 && out.index.max_rel_error < 1e-4 && secs < 30.0 &&
                  out.soil.coordinates_checked > 0 && out.index.coordinates_checked > 0;
  return {ok, fmt("soil max rel %.2e over %zu coords, index max rel %.2e over %zu coords, %.1f s (thr 1e-4, 30 s)",
                  out.soil.max_rel_error, out.soil.coordinates_checked, out.index.max_rel_error,
                  out.index.coordinates_checked, secs)};
}

Result forward_oracle() {
  double worst = 0.0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> jiggle(0.0, 0.05);
  for (const auto& arch : {lstm::Architecture::soil(), lstm::Architecture::index()}) {
    auto model = lstm::init_params(arch, 7);
    model.mutable_params().for_each_tensor([&](std::string_view, std::span<double> t) {
      for (double& v : t) v += jiggle(rng);
    });
    for (int trial = 0; trial < 3; ++trial) {
      const auto seq = random_matrix(arch.horizon == 1 ? 5 : 30, arch.input_dim, rng);
      const auto got = lstm::seq2seq_forward(model, seq);
      const auto want = oracle::seq2seq_forward(model, seq);
      for (std::size_t k = 0; k < want.size(); ++k) {
        worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(k)) - want[k]));
      }
    }
  }
  return {worst <= 1e-12, fmt("max abs diff %.2e over soil (200/200/100, H 14) and index (50/50/20, H 1) (thr 1e-12)", worst)};
}

Result soil_learning() {
  const auto dir = bundled_scenario();
  const auto config = sp::parse_config(dir / "config.json");
  const auto records = smartcast::timeseries::load_sensor_csv(config.paths.sensor_csv);
  std::map<int, std::vector<smartcast::timeseries::SensorRecord>> by_depth;
  for (const auto& r : records) by_depth[r.depth_cm].push_back(r);

  bool ok = by_depth.size() == 3;
  std::string detail;
  for (const auto& [depth, recs] : by_depth) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto models = sp::train_soil_models(config, recs);
    const double secs = seconds_since(t0);
    const auto& m = models.at(0).metrics;
    const double gain = 1.0 - m.test_rmse / m.persistence_rmse;
    ok = ok && gain >= 0.20 && secs < 300.0;
    detail += fmt("%dcm rmse %.3f vs persistence %.3f (gain %.1f%%, %.0f s); ", depth, m.test_rmse, m.persistence_rmse,
                  100.0 * gain, secs);
  }
  return {ok, detail + "thr 20%, 300 s per depth"};
}

Result index_learning() {
  sp::SynthSpec spec;
  spec.width = 32;
  spec.height = 32;
  const fs::path dir = g_work / "index32";
  const auto files = sp::synth_write(sp::synth_generate(7, spec), spec, 7, dir);
  const auto config = sp::parse_config(files.config);
  const auto stack = sp::load_index_stack(config);
  const auto t0 = std::chrono::steady_clock::now();
  const auto model = sp::train_index_model(config, stack);
  const auto& m = model.metrics;
  const double gain = 1.0 - m.test_rmse / m.persistence_rmse;
  const bool ok = stack.size() >= 12 && stack.width() == 32 && gain >= 0.15;
  return {ok, fmt("%zu images 32x32, rmse %.5f vs persistence %.5f (gain %.1f%%, %.0f s, thr 15%%)", stack.size(),
                  m.test_rmse, m.persistence_rmse, 100.0 * gain, seconds_since(t0))};
}

Result kriging_exactness() {
  double worst_exact = 0.0, worst_oracle = 0.0, worst_sum = 0.0;
  std::size_t queries = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    std::normal_distribution<double> val(25.0, 6.0);
    const std::size_t n = 1 + seed % 10;
    std::vector<kr::SamplePoint> s(n);
    for (auto& p : s) p = {u(rng), u(rng), val(rng)};
    const kr::Variogram v{seed % 3 == 0 ? 0.0 : 0.5 * u(rng) / 100.0, 1.0 + u(rng) / 10.0, 10.0 + u(rng)};
    const auto model = kr::KrigingModel::build(s, v);
    const kr::Variogram exact_v{0.0, v.sill, v.range};
    const auto exact = kr::KrigingModel::build(s, exact_v);
    for (const auto& p : s) {
      worst_exact = std::max(worst_exact, std::abs(exact.predict(p.x, p.y).value - p.value));
      worst_sum = std::max(worst_sum, std::abs(exact.predict(p.x, p.y).weight_sum - 1.0));
    }
    for (int q = 0; q < 20; ++q) {
      const double x = u(rng) * 1.2 - 10.0, y = u(rng) * 1.2 - 10.0;
      const auto got = model.predict(x, y);
      const auto want = oracle::krige(s, v, model.jitter(), x, y);
      worst_oracle = std::max(worst_oracle, std::abs(got.value - want.value));
      worst_sum = std::max(worst_sum, std::abs(got.weight_sum - 1.0));
      ++queries;
    }
  }
  const bool ok = worst_exact <= 1e-8 && worst_oracle <= 1e-8 && worst_sum <= 1e-10;
  return {ok, fmt("exactness %.2e (thr 1e-8), oracle %.2e over %zu queries n<=10 (thr 1e-8), weight sum %.2e (thr 1e-10)",
                  worst_exact, worst_oracle, queries, worst_sum)};
}

Result kriging_score() {
  // Smooth field on a 100 x 100 domain: a tilted plane plus two broad bumps.
  const auto field = [](double x, double y) {
    return 20.0 + 0.04 * x - 0.02 * y + 5.0 * std::exp(-((x - 30) * (x - 30) + (y - 60) * (y - 60)) / 1800.0) -
           3.0 * std::exp(-((x - 75) * (x - 75) + (y - 25) * (y - 25)) / 1200.0);
  };
  std::mt19937_64 rng(93);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<kr::SamplePoint> s(25);
  for (auto& p : s) {
    p.x = u(rng);
    p.y = u(rng);
    p.value = field(p.x, p.y);
  }
  const auto v = kr::fit_variogram(kr::empirical_variogram(s, 6, kr::default_max_lag(s)));
  const auto score = kr::loo_score(s, v);
  return {score.raw >= 0.9, fmt("LOO R^2 %.4f with 25 random points, fitted nugget %.3g sill %.3g range %.3g (thr 0.9)",
                                score.raw, v.nugget, v.sill, v.range)};
}

Result index_correctness() {
  std::mt19937 rng(17);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  vi::BandGrid g(64, 48, {"B02", "B04", "B08", "B11"});
  g.data.resize(g.pixel_count() * 4);
  for (auto& v : g.data) v = u(rng);
  for (std::size_t p = 0; p < 40; ++p) g.data[g.pixel_count() + 7 * p] = -9999.0f;
  g.data[g.pixel_count() + 5] = 0.0f;
  g.data[2 * g.pixel_count() + 5] = 0.0f;

  double worst = 0.0;
  bool range_ok = true, nodata_ok = true, round_trip = true;
  for (auto kind : {vi::IndexKind::ndvi, vi::IndexKind::ndwi}) {
    const auto img = vi::compute_index(g, kind, {});
    const auto nir = g.band(2);
    const auto other = g.band(kind == vi::IndexKind::ndvi ? 1 : 3);
    for (std::size_t p = 0; p < g.pixel_count(); ++p) {
      const float v = img.values[p];
      const bool missing = g.is_nodata(nir[p]) || g.is_nodata(other[p]) ||
                           static_cast<double>(nir[p]) + static_cast<double>(other[p]) == 0.0;
      if (missing) {
        nodata_ok = nodata_ok && img.is_nodata(v);
        continue;
      }
      const double a = nir[p], b = other[p];
      worst = std::max(worst, std::abs(static_cast<double>(v) - (a - b) / (a + b)));
      range_ok = range_ok && v >= -1.0f && v <= 1.0f;
    }
    round_trip = round_trip && vi::reshape_to_image(vi::flatten_image(img), img.width, img.height, kind, img.nodata) == img;
  }
  return {worst <= 1e-7 && range_ok && nodata_ok && round_trip,
          fmt("max abs diff %.2e (thr 1e-7), range %s, nodata policy %s, flatten/reshape %s", worst,
              range_ok ? "ok" : "violated", nodata_ok ? "ok" : "violated", round_trip ? "exact" : "differs")};
}

std::vector<fs::path> band_grids(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().extension() == ".bgrid") out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Result determinism() {
  const auto dir = bundled_scenario();
  // Fewer epochs than the bundled config; reproducibility does not depend on them.
  auto c = sp::parse_config(dir / "config.json");
  c.soil.train.epochs = 3;
  c.index.train.epochs = 2;
  const fs::path cfg = g_work / "determinism.json";
  std::ofstream(cfg) << sp::serialize_config(c);

  const fs::path a = g_work / "det_a", b = g_work / "det_b";
  run_pipeline(cfg, a);
  run_pipeline(cfg, b);
  const bool same_report = slurp(a / "report.json") == slurp(b / "report.json") && !slurp(a / "report.json").empty();
  const auto grids = band_grids(a);
  bool same_grids = grids == band_grids(b) && !grids.empty();
  for (const auto& rel : grids) same_grids = same_grids && slurp(a / rel) == slurp(b / rel);
  return {same_report && same_grids, fmt("report.json %s, %zu BandGrid files %s", same_report ? "identical" : "differs",
                                         grids.size(), same_grids ? "identical" : "differ")};
}

Result end_to_end() {
  const auto dir = bundled_scenario();
  const fs::path out = g_work / "e2e";
  const double secs = run_pipeline(dir / "config.json", out);
  const auto config = sp::parse_config(dir / "config.json");
  const auto report = json::parse(slurp(out / "report.json"));

  std::multiset<int> depths;
  bool finite = true, forecasts_ok = true;
  const auto records = smartcast::timeseries::load_sensor_csv(config.paths.sensor_csv);
  const auto keys = smartcast::timeseries::series_keys(records);
  std::set<int> expected_depths;
  for (const auto& k : keys) expected_depths.insert(k.second);
  for (const auto& d : report.at("depths")) {
    depths.insert(d.at("depth_cm").get<int>());
    const std::function<void(const json&)> walk = [&](const json& j) {
      if (j.is_number_float()) finite = finite && std::isfinite(j.get<double>());
      if (j.is_structured()) {
        for (const auto& c : j) walk(c);
      }
    };
    walk(d);
    std::size_t sensors = 0;
    for (const auto& k : keys) sensors += k.second == d.at("depth_cm").get<int>();
    forecasts_ok = forecasts_ok && d.at("forecasts").size() == sensors;
  }
  const bool depth_once = depths.size() == expected_depths.size() &&
                          std::set<int>(depths.begin(), depths.end()) == expected_depths;

  std::size_t layers = 0;
  for (const auto& rel : report.at("artifacts")) {
    const auto p = rel.get<std::string>();
    if (p.find("volume") != std::string::npos && p.ends_with(".bgrid")) {
      ++layers;
      vi::load_band_grid(out / p).validate();
    }
  }
  const bool complete = report.contains("index_model") && report.contains("forecast_date") && report.contains("grid");
  const bool ok = depth_once && forecasts_ok && finite && complete && layers == expected_depths.size() && secs < 600.0;
  return {ok, fmt("%zu depths in report (each once: %s), %zu volume layers, forecasts per sensor %s, metrics finite %s, "
                  "%.0f s (thr 600 s)",
                  depths.size(), depth_once ? "yes" : "no", layers, forecasts_ok ? "ok" : "missing",
                  finite ? "yes" : "no", secs)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) g_cli = argv[++i];
    else if (a == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    else {
      std::cerr << "usage: smartcast_acceptance [--cli <smartcast>] [--only <n>]\n";
      return 2;
    }
  }
  testing_support::TempDir work("acceptance");
  g_work = work.path();

  const std::vector<std::pair<std::string, std::function<Result()>>> checks{
      {"gradient fidelity", gradient_fidelity},
      {"seq2seq forward oracle", forward_oracle},
      {"soil learning signal", soil_learning},
      {"index learning signal", index_learning},
      {"kriging exactness and oracle", kriging_exactness},
      {"kriging LOO score", kriging_score},
      {"NDVI/NDWI correctness", index_correctness},
      {"run determinism", determinism},
      {"end-to-end smoke", end_to_end},
  };

  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Result r;
    try {
      r = checks[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += r.pass ? 0 : 1;
    std::cout << (r.pass ? "PASS " : "FAIL ") << "[" << i + 1 << "] " << checks[i].first << ": " << r.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
