#include "smartcast/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <nlohmann/json.hpp>

#include "smartcast/error.hpp"

namespace smartcast::pipeline {

namespace {

using nlohmann::json;

// Walks one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key) && !node_.at(key).is_null(); }

  void skip(const std::string& key) { seen_.push_back(key); }

  const json& at(const std::string& key) {
    seen_.push_back(key);
    if (!node_.contains(key)) throw ConfigError("missing required key '" + child(key) + "'");
    return node_.at(key);
  }

  Reader object(const std::string& key) {
    seen_.push_back(key);
    static const json empty = json::object();
    if (!node_.contains(key)) return Reader(empty, child(key));
    return Reader(node_.at(key), child(key));
  }

  template <typename T>
  T required(const std::string& key) {
    return convert<T>(at(key), key);
  }

  template <typename T>
  void optional(const std::string& key, T& out) {
    seen_.push_back(key);
    if (!node_.contains(key)) return;
    out = convert<T>(node_.at(key), key);
  }

  void reject_unknown() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown key '" + child(it.key()) + "'");
      }
    }
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

 private:
  template <typename T>
  T convert(const json& v, const std::string& key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw type_error(key, "a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw type_error(key, "a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw type_error(key, "a number");
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw type_error(key, "a nonnegative integer");
      return v.get<T>();
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_integer()) throw type_error(key, "an integer");
      return v.get<T>();
    }
  }

  ConfigError type_error(const std::string& key, const char* expected) const {
    return ConfigError("key '" + child(key) + "' must be " + expected);
  }

  const json& node_;
  std::string path_;
  std::vector<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& text) {
  std::filesystem::path p(text);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

void read_train(Reader r, lstm::TrainConfig& t) {
  r.optional("learning_rate", t.learning_rate);
  r.optional("beta1", t.adam_beta1);
  r.optional("beta2", t.adam_beta2);
  r.optional("epsilon", t.adam_epsilon);
  r.optional("epochs", t.epochs);
  r.optional("batch_size", t.batch_size);
  std::string loss(lstm::to_string(t.loss));
  r.optional("loss", loss);
  try {
    t.loss = lstm::loss_from_string(loss);
  } catch (const std::exception& e) {
    throw ConfigError(r.child("loss") + ": " + e.what());
  }
  r.reject_unknown();
}

json write_train(const lstm::TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate}, {"beta1", t.adam_beta1},         {"beta2", t.adam_beta2},
              {"epsilon", t.adam_epsilon},        {"epochs", t.epochs},             {"batch_size", t.batch_size},
              {"loss", std::string(lstm::to_string(t.loss))}};
}

void check_fraction(double f, const char* name, bool allow_zero) {
  if (!std::isfinite(f) || f < 0.0 || f >= 1.0 || (!allow_zero && f == 0.0)) {
    throw ConfigError(std::string(name) + " must lie in " + (allow_zero ? "[0, 1)" : "(0, 1)"));
  }
}

void check_positive(int v, const char* name) {
  if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
}

}  // namespace

lstm::Architecture SoilModelConfig::architecture() const {
  return {static_cast<int>(timeseries::kFeatureCount), encoder_hidden, decoder_hidden, head_hidden,
          static_cast<int>(timeseries::kDefaultHorizon), residual};
}

lstm::Architecture IndexModelConfig::architecture() const {
  return {static_cast<int>(vegindex::kPixelFeatures), encoder_hidden, decoder_hidden, head_hidden, 1, residual};
}

void RunConfig::validate() const {
  if (paths.sensor_csv.empty() || paths.sensor_locations.empty() || paths.stack_manifest.empty()) {
    throw ConfigError("paths.sensor_csv, paths.sensor_locations and paths.stack_manifest are required");
  }
  if (soil.input_length < 2) throw ConfigError("soil_model.input_length must be at least 2");
  check_positive(soil.encoder_hidden, "soil_model.encoder_hidden");
  check_positive(soil.decoder_hidden, "soil_model.decoder_hidden");
  check_positive(soil.head_hidden, "soil_model.head_hidden");
  if (soil.max_gap < 0) throw ConfigError("soil_model.max_gap must be >= 0");
  // A zero test fraction passes here and is rejected by the chronological split.
  check_fraction(soil.test_fraction, "soil_model.test_fraction", true);
  check_fraction(soil.validation_fraction, "soil_model.validation_fraction", true);
  soil.train.validate();

  check_positive(index.encoder_hidden, "index_model.encoder_hidden");
  check_positive(index.decoder_hidden, "index_model.decoder_hidden");
  check_positive(index.head_hidden, "index_model.head_hidden");
  check_fraction(index.test_fraction, "index_model.test_fraction", true);
  check_fraction(index.validation_fraction, "index_model.validation_fraction", true);
  index.train.validate();

  if (variogram.fixed) {
    try {
      variogram.fixed->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("variogram: ") + e.what());
    }
  }
  if (variogram.n_bins < 3) throw ConfigError("variogram.n_bins must be at least 3");
  if (variogram.max_lag && !(*variogram.max_lag > 0.0)) throw ConfigError("variogram.max_lag must be positive");
  grid.geometry.validate();
  if (bands.red.empty() || bands.nir.empty() || bands.swir.empty()) throw ConfigError("band names must be nonempty");
  if (forecast_day < 1 || forecast_day > static_cast<int>(timeseries::kDefaultHorizon)) {
    throw ConfigError("forecast_day must lie in 1.." + std::to_string(timeseries::kDefaultHorizon));
  }
}

void RunConfig::check_paths() const {
  for (const auto* p : {&paths.sensor_csv, &paths.sensor_locations, &paths.stack_manifest}) {
    if (!std::filesystem::exists(*p)) throw ConfigError("input path '" + p->string() + "' does not exist");
  }
}

RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir, std::string_view source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(source) + ": invalid JSON: " + e.what());
  }

  RunConfig c;
  try {
    Reader r(root, "");
    c.seed = r.required<std::uint64_t>("seed");

    {
      Reader p = r.object("paths");
      c.paths.sensor_csv = resolve(base_dir, p.required<std::string>("sensor_csv"));
      c.paths.sensor_locations = resolve(base_dir, p.required<std::string>("sensor_locations"));
      c.paths.stack_manifest = resolve(base_dir, p.required<std::string>("stack_manifest"));
      std::string out = "output";
      p.optional("output_dir", out);
      c.paths.output_dir = resolve(base_dir, out);
      p.reject_unknown();
    }
    {
      Reader s = r.object("soil_model");
      s.optional("input_length", c.soil.input_length);
      s.optional("encoder_hidden", c.soil.encoder_hidden);
      s.optional("decoder_hidden", c.soil.decoder_hidden);
      s.optional("head_hidden", c.soil.head_hidden);
      s.optional("residual", c.soil.residual);
      s.optional("max_gap", c.soil.max_gap);
      s.optional("test_fraction", c.soil.test_fraction);
      s.optional("validation_fraction", c.soil.validation_fraction);
      read_train(s.object("train"), c.soil.train);
      s.reject_unknown();
    }
    {
      Reader s = r.object("index_model");
      std::string kind(vegindex::to_string(c.index.kind));
      s.optional("index", kind);
      c.index.kind = vegindex::index_kind_from_string(kind);
      s.optional("encoder_hidden", c.index.encoder_hidden);
      s.optional("decoder_hidden", c.index.decoder_hidden);
      s.optional("head_hidden", c.index.head_hidden);
      s.optional("residual", c.index.residual);
      s.optional("test_fraction", c.index.test_fraction);
      s.optional("validation_fraction", c.index.validation_fraction);
      read_train(s.object("train"), c.index.train);
      s.reject_unknown();
    }
    {
      Reader v = r.object("variogram");
      v.optional("n_bins", c.variogram.n_bins);
      if (v.has("max_lag")) {
        double lag = 0.0;
        v.optional("max_lag", lag);
        c.variogram.max_lag = lag;
      } else {
        v.skip("max_lag");
      }
      const bool any = v.has("nugget") || v.has("sill") || v.has("range");
      if (any) {
        kriging::Variogram fixed;
        fixed.nugget = v.required<double>("nugget");
        fixed.sill = v.required<double>("sill");
        fixed.range = v.required<double>("range");
        c.variogram.fixed = fixed;
      }
      v.reject_unknown();
    }
    {
      Reader g = r.object("grid");
      g.optional("width", c.grid.geometry.width);
      g.optional("height", c.grid.geometry.height);
      g.optional("origin_x", c.grid.geometry.origin_x);
      g.optional("origin_y", c.grid.geometry.origin_y);
      g.optional("cell_size", c.grid.geometry.cell_size);
      g.optional("mask_with_index", c.grid.mask_with_index);
      g.reject_unknown();
    }
    {
      Reader b = r.object("bands");
      b.optional("red", c.bands.red);
      b.optional("nir", c.bands.nir);
      b.optional("swir", c.bands.swir);
      b.reject_unknown();
    }
    r.optional("forecast_day", c.forecast_day);
    r.reject_unknown();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  c.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path.parent_path(), path.string());
}

std::string serialize_config(const RunConfig& c) {
  json root;
  root["seed"] = c.seed;
  root["paths"] = {{"sensor_csv", c.paths.sensor_csv.generic_string()},
                   {"sensor_locations", c.paths.sensor_locations.generic_string()},
                   {"stack_manifest", c.paths.stack_manifest.generic_string()},
                   {"output_dir", c.paths.output_dir.generic_string()}};
  root["soil_model"] = {{"input_length", c.soil.input_length},
                        {"encoder_hidden", c.soil.encoder_hidden},
                        {"decoder_hidden", c.soil.decoder_hidden},
                        {"head_hidden", c.soil.head_hidden},
                        {"residual", c.soil.residual},
                        {"max_gap", c.soil.max_gap},
                        {"test_fraction", c.soil.test_fraction},
                        {"validation_fraction", c.soil.validation_fraction},
                        {"train", write_train(c.soil.train)}};
  root["index_model"] = {{"index", std::string(vegindex::to_string(c.index.kind))},
                         {"encoder_hidden", c.index.encoder_hidden},
                         {"decoder_hidden", c.index.decoder_hidden},
                         {"head_hidden", c.index.head_hidden},
                         {"residual", c.index.residual},
                         {"test_fraction", c.index.test_fraction},
                         {"validation_fraction", c.index.validation_fraction},
                         {"train", write_train(c.index.train)}};
  json v = {{"n_bins", c.variogram.n_bins}};
  if (c.variogram.max_lag) v["max_lag"] = *c.variogram.max_lag;
  if (c.variogram.fixed) {
    v["nugget"] = c.variogram.fixed->nugget;
    v["sill"] = c.variogram.fixed->sill;
    v["range"] = c.variogram.fixed->range;
  }
  root["variogram"] = v;
  const auto& g = c.grid.geometry;
  root["grid"] = {{"width", g.width},         {"height", g.height},       {"origin_x", g.origin_x},
                  {"origin_y", g.origin_y},   {"cell_size", g.cell_size}, {"mask_with_index", c.grid.mask_with_index}};
  root["bands"] = {{"red", c.bands.red}, {"nir", c.bands.nir}, {"swir", c.bands.swir}};
  root["forecast_day"] = c.forecast_day;
  return root.dump(2) + "\n";
}

}  // namespace smartcast::pipeline
