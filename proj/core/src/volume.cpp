#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "smartcast/error.hpp"
#include "smartcast/kriging.hpp"
#include "text_util.hpp"

namespace smartcast::kriging {

MoistureVolume stack_depths(std::vector<DepthLayer> layers) {
  if (layers.empty()) throw DataError("stack_depths: no depth layers");
  std::sort(layers.begin(), layers.end(), [](const DepthLayer& a, const DepthLayer& b) { return a.depth_cm < b.depth_cm; });
  const GridGeometry& g = layers.front().field.geometry;
  g.validate();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& f = layers[i].field;
    if (i > 0 && layers[i].depth_cm == layers[i - 1].depth_cm) {
      throw DataError("stack_depths: depth " + std::to_string(layers[i].depth_cm) + " cm appears twice");
    }
    if (!(f.geometry == g)) {
      throw DataError("stack_depths: layer at " + std::to_string(layers[i].depth_cm) + " cm has a different grid geometry");
    }
    if (f.values.size() != g.cell_count() || f.variances.size() != g.cell_count() || f.evaluated.size() != g.cell_count()) {
      throw DataError("stack_depths: layer at " + std::to_string(layers[i].depth_cm) + " cm has the wrong cell count");
    }
  }
  return MoistureVolume{g, std::move(layers)};
}

vegindex::BandGrid layer_to_band_grid(const DepthLayer& layer) {
  const auto& f = layer.field;
  vegindex::BandGrid grid(f.geometry.width, f.geometry.height, {"value", "variance"}, kVolumeNodata);
  auto value = grid.band(0);
  auto variance = grid.band(1);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    const bool ok = f.evaluated[i] && std::isfinite(f.values[i]) && std::isfinite(f.variances[i]);
    value[i] = ok ? static_cast<float>(f.values[i]) : kVolumeNodata;
    variance[i] = ok ? static_cast<float>(f.variances[i]) : kVolumeNodata;
  }
  return grid;
}

void write_grid_csv(std::ostream& out, const MoistureVolume& volume) {
  const auto& g = volume.geometry;
  out << "x,y,depth_cm,value,variance\n";
  for (const auto& layer : volume.layers) {
    const auto& f = layer.field;
    for (int r = 0; r < g.height; ++r) {
      for (int c = 0; c < g.width; ++c) {
        const auto i = static_cast<std::size_t>(r) * static_cast<std::size_t>(g.width) + static_cast<std::size_t>(c);
        if (!f.evaluated[i]) continue;
        out << detail::format_double(g.center_x(c)) << ',' << detail::format_double(g.center_y(r)) << ','
            << layer.depth_cm << ',' << detail::format_double(f.values[i]) << ','
            << detail::format_double(f.variances[i]) << '\n';
      }
    }
  }
  if (!out) throw DataError("write_grid_csv: write failed");
}

VolumeExport export_volume(const MoistureVolume& volume, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  VolumeExport ex;
  ex.manifest = dir / "manifest.csv";
  std::ofstream manifest(ex.manifest);
  if (!manifest) throw DataError("cannot open '" + ex.manifest.string() + "' for writing");
  manifest << "depth_cm,path\n";
  for (const auto& layer : volume.layers) {
    const std::string name = "depth_" + std::to_string(layer.depth_cm) + "cm.bgrid";
    vegindex::save_band_grid(dir / name, layer_to_band_grid(layer));
    manifest << layer.depth_cm << ',' << name << '\n';
    ex.layers.push_back(dir / name);
  }
  if (!manifest) throw DataError("write failed for '" + ex.manifest.string() + "'");
  return ex;
}

}  // namespace smartcast::kriging
