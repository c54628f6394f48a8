#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smartcast/band_grid.hpp"
#include "smartcast/vegindex.hpp"

namespace smartcast::kriging {

struct SamplePoint {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
};

// Gaussian variogram in practical-range form:
//   gamma(h) = nugget + sill * (1 - exp(-3 h^2 / range^2)) for h > 0, gamma(0) = 0.
// gamma(range) is nugget + ~0.95 sill.
struct Variogram {
  double nugget = 0.0;
  double sill = 1.0;
  double range = 1.0;

  void validate() const;
  double operator()(double h) const;

  friend bool operator==(const Variogram&, const Variogram&) = default;
};

double gaussian_variogram(double h, const Variogram& v);

struct VariogramBin {
  double lag = 0.0;           // bin center
  double semivariance = 0.0;  // (1 / 2N) * sum (v_i - v_j)^2
  std::size_t pairs = 0;
};

// Half the largest pairwise separation. Longer lags have few pairs and are
// dominated by the edges of the sampled region.
double default_max_lag(std::span<const SamplePoint> samples);

// Equal-width lag bins over [0, max_lag]; empty bins are omitted.
std::vector<VariogramBin> empirical_variogram(std::span<const SamplePoint> samples, std::size_t n_bins, double max_lag);

// Pair-count weighted squared residual of `v` against the bins.
double variogram_residual(std::span<const VariogramBin> bins, const Variogram& v);

// Weighted least squares over (nugget, sill, range): log-spaced grid search on
// range, then golden-section refinement on range with the nonnegative
// (nugget, sill) pair solved in closed form at every trial range.
Variogram fit_variogram(std::span<const VariogramBin> bins);

struct KrigingPrediction {
  double value = 0.0;
  double variance = 0.0;
  double weight_sum = 0.0;
  bool extrapolated = false;  // query lies outside the sample convex hull
};

// Ordinary kriging model with a factorized bordered system
//   [Gamma 1; 1^T 0] [w; mu] = [gamma_q; 1].
// Immutable once built; prediction is thread-safe.
class KrigingModel {
 public:
  // Throws DataError on duplicate coordinates and NumericError if the system
  // stays ill-conditioned after the maximum diagonal jitter.
  static KrigingModel build(std::vector<SamplePoint> samples, const Variogram& variogram);

  KrigingPrediction predict(double x, double y) const;

  // Kriging weights for a query; `lagrange` receives mu if not null.
  std::vector<double> weights(double x, double y, double* lagrange = nullptr) const;

  const std::vector<SamplePoint>& samples() const { return samples_; }
  const Variogram& variogram() const { return variogram_; }
  // Diagonal regularization actually applied (0 when none was needed).
  double jitter() const { return jitter_; }

  std::size_t system_size() const { return samples_.size() + 1; }
  // Row-major (n+1) x (n+1) assembled system, jitter included.
  const std::vector<double>& system_matrix() const { return matrix_; }
  std::vector<double> solve(std::span<const double> rhs) const;

  bool inside_hull(double x, double y) const;

 private:
  KrigingModel() = default;
  std::vector<double> rhs_for(double x, double y) const;

  std::vector<SamplePoint> samples_;
  Variogram variogram_;
  double jitter_ = 0.0;
  std::vector<double> matrix_;
  std::vector<double> lu_;
  std::vector<std::size_t> pivots_;
  std::vector<std::pair<double, double>> hull_;
};

struct GridGeometry {
  int width = 0;
  int height = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 1.0;

  std::size_t cell_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double center_x(int col) const { return origin_x + (col + 0.5) * cell_size; }
  double center_y(int row) const { return origin_y + (row + 0.5) * cell_size; }
  void validate() const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

// Row-major cell values; cells outside the mask hold NaN and evaluated = 0.
struct GridField {
  GridGeometry geometry;
  std::vector<double> values;
  std::vector<double> variances;
  std::vector<std::uint8_t> evaluated;
};

GridField interpolate_grid(const KrigingModel& model, const GridGeometry& geometry,
                           std::span<const std::uint8_t> mask = {});
// Cells where `image` is nodata are skipped; image and grid shapes must agree.
GridField interpolate_grid(const KrigingModel& model, const GridGeometry& geometry, const vegindex::IndexImage& image);

struct LooScore {
  double raw = 0.0;      // 1 - SSE / SST
  double clamped = 0.0;  // raw clamped to [0, 1] for reporting
  std::vector<double> predictions;
};

// Leave-one-out coefficient of determination. Needs n >= 3 and non-constant
// values (DataError otherwise).
LooScore loo_score(std::span<const SamplePoint> samples, const Variogram& variogram);

struct DepthLayer {
  int depth_cm = 0;
  GridField field;
};

struct MoistureVolume {
  GridGeometry geometry;
  std::vector<DepthLayer> layers;  // ascending depth
};

// Sorts by depth; rejects duplicate depths and mismatched geometry.
MoistureVolume stack_depths(std::vector<DepthLayer> layers);

inline constexpr float kVolumeNodata = -9999.0f;

// Two bands, "value" and "variance"; unevaluated cells become nodata.
vegindex::BandGrid layer_to_band_grid(const DepthLayer& layer);

// `x,y,depth_cm,value,variance`, one row per evaluated cell.
void write_grid_csv(std::ostream& out, const MoistureVolume& volume);

struct VolumeExport {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> layers;
};

// One BandGrid per depth plus `manifest.csv` (`depth_cm,path`) in `dir`.
VolumeExport export_volume(const MoistureVolume& volume, const std::filesystem::path& dir);

}  // namespace smartcast::kriging
