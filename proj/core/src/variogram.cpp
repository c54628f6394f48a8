#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "smartcast/error.hpp"
#include "smartcast/kriging.hpp"

namespace smartcast::kriging {

namespace {

constexpr std::size_t kRangeGrid = 240;
constexpr int kGoldenIterations = 200;

struct ProfileFit {
  double nugget = 0.0;
  double sill = 0.0;
  double residual = std::numeric_limits<double>::infinity();
};

// For a fixed range the model is linear in (nugget, sill): solve the weighted
// least squares problem with nugget >= 0 and sill > 0.
ProfileFit fit_linear_part(std::span<const VariogramBin> bins, double range, double sill_floor) {
  double sw = 0, sp = 0, spp = 0, sy = 0, spy = 0;
  for (const auto& b : bins) {
    const double w = static_cast<double>(b.pairs);
    const double phi = 1.0 - std::exp(-3.0 * b.lag * b.lag / (range * range));
    sw += w;
    sp += w * phi;
    spp += w * phi * phi;
    sy += w * b.semivariance;
    spy += w * phi * b.semivariance;
  }

  ProfileFit fit;
  const double det = sw * spp - sp * sp;
  if (det > 1e-14 * sw * spp) {
    fit.nugget = (spp * sy - sp * spy) / det;
    fit.sill = (sw * spy - sp * sy) / det;
  } else {
    fit.nugget = -1.0;
  }
  if (fit.nugget < 0.0 || fit.sill <= 0.0) {
    // Boundary candidates: nugget pinned at 0, or sill pinned at its floor.
    const ProfileFit zero_nugget{0.0, spp > 0.0 ? std::max(spy / spp, sill_floor) : sill_floor};
    const double s_min = sill_floor;
    const ProfileFit min_sill{std::max((sy - s_min * sp) / sw, 0.0), s_min};
    const Variogram a{zero_nugget.nugget, zero_nugget.sill, range};
    const Variogram b{min_sill.nugget, min_sill.sill, range};
    const double ra = variogram_residual(bins, a);
    const double rb = variogram_residual(bins, b);
    fit = ra <= rb ? ProfileFit{a.nugget, a.sill, ra} : ProfileFit{b.nugget, b.sill, rb};
    return fit;
  }
  fit.residual = variogram_residual(bins, Variogram{fit.nugget, fit.sill, range});
  return fit;
}

}  // namespace

void Variogram::validate() const {
  if (!(nugget >= 0.0) || !std::isfinite(nugget)) throw std::invalid_argument("variogram nugget must be >= 0");
  if (!(sill > 0.0) || !std::isfinite(sill)) throw std::invalid_argument("variogram sill must be > 0");
  if (!(range > 0.0) || !std::isfinite(range)) throw std::invalid_argument("variogram range must be > 0");
}

double Variogram::operator()(double h) const { return gaussian_variogram(h, *this); }

double gaussian_variogram(double h, const Variogram& v) {
  if (h < 0.0 || std::isnan(h)) throw std::invalid_argument("gaussian_variogram: negative lag");
  if (h == 0.0) return 0.0;
  return v.nugget + v.sill * (1.0 - std::exp(-3.0 * h * h / (v.range * v.range)));
}

double default_max_lag(std::span<const SamplePoint> samples) {
  double best = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      best = std::max(best, std::hypot(samples[i].x - samples[j].x, samples[i].y - samples[j].y));
    }
  }
  return best / 2.0;
}

std::vector<VariogramBin> empirical_variogram(std::span<const SamplePoint> samples, std::size_t n_bins, double max_lag) {
  if (samples.size() < 2) throw DataError("empirical_variogram: need at least 2 samples");
  if (n_bins == 0 || !(max_lag > 0.0)) throw std::invalid_argument("empirical_variogram: need n_bins > 0 and max_lag > 0");

  const double width = max_lag / static_cast<double>(n_bins);
  std::vector<double> sums(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const double h = std::hypot(samples[i].x - samples[j].x, samples[i].y - samples[j].y);
      if (h > max_lag) continue;
      const auto bin = std::min(static_cast<std::size_t>(h / width), n_bins - 1);
      const double d = samples[i].value - samples[j].value;
      sums[bin] += d * d;
      ++counts[bin];
    }
  }

  std::vector<VariogramBin> bins;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (counts[b] == 0) continue;
    bins.push_back({(static_cast<double>(b) + 0.5) * width, sums[b] / (2.0 * static_cast<double>(counts[b])), counts[b]});
  }
  if (bins.empty()) throw DataError("empirical_variogram: every sample pair lies beyond max_lag");
  return bins;
}

double variogram_residual(std::span<const VariogramBin> bins, const Variogram& v) {
  double r = 0.0;
  for (const auto& b : bins) {
    const double d = b.semivariance - gaussian_variogram(b.lag, v);
    r += static_cast<double>(b.pairs) * d * d;
  }
  return r;
}

Variogram fit_variogram(std::span<const VariogramBin> bins) {
  std::size_t nonempty = 0;
  double max_gamma = 0.0;
  double min_lag = std::numeric_limits<double>::infinity();
  double max_lag = 0.0;
  for (const auto& b : bins) {
    if (b.pairs == 0) continue;
    ++nonempty;
    max_gamma = std::max(max_gamma, b.semivariance);
    if (b.lag > 0.0) min_lag = std::min(min_lag, b.lag);
    max_lag = std::max(max_lag, b.lag);
  }
  if (nonempty < 3) throw DataError("fit_variogram: need at least 3 nonempty bins, have " + std::to_string(nonempty));
  if (!(max_gamma > 0.0)) throw DataError("fit_variogram: flat field (all semivariances are zero)");
  if (!(max_lag > 0.0) || !std::isfinite(min_lag)) throw DataError("fit_variogram: bins need positive lags");

  std::vector<VariogramBin> used;
  for (const auto& b : bins) {
    if (b.pairs > 0) used.push_back(b);
  }
  const double sill_floor = 1e-12 * max_gamma;

  // Grid search over log(range).
  const double lo = std::log(min_lag / 10.0);
  const double hi = std::log(max_lag * 10.0);
  std::size_t best = 0;
  double best_res = std::numeric_limits<double>::infinity();
  std::vector<double> grid(kRangeGrid);
  for (std::size_t k = 0; k < kRangeGrid; ++k) {
    grid[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(kRangeGrid - 1);
    const double res = fit_linear_part(used, std::exp(grid[k]), sill_floor).residual;
    if (res < best_res) {
      best_res = res;
      best = k;
    }
  }

  // Golden-section refinement inside the neighbouring grid cells.
  double a = grid[best == 0 ? 0 : best - 1];
  double b = grid[std::min(best + 1, kRangeGrid - 1)];
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a);
  double d = a + ratio * (b - a);
  double fc = fit_linear_part(used, std::exp(c), sill_floor).residual;
  double fd = fit_linear_part(used, std::exp(d), sill_floor).residual;
  for (int it = 0; it < kGoldenIterations && (b - a) > 1e-13; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = fit_linear_part(used, std::exp(c), sill_floor).residual;
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = fit_linear_part(used, std::exp(d), sill_floor).residual;
    }
  }

  double best_log = 0.5 * (a + b);
  ProfileFit fit = fit_linear_part(used, std::exp(best_log), sill_floor);
  if (best_res < fit.residual) {
    best_log = grid[best];
    fit = fit_linear_part(used, std::exp(best_log), sill_floor);
  }
  return Variogram{fit.nugget, fit.sill, std::exp(best_log)};
}

}  // namespace smartcast::kriging
