#include "smartcast/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "smartcast/error.hpp"
#include "text_util.hpp"

namespace smartcast::kriging {

namespace {

// Reciprocal 1-norm condition number below which the system counts as
// ill-conditioned and the Gamma diagonal gets regularized.
constexpr double kMinRcond = 1e-10;
constexpr double kFirstJitter = 1e-10;
constexpr double kMaxJitter = 1e-6;

// In-place LU with partial pivoting on a row-major n x n matrix. Returns false
// on an exactly zero pivot.
bool lu_factor(std::vector<double>& a, std::vector<std::size_t>& piv, std::size_t n) {
  piv.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a[k * n + k]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a[i * n + k]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    piv[k] = p;
    if (best == 0.0 || !std::isfinite(best)) return false;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[p * n + j]);
    }
    const double inv = 1.0 / a[k * n + k];
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] * inv;
      a[i * n + k] = f;
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
    }
  }
  return true;
}

void lu_solve(const std::vector<double>& lu, const std::vector<std::size_t>& piv, std::size_t n, std::vector<double>& x) {
  for (std::size_t k = 0; k < n; ++k) {
    if (piv[k] != k) std::swap(x[k], x[piv[k]]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t j = 0; j < i; ++j) s -= lu[i * n + j] * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= lu[i * n + j] * x[j];
    x[i] = s / lu[i * n + i];
  }
}

double one_norm(const std::vector<double>& a, std::size_t n) {
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i * n + j]);
    best = std::max(best, s);
  }
  return best;
}

// Exact 1-norm reciprocal condition number through the explicit inverse.
// The systems here are small (one row per sensor), so O(n^3) is fine.
double reciprocal_condition(const std::vector<double>& a, const std::vector<double>& lu,
                            const std::vector<std::size_t>& piv, std::size_t n) {
  double inv_norm = 0.0;
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    lu_solve(lu, piv, n, col);
    double s = 0.0;
    for (double v : col) s += std::abs(v);
    if (!std::isfinite(s)) return 0.0;
    inv_norm = std::max(inv_norm, s);
  }
  const double denom = one_norm(a, n) * inv_norm;
  return denom > 0.0 ? 1.0 / denom : 0.0;
}

double cross(const std::pair<double, double>& o, const std::pair<double, double>& a, const std::pair<double, double>& b) {
  return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<std::pair<double, double>> convex_hull(std::vector<std::pair<double, double>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<std::pair<double, double>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

std::string point_text(const SamplePoint& p) {
  return "(" + detail::format_double(p.x) + ", " + detail::format_double(p.y) + ")";
}

}  // namespace

void GridGeometry::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("grid width and height must be positive");
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ConfigError("grid cell_size must be positive");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw ConfigError("grid origin must be finite");
}

KrigingModel KrigingModel::build(std::vector<SamplePoint> samples, const Variogram& variogram) {
  variogram.validate();
  if (samples.empty()) throw DataError("kriging: no sample points");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.value)) {
      throw DataError("kriging: sample " + std::to_string(i) + " has a non-finite coordinate or value");
    }
  }
  {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::pair(samples[a].x, samples[a].y) < std::pair(samples[b].x, samples[b].y);
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
      const auto& a = samples[order[k - 1]];
      const auto& b = samples[order[k]];
      if (a.x == b.x && a.y == b.y) {
        throw DataError("kriging: duplicate coordinates, samples " + std::to_string(std::min(order[k - 1], order[k])) + " and " +
                        std::to_string(std::max(order[k - 1], order[k])) + " both at " + point_text(a));
      }
    }
  }

  KrigingModel m;
  m.samples_ = std::move(samples);
  m.variogram_ = variogram;
  const std::size_t n = m.samples_.size();
  const std::size_t dim = n + 1;

  std::vector<double> base(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double h = std::hypot(m.samples_[i].x - m.samples_[j].x, m.samples_[i].y - m.samples_[j].y);
      base[i * dim + j] = base[j * dim + i] = gaussian_variogram(h, variogram);
    }
    base[i * dim + n] = base[n * dim + i] = 1.0;
  }

  double jitter = 0.0;
  for (;;) {
    m.matrix_ = base;
    for (std::size_t i = 0; i < n; ++i) m.matrix_[i * dim + i] = jitter;
    m.lu_ = m.matrix_;
    if (lu_factor(m.lu_, m.pivots_, dim) && reciprocal_condition(m.matrix_, m.lu_, m.pivots_, dim) >= kMinRcond) break;
    if (jitter >= kMaxJitter * variogram.sill) {
      throw NumericError("kriging system with " + std::to_string(n) + " samples is ill-conditioned even with diagonal jitter " +
                         detail::format_double(jitter));
    }
    jitter = jitter == 0.0 ? kFirstJitter * variogram.sill : jitter * 10.0;
  }
  m.jitter_ = jitter;

  std::vector<std::pair<double, double>> pts;
  pts.reserve(n);
  for (const auto& s : m.samples_) pts.emplace_back(s.x, s.y);
  m.hull_ = convex_hull(std::move(pts));
  return m;
}

std::vector<double> KrigingModel::solve(std::span<const double> rhs) const {
  if (rhs.size() != system_size()) throw std::invalid_argument("KrigingModel::solve: rhs size mismatch");
  std::vector<double> x(rhs.begin(), rhs.end());
  lu_solve(lu_, pivots_, system_size(), x);
  return x;
}

// An exactly coincident sample gets the jittered diagonal value, so the RHS
// matches that column of the system and the sample is reproduced exactly.
std::vector<double> KrigingModel::rhs_for(double x, double y) const {
  const std::size_t n = samples_.size();
  std::vector<double> rhs(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = std::hypot(samples_[i].x - x, samples_[i].y - y);
    rhs[i] = h == 0.0 ? jitter_ : gaussian_variogram(h, variogram_);
  }
  rhs[n] = 1.0;
  return rhs;
}

std::vector<double> KrigingModel::weights(double x, double y, double* lagrange) const {
  auto sol = solve(rhs_for(x, y));
  if (lagrange) *lagrange = sol.back();
  sol.pop_back();
  return sol;
}

KrigingPrediction KrigingModel::predict(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("KrigingModel::predict: non-finite query");
  const auto rhs = rhs_for(x, y);
  std::vector<double> sol(rhs);
  lu_solve(lu_, pivots_, system_size(), sol);

  KrigingPrediction p;
  const std::size_t n = samples_.size();
  double var = sol[n];
  for (std::size_t i = 0; i < n; ++i) {
    p.value += sol[i] * samples_[i].value;
    p.weight_sum += sol[i];
    var += sol[i] * rhs[i];
  }
  p.variance = std::max(var, 0.0);
  p.extrapolated = !inside_hull(x, y);
  return p;
}

bool KrigingModel::inside_hull(double x, double y) const {
  const std::pair<double, double> q{x, y};
  if (hull_.size() == 1) return hull_[0] == q;
  double scale = 0.0;
  for (const auto& v : hull_) scale = std::max({scale, std::abs(v.first), std::abs(v.second)});
  const double tol = 1e-12 * std::max(scale, 1.0);
  if (hull_.size() == 2) {
    const auto& a = hull_[0];
    const auto& b = hull_[1];
    const double len = std::hypot(b.first - a.first, b.second - a.second);
    if (std::abs(cross(a, b, q)) > tol * len) return false;
    const double t = ((x - a.first) * (b.first - a.first) + (y - a.second) * (b.second - a.second)) / (len * len);
    return t >= -1e-12 && t <= 1.0 + 1e-12;
  }
  for (std::size_t i = 0; i < hull_.size(); ++i) {
    const auto& a = hull_[i];
    const auto& b = hull_[(i + 1) % hull_.size()];
    const double len = std::hypot(b.first - a.first, b.second - a.second);
    if (cross(a, b, q) < -tol * len) return false;
  }
  return true;
}

GridField interpolate_grid(const KrigingModel& model, const GridGeometry& geometry, std::span<const std::uint8_t> mask) {
  geometry.validate();
  const std::size_t cells = geometry.cell_count();
  if (!mask.empty() && mask.size() != cells) throw std::invalid_argument("interpolate_grid: mask size mismatch");

  GridField f{geometry, std::vector<double>(cells, std::nan("")), std::vector<double>(cells, std::nan("")),
              std::vector<std::uint8_t>(cells, 0)};
  for (int r = 0; r < geometry.height; ++r) {
    for (int c = 0; c < geometry.width; ++c) {
      const auto i = static_cast<std::size_t>(r) * static_cast<std::size_t>(geometry.width) + static_cast<std::size_t>(c);
      if (!mask.empty() && !mask[i]) continue;
      const auto p = model.predict(geometry.center_x(c), geometry.center_y(r));
      f.values[i] = p.value;
      f.variances[i] = p.variance;
      f.evaluated[i] = 1;
    }
  }
  return f;
}

GridField interpolate_grid(const KrigingModel& model, const GridGeometry& geometry, const vegindex::IndexImage& image) {
  if (image.width != geometry.width || image.height != geometry.height) {
    throw DataError("interpolate_grid: mask image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    " but the grid is " + std::to_string(geometry.width) + "x" + std::to_string(geometry.height));
  }
  std::vector<std::uint8_t> mask(image.pixel_count());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = image.is_nodata(image.values[i]) ? 0 : 1;
  return interpolate_grid(model, geometry, mask);
}

LooScore loo_score(std::span<const SamplePoint> samples, const Variogram& variogram) {
  const std::size_t n = samples.size();
  if (n < 3) throw DataError("loo_score: need at least 3 samples, have " + std::to_string(n));
  double mean = 0.0;
  for (const auto& s : samples) mean += s.value;
  mean /= static_cast<double>(n);
  double sst = 0.0;
  for (const auto& s : samples) sst += (s.value - mean) * (s.value - mean);
  if (!(sst > 0.0)) throw DataError("loo_score: sample values are constant");

  LooScore score;
  score.predictions.resize(n);
  double sse = 0.0;
  std::vector<SamplePoint> rest;
  rest.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    rest.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) rest.push_back(samples[j]);
    }
    const auto model = KrigingModel::build(rest, variogram);
    score.predictions[i] = model.predict(samples[i].x, samples[i].y).value;
    const double e = score.predictions[i] - samples[i].value;
    sse += e * e;
  }
  score.raw = 1.0 - sse / sst;
  score.clamped = std::clamp(score.raw, 0.0, 1.0);
  return score;
}

}  // namespace smartcast::kriging
