#pragma once

// Continuous shapes with analytic curvature, their rasterization, and the
// ground-truth curvature-cost integrals used for training and evaluation.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <variant>

#include "core.hpp"

namespace curvemrf {

using Rng = std::mt19937_64;

inline double curvature_cost(double kappa, double f_max) {
  if (!(f_max > 0)) throw std::invalid_argument("curvature_cost: f_max must be positive");
  return std::min(kappa * kappa, f_max);
}

inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0) a += two_pi;
  if (a >= two_pi) a = 0.0;
  return a;
}

// ---------------------------------------------------------------------------
// shapes

struct Circle {
  double radius = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// rho(alpha) = a0 + sum_k a_k sin(k alpha) + b_k cos(k alpha), polar about (cx, cy).
struct FourierShape {
  double cx = 0.0;
  double cy = 0.0;
  double a0 = 1.0;
  std::array<double, 5> a{};
  std::array<double, 5> b{};

  double rho(double t) const {
    double r = a0;
    for (int k = 1; k <= 5; ++k) r += a[k - 1] * std::sin(k * t) + b[k - 1] * std::cos(k * t);
    return r;
  }
  double drho(double t) const {
    double r = 0;
    for (int k = 1; k <= 5; ++k) r += k * (a[k - 1] * std::cos(k * t) - b[k - 1] * std::sin(k * t));
    return r;
  }
  double d2rho(double t) const {
    double r = 0;
    for (int k = 1; k <= 5; ++k) r -= k * k * (a[k - 1] * std::sin(k * t) + b[k - 1] * std::cos(k * t));
    return r;
  }
};

/// y' = a x'^2 + b x' + c in a frame rotated by frame_angle about (ox, oy).
/// Points with y' above the curve are foreground. [t0, t1] bounds the open
/// curve for cost integrals.
struct QuadraticCurve {
  double frame_angle = 0.0;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double ox = 0.0;
  double oy = 0.0;
  double t0 = -1.0;
  double t1 = 1.0;

  double height(double t) const { return (a * t + b) * t + c; }
  double slope(double t) const { return 2.0 * a * t + b; }
  double signed_curvature(double t) const {
    const double s = slope(t);
    return 2.0 * a / std::pow(1.0 + s * s, 1.5);
  }
  std::pair<double, double> to_local(double x, double y) const {
    const double dx = x - ox, dy = y - oy;
    const double ct = std::cos(frame_angle), st = std::sin(frame_angle);
    return {dx * ct + dy * st, -dx * st + dy * ct};
  }
  bool inside(double x, double y) const {
    auto [u, v] = to_local(x, y);
    return v > height(u);
  }
  /// Parameter of the curve point closest to the frame origin, searched in [-lim, lim].
  double nearest_parameter(double lim) const {
    auto dist2 = [&](double t) {
      const double h = height(t);
      return t * t + h * h;
    };
    const int n = 2000;
    double best_t = 0.0, best = dist2(0.0);
    for (int i = 0; i <= n; ++i) {
      const double t = -lim + 2.0 * lim * i / n;
      const double d = dist2(t);
      if (d < best) best = d, best_t = t;
    }
    // Newton on the derivative of the squared distance.
    for (int it = 0; it < 30; ++it) {
      const double h = height(best_t), s = slope(best_t);
      const double g = 2.0 * best_t + 2.0 * h * s;
      const double gp = 2.0 + 2.0 * s * s + 4.0 * a * h;
      if (gp <= 0) break;
      const double t = best_t - g / gp;
      if (!(std::abs(t) <= lim) || dist2(t) > best) break;
      best = dist2(t);
      const bool done = std::abs(t - best_t) < 1e-15;
      best_t = t;
      if (done) break;
    }
    return best_t;
  }
};

using ContinuousShape = std::variant<Circle, FourierShape, QuadraticCurve>;

inline const char* shape_kind(const ContinuousShape& s) {
  switch (s.index()) {
    case 0: return "circle";
    case 1: return "fourier";
    default: return "quadratic";
  }
}

inline bool shape_contains(const ContinuousShape& s, double x, double y) {
  return std::visit(
      [&](const auto& sh) -> bool {
        using T = std::decay_t<decltype(sh)>;
        if constexpr (std::is_same_v<T, Circle>) {
          const double dx = x - sh.cx, dy = y - sh.cy;
          return dx * dx + dy * dy <= sh.radius * sh.radius;
        } else if constexpr (std::is_same_v<T, FourierShape>) {
          const double dx = x - sh.cx, dy = y - sh.cy;
          return std::hypot(dx, dy) <= sh.rho(std::atan2(dy, dx));
        } else {
          return sh.inside(x, y);
        }
      },
      s);
}

/// Pixel (r, c) is foreground iff its center (c + 0.5, r + 0.5) is inside.
inline BinaryLabeling rasterize(const ContinuousShape& s, Dims dims) {
  BinaryLabeling x(dims.width, dims.height);
  for (std::size_t r = 0; r < dims.height; ++r)
    for (std::size_t c = 0; c < dims.width; ++c)
      if (shape_contains(s, c + 0.5, r + 0.5)) x.set(r, c, 1);
  return x;
}

inline Circle make_circle(double radius, double cx, double cy, Dims dims) {
  if (!(radius > 0)) throw std::invalid_argument("make_circle: radius must be positive");
  if (cx - radius < 1.0 || cy - radius < 1.0 || cx + radius > dims.width - 1.0 || cy + radius > dims.height - 1.0)
    throw std::invalid_argument("make_circle: circle exceeds the grid margin");
  return {radius, cx, cy};
}

/// Center at the grid middle plus a uniform subpixel shift; radius uniform in
/// [r_min, min(r_max, largest radius that keeps a 1 pixel margin)].
inline Circle make_random_circle(Rng& rng, Dims dims, double r_min = 5.0, double r_max = 50.0) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double cx = std::floor(dims.width / 2.0) + unit(rng);
  const double cy = std::floor(dims.height / 2.0) + unit(rng);
  const double fit = std::min({cx - 1.0, cy - 1.0, dims.width - 1.0 - cx, dims.height - 1.0 - cy});
  const double hi = std::min(r_max, fit);
  if (hi < r_min) throw std::invalid_argument("make_random_circle: grid too small");
  const double r = r_min + (hi - r_min) * unit(rng);
  return make_circle(r, cx, cy, dims);
}

inline bool fourier_is_valid(const FourierShape& f, Dims dims, double min_rho = 3.0) {
  const int n = 4096;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    const double r = f.rho(t);
    if (r < min_rho) return false;
    const double x = f.cx + r * std::cos(t), y = f.cy + r * std::sin(t);
    if (x < 1.0 || y < 1.0 || x > dims.width - 1.0 || y > dims.height - 1.0) return false;
  }
  return true;
}

/// a0 ~ U[15, 35], a_k, b_k ~ N(0, a0 / (4k)); rejected while min rho < 3 or
/// the curve leaves the grid margin.
inline FourierShape make_fourier_shape(Rng& rng, Dims dims, int budget = 10000) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < budget; ++attempt) {
    FourierShape f;
    f.cx = std::floor(dims.width / 2.0) + unit(rng);
    f.cy = std::floor(dims.height / 2.0) + unit(rng);
    f.a0 = 15.0 + 20.0 * unit(rng);
    for (int k = 1; k <= 5; ++k) {
      std::normal_distribution<double> coef(0.0, f.a0 / (4.0 * k));
      f.a[k - 1] = coef(rng);
      f.b[k - 1] = coef(rng);
    }
    if (fourier_is_valid(f, dims)) return f;
  }
  throw generation_failure("make_fourier_shape: rejection budget exhausted");
}

// ---------------------------------------------------------------------------
// cost integrals

struct CostIntegral {
  double cost = 0.0;
  double length = 0.0;
};

/// Integral of f(kappa) dl and of dl. Closed curves use the periodic trapezoid
/// rule, open quadratic curves composite Simpson.
inline CostIntegral true_total_cost(const ContinuousShape& s, double f_max, std::size_t samples = 100000) {
  if (samples < 16) throw std::invalid_argument("true_total_cost: too few samples");
  return std::visit(
      [&](const auto& sh) -> CostIntegral {
        using T = std::decay_t<decltype(sh)>;
        CostIntegral out;
        if constexpr (std::is_same_v<T, Circle>) {
          const double h = 2.0 * std::numbers::pi / samples;
          const double f = curvature_cost(1.0 / sh.radius, f_max);
          for (std::size_t i = 0; i < samples; ++i) {
            out.cost += f * sh.radius * h;
            out.length += sh.radius * h;
          }
        } else if constexpr (std::is_same_v<T, FourierShape>) {
          const double h = 2.0 * std::numbers::pi / samples;
          for (std::size_t i = 0; i < samples; ++i) {
            const double t = h * i;
            const double r = sh.rho(t), r1 = sh.drho(t), r2 = sh.d2rho(t);
            const double speed2 = r * r + r1 * r1;
            const double speed = std::sqrt(speed2);
            const double kappa = (r * r + 2.0 * r1 * r1 - r * r2) / (speed2 * speed);
            out.cost += curvature_cost(kappa, f_max) * speed * h;
            out.length += speed * h;
          }
        } else {
          const std::size_t n = samples % 2 ? samples + 1 : samples;
          const double h = (sh.t1 - sh.t0) / n;
          for (std::size_t i = 0; i <= n; ++i) {
            const double t = sh.t0 + h * i;
            const double wgt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            const double s = sh.slope(t);
            const double speed = std::sqrt(1.0 + s * s);
            out.cost += wgt * curvature_cost(sh.signed_curvature(t), f_max) * speed;
            out.length += wgt * speed;
          }
          out.cost *= h / 3.0;
          out.length *= h / 3.0;
        }
        return out;
      },
      s);
}

/// Number of 2x2 windows holding both labels.
inline std::size_t boundary_count(const BinaryLabeling& x) {
  std::size_t n = 0;
  for (std::size_t r = 0; r + 1 < x.height(); ++r)
    for (std::size_t c = 0; c + 1 < x.width(); ++c) {
      const int s = x.at(r, c) + x.at(r, c + 1) + x.at(r + 1, c) + x.at(r + 1, c + 1);
      if (s != 0 && s != 4) ++n;
    }
  return n;
}

/// Number of 4-neighbor pixel pairs with different labels.
inline std::size_t cut_edge_count(const BinaryLabeling& x) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < x.height(); ++r)
    for (std::size_t c = 0; c < x.width(); ++c) {
      if (c + 1 < x.width() && x.at(r, c) != x.at(r, c + 1)) ++n;
      if (r + 1 < x.height() && x.at(r, c) != x.at(r + 1, c)) ++n;
    }
  return n;
}

struct ShapeSample {
  ContinuousShape shape;
  BinaryLabeling labeling;
  double true_total_cost = 0.0;
  double true_length = 0.0;
  std::size_t boundary_count = 0;
};

inline ShapeSample make_shape_sample(const ContinuousShape& s, Dims dims, double f_max) {
  ShapeSample out{s, rasterize(s, dims), 0.0, 0.0, 0};
  const auto integral = true_total_cost(s, f_max);
  out.true_total_cost = integral.cost;
  out.true_length = integral.length;
  out.boundary_count = boundary_count(out.labeling);
  return out;
}

// ---------------------------------------------------------------------------
// quadratic training patches

struct TrainingSample {
  Patch patch;
  double tangent_angle = 0.0;  // [0, 2pi), foreground on the left
  double kappa = 0.0;          // signed, positive when the foreground is convex
  double target_cost = 0.0;
  QuadraticCurve curve;
};

/// Window center used as the sampling frame origin: the common corner of the
/// center 2x2 pixels.
inline double window_center(std::size_t side) { return static_cast<double>(side / 2); }

/// Discretizes a curve whose frame origin is the window center. Empty when the
/// center 2x2 is not a boundary location.
inline std::optional<TrainingSample> make_quadratic_sample(std::size_t side, double f_max, QuadraticCurve curve) {
  const double m = window_center(side);
  curve.ox = m;
  curve.oy = m;
  TrainingSample s;
  s.patch.assign(side * side, 0);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) s.patch[r * side + c] = curve.inside(c + 0.5, r + 0.5) ? 1 : 0;
  if (!center_is_mixed(s.patch, side)) return std::nullopt;
  const double t = curve.nearest_parameter(0.75);
  s.kappa = curve.signed_curvature(t);
  s.tangent_angle = wrap_angle(curve.frame_angle + std::atan2(curve.slope(t), 1.0));
  s.target_cost = curvature_cost(s.kappa, f_max);
  curve.t0 = t - 0.5;
  curve.t1 = t + 0.5;
  s.curve = curve;
  return s;
}

struct QuadraticSamplerConfig {
  std::size_t side = 8;
  double f_max = kDefaultFMax;
  /// |kappa| at the center is drawn as kappa_max * u^curvature_power, u ~ U[0,1].
  double curvature_power = 1.0;
  int budget = 10000;
};

/// Random frame angle, curvature magnitude up to sqrt(2 f_max) with random
/// sign, slope b ~ U[-1, 1], and offset |c| < 0.5 so the curve passes within
/// half a pixel of the window center.
inline TrainingSample sample_quadratic_patch(Rng& rng, const QuadraticSamplerConfig& cfg) {
  if (cfg.side < 4) throw std::invalid_argument("sample_quadratic_patch: side must be at least 4");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double kappa_max = std::sqrt(2.0 * cfg.f_max);
  for (int attempt = 0; attempt < cfg.budget; ++attempt) {
    QuadraticCurve q;
    q.frame_angle = 2.0 * std::numbers::pi * unit(rng);
    const double kappa = kappa_max * std::pow(unit(rng), cfg.curvature_power);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    q.b = 2.0 * unit(rng) - 1.0;
    q.c = unit(rng) - 0.5;
    q.a = sign * 0.5 * kappa * std::pow(1.0 + q.b * q.b, 1.5);
    if (auto s = make_quadratic_sample(cfg.side, cfg.f_max, q)) return *s;
  }
  throw generation_failure("sample_quadratic_patch: resampling budget exhausted");
}

inline TrainingSample sample_quadratic_patch(Rng& rng, std::size_t side, double f_max) {
  QuadraticSamplerConfig cfg;
  cfg.side = side;
  cfg.f_max = f_max;
  return sample_quadratic_patch(rng, cfg);
}

}  // namespace curvemrf
