#pragma once

// Domain types for binary labelings with lower-envelope ("soft pattern")
// higher-order terms: window geometry, pattern evaluation, total energy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace curvemrf {

// ---------------------------------------------------------------------------
// errors

class generation_failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numerical_failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class training_data_failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class infeasible_restriction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class no_path : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// constants

/// Finite stand-in for an infinite unary cost.
inline constexpr double kBig = 1e9;
inline constexpr double kDefaultFMax = 2.0;

/// Weight magnitude of the special foreground/background patterns.
inline double default_special_weight(double f_max) { return 10.0 * f_max; }

// ---------------------------------------------------------------------------
// grid geometry

struct Dims {
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t size() const { return width * height; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Top-left corner of a K x K window.
struct Anchor {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

using Label = std::uint8_t;
using Patch = std::vector<Label>;

class BinaryLabeling {
 public:
  BinaryLabeling() = default;
  BinaryLabeling(std::size_t width, std::size_t height, Label fill = 0)
      : dims_{width, height}, labels_(width * height, fill) {
    if (width == 0 || height == 0)
      throw std::invalid_argument("BinaryLabeling: empty grid");
    if (fill > 1) throw std::invalid_argument("BinaryLabeling: label must be 0 or 1");
  }
  BinaryLabeling(Dims dims, std::vector<Label> labels) : dims_(dims), labels_(std::move(labels)) {
    if (dims.width == 0 || dims.height == 0)
      throw std::invalid_argument("BinaryLabeling: empty grid");
    if (labels_.size() != dims.size())
      throw std::invalid_argument("BinaryLabeling: label count does not match dims");
    for (Label l : labels_)
      if (l > 1) throw std::invalid_argument("BinaryLabeling: label must be 0 or 1");
  }

  std::size_t width() const { return dims_.width; }
  std::size_t height() const { return dims_.height; }
  const Dims& dims() const { return dims_; }

  Label at(std::size_t row, std::size_t col) const { return labels_[row * dims_.width + col]; }
  void set(std::size_t row, std::size_t col, Label l) { labels_[row * dims_.width + col] = l ? 1 : 0; }
  Label operator[](std::size_t i) const { return labels_[i]; }
  void set(std::size_t i, Label l) { labels_[i] = l ? 1 : 0; }

  std::span<const Label> labels() const { return labels_; }
  std::size_t count_foreground() const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), Label{1}));
  }

  friend bool operator==(const BinaryLabeling&, const BinaryLabeling&) = default;

 private:
  Dims dims_;
  std::vector<Label> labels_;
};

/// Every K x K window fully inside the grid, row-major.
inline std::vector<Anchor> window_locations(Dims dims, std::size_t side) {
  if (side == 0) throw std::invalid_argument("window_locations: side must be positive");
  if (side > dims.width || side > dims.height)
    throw std::invalid_argument("window_locations: window larger than grid");
  std::vector<Anchor> out;
  out.reserve((dims.width - side + 1) * (dims.height - side + 1));
  for (std::size_t r = 0; r + side <= dims.height; ++r)
    for (std::size_t c = 0; c + side <= dims.width; ++c) out.push_back({r, c});
  return out;
}

/// Offset of the first row/col of the center 2x2 inside a K x K window.
inline std::size_t center_offset(std::size_t side) {
  if (side < 2) throw std::invalid_argument("center_offset: side must be at least 2");
  return side / 2 - 1;
}

inline Patch extract_patch(const BinaryLabeling& x, Anchor h, std::size_t side) {
  Patch p(side * side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) p[r * side + c] = x.at(h.row + r, h.col + c);
  return p;
}

inline bool center_is_mixed(std::span<const Label> patch, std::size_t side) {
  const std::size_t o = center_offset(side);
  const int sum = patch[o * side + o] + patch[o * side + o + 1] + patch[(o + 1) * side + o] +
                  patch[(o + 1) * side + o + 1];
  return sum != 0 && sum != 4;
}

/// True iff the center 2x2 of the window at h holds both labels.
inline bool is_boundary_location(const BinaryLabeling& x, Anchor h, std::size_t side) {
  if (h.row + side > x.height() || h.col + side > x.width())
    throw std::invalid_argument("is_boundary_location: window outside grid");
  const std::size_t r = h.row + center_offset(side), c = h.col + center_offset(side);
  const int sum = x.at(r, c) + x.at(r, c + 1) + x.at(r + 1, c) + x.at(r + 1, c + 1);
  return sum != 0 && sum != 4;
}

// ---------------------------------------------------------------------------
// patterns

struct Pattern {
  std::size_t side = 0;
  std::vector<double> weights;  // row-major, side*side
  double constant = 0.0;

  Pattern() = default;
  Pattern(std::size_t side_, std::vector<double> w, double c)
      : side(side_), weights(std::move(w)), constant(c) {
    if (weights.size() != side * side)
      throw std::invalid_argument("Pattern: weights must have side*side entries");
    for (double v : weights)
      if (!std::isfinite(v)) throw std::invalid_argument("Pattern: non-finite weight");
  }

  /// min over all binary patches of <w,x> + c.
  double envelope_minimum() const {
    double s = constant;
    for (double v : weights) s += std::min(v, 0.0);
    return s;
  }

  friend bool operator==(const Pattern&, const Pattern&) = default;
};

inline double pattern_cost(const Pattern& p, std::span<const Label> patch) {
  if (patch.size() != p.weights.size())
    throw std::invalid_argument("pattern_cost: patch size does not match pattern");
  double s = p.constant;
  for (std::size_t i = 0; i < patch.size(); ++i)
    if (patch[i]) s += p.weights[i];
  return s;
}

/// Weights -B where the template is 1 and +B where it is 0; exact cost on the
/// template, at least cost + B anywhere else.
inline Pattern convert_hard_pattern(std::span<const Label> tmpl, std::size_t side, double cost, double big) {
  if (!(big > 0)) throw std::invalid_argument("convert_hard_pattern: B must be positive");
  if (tmpl.size() != side * side) throw std::invalid_argument("convert_hard_pattern: template size");
  std::vector<double> w(tmpl.size());
  double ones = 0;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    w[i] = tmpl[i] ? -big : big;
    ones += tmpl[i] ? 1.0 : 0.0;
  }
  return Pattern(side, std::move(w), cost + big * ones);
}

inline Pattern make_cutoff_pattern(std::size_t side, double f_max) {
  return Pattern(side, std::vector<double>(side * side, 0.0), f_max);
}

/// Vanishes when the center 2x2 is all foreground; B per background pixel there.
inline Pattern make_foreground_pattern(std::size_t side, double big) {
  std::vector<double> w(side * side, 0.0);
  const std::size_t o = center_offset(side);
  for (std::size_t r = o; r < o + 2; ++r)
    for (std::size_t c = o; c < o + 2; ++c) w[r * side + c] = -big;
  return Pattern(side, std::move(w), 4.0 * big);
}

/// Vanishes when the center 2x2 is all background; B per foreground pixel there.
inline Pattern make_background_pattern(std::size_t side, double big) {
  std::vector<double> w(side * side, 0.0);
  const std::size_t o = center_offset(side);
  for (std::size_t r = o; r < o + 2; ++r)
    for (std::size_t c = o; c < o + 2; ++c) w[r * side + c] = big;
  return Pattern(side, std::move(w), 0.0);
}

struct PatternBank {
  std::size_t side = 0;
  double f_max = kDefaultFMax;
  std::vector<Pattern> patterns;
  std::size_t cutoff_index = 0;
  std::size_t fg_index = 1;
  std::size_t bg_index = 2;

  std::size_t size() const { return patterns.size(); }
  bool empty() const { return patterns.empty(); }
  bool is_special(std::size_t y) const { return y == cutoff_index || y == fg_index || y == bg_index; }

  friend bool operator==(const PatternBank&, const PatternBank&) = default;
};

/// Cutoff, foreground and background patterns at indices 0, 1, 2 followed by
/// the learned ones.
inline PatternBank make_bank(std::size_t side, double f_max, std::vector<Pattern> learned, double big) {
  PatternBank bank;
  bank.side = side;
  bank.f_max = f_max;
  bank.patterns.reserve(learned.size() + 3);
  bank.patterns.push_back(make_cutoff_pattern(side, f_max));
  bank.patterns.push_back(make_foreground_pattern(side, big));
  bank.patterns.push_back(make_background_pattern(side, big));
  for (auto& p : learned) {
    if (p.side != side) throw std::invalid_argument("make_bank: pattern side mismatch");
    bank.patterns.push_back(std::move(p));
  }
  return bank;
}

inline PatternBank make_bank(std::size_t side, double f_max, std::vector<Pattern> learned = {}) {
  return make_bank(side, f_max, std::move(learned), default_special_weight(f_max));
}

struct EnvelopeValue {
  double cost = 0.0;
  std::size_t index = 0;
};

/// Lower envelope over the bank; ties go to the lowest index.
inline EnvelopeValue higher_order_cost(const PatternBank& bank, std::span<const Label> patch) {
  if (bank.patterns.empty()) throw std::invalid_argument("higher_order_cost: empty bank");
  EnvelopeValue best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t y = 0; y < bank.patterns.size(); ++y) {
    const double v = pattern_cost(bank.patterns[y], patch);
    if (v < best.cost) best = {v, y};
  }
  return best;
}

// ---------------------------------------------------------------------------
// energy model

using UnaryTable = std::array<double, 2>;

/// table[2*x_u + x_v]
struct PairwiseTerm {
  std::size_t u = 0;
  std::size_t v = 0;
  std::array<double, 4> table{};
};

struct EnergyModel {
  Dims dims;
  std::vector<UnaryTable> unaries;
  std::vector<PairwiseTerm> pairwise;
  PatternBank bank;
  std::vector<Anchor> locations;

  bool has_higher_order() const { return !bank.empty() && !locations.empty(); }
};

inline EnergyModel make_energy_model(Dims dims, std::vector<UnaryTable> unaries, PatternBank bank,
                                     std::vector<PairwiseTerm> pairwise = {}) {
  if (unaries.size() != dims.size()) throw std::invalid_argument("make_energy_model: unary count mismatch");
  for (const auto& u : unaries)
    if (!std::isfinite(u[0]) || !std::isfinite(u[1]))
      throw std::invalid_argument("make_energy_model: non-finite unary (use kBig)");
  for (const auto& e : pairwise) {
    if (e.u >= dims.size() || e.v >= dims.size() || e.u == e.v)
      throw std::invalid_argument("make_energy_model: bad pairwise edge");
  }
  EnergyModel m;
  m.dims = dims;
  m.unaries = std::move(unaries);
  m.pairwise = std::move(pairwise);
  m.bank = std::move(bank);
  if (!m.bank.empty()) {
    for (const auto& p : m.bank.patterns)
      if (p.side != m.bank.side) throw std::invalid_argument("make_energy_model: inconsistent bank");
    if (m.bank.side <= dims.width && m.bank.side <= dims.height)
      m.locations = window_locations(dims, m.bank.side);
  }
  return m;
}

inline double higher_order_energy(const EnergyModel& m, const BinaryLabeling& x) {
  double e = 0.0;
  for (const Anchor& h : m.locations) e += higher_order_cost(m.bank, extract_patch(x, h, m.bank.side)).cost;
  return e;
}

inline double total_energy(const EnergyModel& m, const BinaryLabeling& x) {
  if (x.dims() != m.dims) throw std::invalid_argument("total_energy: dims mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < m.unaries.size(); ++i) e += m.unaries[i][x[i]];
  for (const auto& t : m.pairwise) e += t.table[2 * x[t.u] + x[t.v]];
  return e + higher_order_energy(m, x);
}

/// Potts-style length prior on the 4- or 8-neighborhood, weight/distance per cut edge.
inline std::vector<PairwiseTerm> length_prior_edges(Dims dims, double weight, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("length_prior_edges: connectivity must be 4 or 8");
  std::vector<PairwiseTerm> out;
  auto add = [&](std::size_t u, std::size_t v, double w) { out.push_back({u, v, {0.0, w, w, 0.0}}); };
  for (std::size_t r = 0; r < dims.height; ++r) {
    for (std::size_t c = 0; c < dims.width; ++c) {
      const std::size_t i = r * dims.width + c;
      if (c + 1 < dims.width) add(i, i + 1, weight);
      if (r + 1 < dims.height) add(i, i + dims.width, weight);
      if (connectivity == 8 && r + 1 < dims.height) {
        if (c + 1 < dims.width) add(i, i + dims.width + 1, weight / std::sqrt(2.0));
        if (c > 0) add(i, i + dims.width - 1, weight / std::sqrt(2.0));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmin

/// -(1/beta) log sum exp(-beta v_i); tends to min(values) as beta grows.
inline double softmin(std::span<const double> values, double beta) {
  if (values.empty()) throw std::invalid_argument("softmin: empty list");
  if (!(beta > 0)) throw std::invalid_argument("softmin: beta must be positive");
  const double m = *std::min_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(-beta * (v - m));
  return m - std::log(s) / beta;
}

}  // namespace curvemrf
