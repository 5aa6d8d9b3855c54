#pragma once

// Problem constructors: constrained inpainting, color-model segmentation,
// the shared inference pipeline, and a 16-connected shortest-path curvature
// baseline.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <vector>

#include "core.hpp"
#include "inference.hpp"

namespace curvemrf {

// ---------------------------------------------------------------------------
// seeds and inpainting

enum class SeedTag : std::uint8_t { free, foreground, background };

struct SeedMask {
  Dims dims;
  std::vector<SeedTag> tags;

  SeedMask() = default;
  explicit SeedMask(Dims d) : dims(d), tags(d.size(), SeedTag::free) {}
  SeedTag at(std::size_t r, std::size_t c) const { return tags[r * dims.width + c]; }
  void set(std::size_t r, std::size_t c, SeedTag t) { tags[r * dims.width + c] = t; }
  std::size_t count(SeedTag t) const { return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), t)); }
};

inline std::vector<UnaryTable> inpainting_unaries(const SeedMask& mask, double big = kBig) {
  std::vector<UnaryTable> u(mask.dims.size(), {0.0, 0.0});
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (mask.tags[i] == SeedTag::foreground) u[i] = {big, 0.0};
    if (mask.tags[i] == SeedTag::background) u[i] = {0.0, big};
  }
  return u;
}

inline bool satisfies_seeds(const BinaryLabeling& x, const SeedMask& mask) {
  if (x.dims() != mask.dims) return false;
  for (std::size_t i = 0; i < mask.tags.size(); ++i) {
    if (mask.tags[i] == SeedTag::foreground && x[i] != 1) return false;
    if (mask.tags[i] == SeedTag::background && x[i] != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Gaussian mixtures

using Color = std::array<double, 3>;

struct GaussianComponent {
  double weight = 1.0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
};

struct GaussianMixture {
  std::vector<GaussianComponent> components;
  double epsilon = 0.0;                // covariance floor
  std::vector<double> log_likelihood;  // after initialization and every EM step

  double log_density(const Color& c) const {
    const Eigen::Vector3d x(c[0], c[1], c[2]);
    std::vector<double> t(components.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < components.size(); ++k) {
      t[k] = std::log(components[k].weight) + log_gaussian(components[k], x);
      mx = std::max(mx, t[k]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < components.size(); ++k) s += std::exp(t[k] - mx);
    return mx + std::log(s);
  }

  static double log_gaussian(const GaussianComponent& g, const Eigen::Vector3d& x) {
    Eigen::LLT<Eigen::Matrix3d> llt(g.covariance);
    const Eigen::Vector3d z = llt.matrixL().solve(x - g.mean);
    const Eigen::Matrix3d L = llt.matrixL();
    const double logdet = 2.0 * (std::log(L(0, 0)) + std::log(L(1, 1)) + std::log(L(2, 2)));
    return -0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
  }
};

struct GmmOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;  // relative change of the log-likelihood
};

namespace detail {

inline double total_log_likelihood(const GaussianMixture& g, std::span<const Color> xs) {
  double s = 0.0;
  for (const auto& c : xs) s += g.log_density(c);
  return s;
}

}  // namespace detail

/// EM from a k-means++ start. A covariance update that would lower the
/// expected complete-data log-likelihood is skipped, which keeps the
/// likelihood trace non-decreasing even with the eps*I floor.
inline GaussianMixture fit_gmm(std::span<const Color> xs, std::size_t k, std::uint64_t seed,
                               const GmmOptions& opt = {}) {
  if (k == 0) throw std::invalid_argument("fit_gmm: k must be positive");
  if (k > xs.size()) throw std::invalid_argument("fit_gmm: fewer samples than components");
  const std::size_t n = xs.size();
  std::vector<Eigen::Vector3d> X(n);
  for (std::size_t i = 0; i < n; ++i) X[i] = Eigen::Vector3d(xs[i][0], xs[i][1], xs[i][2]);
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();
  for (const auto& x : X) mu += x;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& x : X) var += (x - mu).squaredNorm();
  var /= 3.0 * static_cast<double>(n);
  GaussianMixture g;
  // spreads below 1e-6 (finer than 8-bit quantization) count as degenerate
  g.epsilon = 1e-6 * std::max(var, 1e-6);
  const Eigen::Matrix3d floor = g.epsilon * Eigen::Matrix3d::Identity();

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Vector3d> centers;
  centers.push_back(X[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (X[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    std::size_t pick;
    if (total > 0) {
      pick = std::discrete_distribution<std::size_t>(d2.begin(), d2.end())(rng);
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.push_back(X[pick]);
  }
  // hard assignment to the nearest center gives the starting mixture
  std::vector<std::vector<double>> resp(k, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if ((X[i] - centers[c]).squaredNorm() < (X[i] - centers[best]).squaredNorm()) best = c;
    resp[best][i] = 1.0;
  }
  g.components.resize(k);
  auto m_step = [&](bool guard) {
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      Eigen::Vector3d m = Eigen::Vector3d::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[c][i];
        m += resp[c][i] * X[i];
      }
      auto& comp = g.components[c];
      if (nk <= 0.0) {
        // an empty component keeps its parameters with negligible weight
        comp.weight = 1e-300;
        continue;
      }
      m /= nk;
      Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
      for (std::size_t i = 0; i < n; ++i) S += resp[c][i] * (X[i] - m) * (X[i] - m).transpose();
      comp.weight = nk / static_cast<double>(n);
      comp.mean = m;
      const Eigen::Matrix3d cand = S / nk + floor;
      if (guard) {
        auto q = [&](const Eigen::Matrix3d& sig) {
          Eigen::LLT<Eigen::Matrix3d> llt(sig);
          const Eigen::Matrix3d L = llt.matrixL();
          const double logdet = 2.0 * (std::log(L(0, 0)) + std::log(L(1, 1)) + std::log(L(2, 2)));
          return -0.5 * (nk * logdet + llt.solve(S).trace());
        };
        comp.covariance = q(cand) >= q(comp.covariance) ? cand : comp.covariance;
      } else {
        comp.covariance = cand;
      }
    }
    double wsum = 0.0;
    for (const auto& comp : g.components) wsum += comp.weight;
    for (auto& comp : g.components) comp.weight /= wsum;
  };
  m_step(false);
  g.log_likelihood.push_back(detail::total_log_likelihood(g, xs));

  std::vector<double> lp(k);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        lp[c] = std::log(g.components[c].weight) + GaussianMixture::log_gaussian(g.components[c], X[i]);
        mx = std::max(mx, lp[c]);
      }
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(lp[c] - mx);
      for (std::size_t c = 0; c < k; ++c) resp[c][i] = std::exp(lp[c] - mx) / s;
    }
    m_step(true);
    const double ll = detail::total_log_likelihood(g, xs);
    const double prev = g.log_likelihood.back();
    g.log_likelihood.push_back(ll);
    if (std::abs(ll - prev) <= opt.tolerance * std::max(1.0, std::abs(ll))) break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// segmentation

struct ColorImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Color> pixels;  // RGB in [0, 1]
  Dims dims() const { return {width, height}; }
};

/// theta_v(1) = -log p_fg(I_v), theta_v(0) = -log p_bg(I_v), divided by
/// lambda when lambda > 0; seed pixels are hard-constrained.
inline std::vector<UnaryTable> segmentation_unaries(const ColorImage& img, const GaussianMixture& fg,
                                                    const GaussianMixture& bg, double lambda,
                                                    const SeedMask* seeds = nullptr) {
  if (!(lambda >= 0)) throw std::invalid_argument("segmentation_unaries: lambda must be non-negative");
  if (seeds && seeds->dims != img.dims()) throw std::invalid_argument("segmentation_unaries: seed dims mismatch");
  const double scale = lambda > 0 ? 1.0 / lambda : 1.0;
  std::vector<UnaryTable> u(img.pixels.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = {-bg.log_density(img.pixels[i]) * scale, -fg.log_density(img.pixels[i]) * scale};
  if (seeds) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (seeds->tags[i] == SeedTag::foreground) u[i] = {kBig, 0.0};
      if (seeds->tags[i] == SeedTag::background) u[i] = {0.0, kBig};
    }
  }
  return u;
}

struct StrokeColors {
  std::vector<Color> foreground;
  std::vector<Color> background;
};

inline StrokeColors stroke_colors(const ColorImage& img, const SeedMask& seeds) {
  if (seeds.dims != img.dims()) throw std::invalid_argument("stroke_colors: seed dims mismatch");
  StrokeColors s;
  for (std::size_t i = 0; i < seeds.tags.size(); ++i) {
    if (seeds.tags[i] == SeedTag::foreground) s.foreground.push_back(img.pixels[i]);
    if (seeds.tags[i] == SeedTag::background) s.background.push_back(img.pixels[i]);
  }
  if (s.foreground.empty() || s.background.empty())
    throw std::invalid_argument("stroke_colors: strokes must mark foreground and background pixels");
  return s;
}

// ---------------------------------------------------------------------------
// inference pipeline: TRW-S (or BP) -> rounding -> Block-ICM [-> restricted LP]

struct InferenceSettings {
  std::size_t passes = 300;
  Ordering ordering = Ordering::short_chains;
  GammaRule gamma = GammaRule::trws;
  std::size_t icm_block = 6;  // 0 disables Block-ICM
  std::size_t rounding_levels = 5;  // extra roundings, each polished by Block-ICM; lowest energy wins
  bool restricted_lp = false;
  std::optional<double> lp_threshold;  // default: 1e-6 * min-marginal range below kBig / 2
  std::size_t lp_max_variables = 20000;
};

struct PipelineResult {
  BinaryLabeling labeling;
  double energy = 0.0;
  double rounded_energy = 0.0;
  std::vector<double> lower_bound_trace;
  MinMarginals min_marginals;
  std::size_t passes = 0;
  bool cancelled = false;
  // restricted LP refinement
  std::optional<double> lp_bound;
  std::optional<double> lp_energy;
  std::string lp_note;
};

inline PipelineResult run_pipeline(const EnergyModel& m, const InferenceSettings& s,
                                   std::function<bool(std::size_t, double)> on_pass = {}) {
  PipelineResult r;
  const auto pm = build_pairwise_model(m);
  TrwsOptions opt;
  opt.passes = s.passes;
  opt.ordering = s.ordering;
  opt.gamma = s.gamma;
  opt.on_pass = [&](std::size_t pass, double lb) {
    if (on_pass && !on_pass(pass, lb)) {
      r.cancelled = true;
      return false;
    }
    return true;
  };
  auto tr = trws_run(pm, opt);
  r.lower_bound_trace = tr.state.lower_bound_trace;
  r.passes = tr.state.passes;
  r.min_marginals = std::move(tr.min_marginals);
  r.labeling = round_min_marginals(r.min_marginals);
  r.rounded_energy = total_energy(m, r.labeling);
  if (s.icm_block > 0 && !r.cancelled) r.labeling = block_icm(m, r.labeling, s.icm_block);
  r.energy = total_energy(m, r.labeling);
  if (!r.cancelled) {
    for (double level : rounding_levels(r.min_marginals, s.rounding_levels)) {
      auto x = round_min_marginals(r.min_marginals, level);
      if (s.icm_block > 0) x = block_icm(m, x, s.icm_block);
      const double e = total_energy(m, x);
      if (e < r.energy) {
        r.labeling = std::move(x);
        r.energy = e;
      }
    }
  }
  if (s.restricted_lp && !r.cancelled) {
    const double thr = s.lp_threshold.value_or(default_restriction_threshold(r.min_marginals));
    try {
      const auto rl = build_restricted_lp(pm, r.min_marginals, thr, s.lp_max_variables);
      const auto sol = lp::solve(rl.program);
      if (sol.status == lp::Status::optimal) {
        r.lp_bound = sol.objective_value + rl.offset;
        auto x = round_relaxed(m.dims, rl.pixel_values(sol));
        if (s.icm_block > 0) x = block_icm(m, x, s.icm_block);
        const double e = total_energy(m, x);
        r.lp_energy = e;
        if (e < r.energy) {
          r.labeling = std::move(x);
          r.energy = e;
        }
      } else {
        r.lp_note = "restricted LP status: " + std::string(lp::to_string(sol.status));
      }
    } catch (const std::length_error& e) {
      r.lp_note = e.what();
    } catch (const infeasible_restriction& e) {
      r.lp_note = e.what();
    }
  }
  return r;
}

/// theta_hat(0) - theta_hat(1) mapped to [0, 255] with the zero level at 128.
inline std::vector<std::uint8_t> min_marginal_map(const MinMarginals& mm) {
  std::vector<double> d(mm.pixels.size());
  double scale = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = min_marginal_tie(mm.pixels[i]) ? 0.0 : mm.pixels[i][0] - mm.pixels[i][1];
    if (std::abs(d[i]) < 0.5 * kBig) scale = std::max(scale, std::abs(d[i]));
  }
  if (scale <= 0) scale = 1.0;
  std::vector<std::uint8_t> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = std::clamp(128.0 + 127.0 * d[i] / scale, 0.0, 255.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// seeded segmentation

struct SegmentationOptions {
  double lambda = 1.0;  // 0 means no prior
  std::size_t components = 10;
  std::uint64_t seed = 1;
  InferenceSettings inference;
};

struct SegmentationResult {
  PipelineResult pipeline;
  GaussianMixture foreground;
  GaussianMixture background;
};

/// Fits both color models on the stroke pixels, then runs the pipeline on
/// the resulting unaries with the curvature prior (or alone when lambda = 0).
inline SegmentationResult segment_image(const ColorImage& img, const SeedMask& seeds, const PatternBank& bank,
                                        const SegmentationOptions& opt,
                                        std::function<bool(std::size_t, double)> on_pass = {}) {
  const auto strokes = stroke_colors(img, seeds);
  SegmentationResult r;
  r.foreground = fit_gmm(strokes.foreground, std::min(opt.components, strokes.foreground.size()), opt.seed);
  r.background = fit_gmm(strokes.background, std::min(opt.components, strokes.background.size()), opt.seed + 1);
  auto unaries = segmentation_unaries(img, r.foreground, r.background, opt.lambda, &seeds);
  if (opt.lambda == 0.0) {
    auto& p = r.pipeline;
    p.min_marginals.dims = img.dims();
    p.min_marginals.pixels = unaries;
    p.labeling = round_min_marginals(p.min_marginals);
    p.energy = p.rounded_energy = total_energy(make_energy_model(img.dims(), unaries, PatternBank{}), p.labeling);
    return r;
  }
  r.pipeline = run_pipeline(make_energy_model(img.dims(), std::move(unaries), bank), opt.inference, std::move(on_pass));
  return r;
}

// ---------------------------------------------------------------------------
// 16-connected curvature baseline

struct GridOffset {
  int dx;
  int dy;
  double length() const { return std::hypot(dx, dy); }
};

/// 8 axis/diagonal moves and 8 knight moves.
inline const std::array<GridOffset, 16>& baseline_offsets() {
  static const std::array<GridOffset, 16> offs{{{1, 0},
                                                {2, 1},
                                                {1, 1},
                                                {1, 2},
                                                {0, 1},
                                                {-1, 2},
                                                {-1, 1},
                                                {-2, 1},
                                                {-1, 0},
                                                {-2, -1},
                                                {-1, -1},
                                                {-1, -2},
                                                {0, -1},
                                                {1, -2},
                                                {1, -1},
                                                {2, -1}}};
  return offs;
}

inline std::optional<std::size_t> find_offset(int dx, int dy) {
  const auto& o = baseline_offsets();
  for (std::size_t i = 0; i < o.size(); ++i)
    if (o[i].dx == dx && o[i].dy == dy) return i;
  return std::nullopt;
}

/// A^2 (l1 + l2) / (l1 l2)
inline double baseline_transition_cost(double angle, double l1, double l2) {
  if (!(l1 > 0) || !(l2 > 0)) throw std::invalid_argument("baseline_transition_cost: lengths must be positive");
  return angle * angle * (l1 + l2) / (l1 * l2);
}

/// Angle in [0, pi] between two offsets.
inline double offset_angle(const GridOffset& a, const GridOffset& b) {
  const double cross = static_cast<double>(a.dx) * b.dy - static_cast<double>(a.dy) * b.dx;
  const double dot = static_cast<double>(a.dx) * b.dx + static_cast<double>(a.dy) * b.dy;
  return std::abs(std::atan2(cross, dot));
}

struct GridNode {
  int x = 0;
  int y = 0;
  bool operator==(const GridNode&) const = default;
};

struct DirectedEdgeGraph {
  int width = 0;  // nodes 0..width-1
  int height = 0;
  std::array<std::array<double, 16>, 16> transition{};  // [incoming][outgoing]

  DirectedEdgeGraph(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("DirectedEdgeGraph: empty grid");
    const auto& o = baseline_offsets();
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t b = 0; b < 16; ++b)
        transition[a][b] = baseline_transition_cost(offset_angle(o[a], o[b]), o[a].length(), o[b].length());
  }
  bool contains(GridNode n) const { return n.x >= 0 && n.y >= 0 && n.x < width && n.y < height; }
  std::size_t node_index(GridNode n) const {
    return static_cast<std::size_t>(n.y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(n.x);
  }
};

/// A path end; `offset` pins the first (start) or last (goal) edge element.
struct PathEnd {
  GridNode node;
  std::optional<std::size_t> offset;
};

struct BaselinePath {
  std::vector<GridNode> nodes;
  std::vector<std::size_t> offsets;  // edge elements in order
  double cost = 0.0;
};

inline double path_cost(const DirectedEdgeGraph& g, std::span<const std::size_t> offsets) {
  double c = 0.0;
  for (std::size_t i = 1; i < offsets.size(); ++i) c += g.transition[offsets[i - 1]][offsets[i]];
  return c;
}

/// Dijkstra over (node, incoming offset) states.
inline BaselinePath baseline_optimal_path(const DirectedEdgeGraph& g, PathEnd start, PathEnd goal) {
  if (start.node == goal.node) throw std::invalid_argument("baseline_optimal_path: start equals goal");
  if (!g.contains(start.node) || !g.contains(goal.node))
    throw std::invalid_argument("baseline_optimal_path: endpoint outside the grid");
  const auto& offs = baseline_offsets();
  const std::size_t n_states = static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height) * 16;
  std::vector<double> dist(n_states, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n_states, std::numeric_limits<std::size_t>::max());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  auto state = [&](GridNode n, std::size_t o) { return g.node_index(n) * 16 + o; };
  auto step = [&](GridNode n, std::size_t o) { return GridNode{n.x + offs[o].dx, n.y + offs[o].dy}; };
  for (std::size_t o = 0; o < 16; ++o) {
    if (start.offset && *start.offset != o) continue;
    const GridNode t = step(start.node, o);
    if (!g.contains(t)) continue;
    const std::size_t s = state(t, o);
    dist[s] = 0.0;
    pq.push({0.0, s});
  }
  std::optional<std::size_t> found;
  while (!pq.empty()) {
    const auto [d, s] = pq.top();
    pq.pop();
    if (d > dist[s]) continue;
    const std::size_t node = s / 16, in = s % 16;
    const GridNode here{static_cast<int>(node % static_cast<std::size_t>(g.width)),
                        static_cast<int>(node / static_cast<std::size_t>(g.width))};
    if (here == goal.node && (!goal.offset || *goal.offset == in)) {
      found = s;
      break;
    }
    for (std::size_t o = 0; o < 16; ++o) {
      const GridNode t = step(here, o);
      if (!g.contains(t)) continue;
      const std::size_t ns = state(t, o);
      const double nd = d + g.transition[in][o];
      if (nd < dist[ns]) {
        dist[ns] = nd;
        parent[ns] = s;
        pq.push({nd, ns});
      }
    }
  }
  if (!found) throw no_path("baseline_optimal_path: goal unreachable");
  BaselinePath p;
  p.cost = dist[*found];
  std::vector<std::size_t> chain;
  for (std::size_t s = *found; s != std::numeric_limits<std::size_t>::max(); s = parent[s]) chain.push_back(s);
  std::reverse(chain.begin(), chain.end());
  p.nodes.push_back(start.node);
  for (std::size_t s : chain) {
    const std::size_t node = s / 16;
    p.offsets.push_back(s % 16);
    p.nodes.push_back({static_cast<int>(node % static_cast<std::size_t>(g.width)),
                       static_cast<int>(node / static_cast<std::size_t>(g.width))});
  }
  return p;
}

/// Unit horizontal/vertical steps that stay closest to the straight segment.
inline std::vector<std::size_t> staircase_offsets(GridNode from, GridNode to) {
  const int dx = to.x - from.x, dy = to.y - from.y;
  const std::size_t hx = *find_offset(dx >= 0 ? 1 : -1, 0), vy = *find_offset(0, dy >= 0 ? 1 : -1);
  const int nx = std::abs(dx), ny = std::abs(dy);
  std::vector<std::size_t> out;
  int i = 0, j = 0;
  while (i < nx || j < ny) {
    // take the step whose end point lies closer to the line
    if (j >= ny || (i < nx && static_cast<long>(2 * i + 1) * ny <= static_cast<long>(2 * j + 1) * nx)) {
      out.push_back(hx);
      ++i;
    } else {
      out.push_back(vy);
      ++j;
    }
  }
  return out;
}

}  // namespace curvemrf
