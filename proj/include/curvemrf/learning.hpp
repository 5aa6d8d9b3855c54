#pragma once

// Pattern-bank learning: orientation/curvature binned initialization, the
// alternating assign/refit loop on local patches, and recalibration of the
// bank against total costs of whole shapes.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "core.hpp"
#include "lp.hpp"
#include "parallel.hpp"
#include "shapes.hpp"

namespace curvemrf {

struct TrainingConfig {
  std::size_t n_samples = 2000;
  std::size_t n_test_samples = 2000;
  std::size_t n_orientations = 8;
  std::size_t n_curvature_bins = 3;
  std::size_t side = 6;
  double f_max = kDefaultFMax;
  std::size_t max_iterations = 10;
  std::uint64_t seed = 1;
  double curvature_power = 1.0;

  std::size_t n_learned() const { return n_orientations * n_curvature_bins; }
};

struct ErrorTrace {
  std::vector<double> training_error;
  std::vector<double> test_error;
};

/// Independent stream for the held-out set.
inline std::uint64_t test_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

inline std::vector<TrainingSample> generate_samples(const TrainingConfig& cfg, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  QuadraticSamplerConfig qc;
  qc.side = cfg.side;
  qc.f_max = cfg.f_max;
  qc.curvature_power = cfg.curvature_power;
  std::vector<TrainingSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_quadratic_patch(rng, qc));
  return out;
}

// ---------------------------------------------------------------------------
// pointwise fitting

inline std::vector<lp::L1FitRow> fit_rows(const std::vector<const TrainingSample*>& cluster) {
  std::vector<lp::L1FitRow> rows;
  rows.reserve(cluster.size());
  for (const TrainingSample* s : cluster) {
    lp::L1FitRow r;
    r.features.assign(s->patch.begin(), s->patch.end());
    r.target = s->target_cost;
    rows.push_back(std::move(r));
  }
  return rows;
}

struct RefitResult {
  Pattern pattern;
  double objective = 0.0;
};

/// L1-optimal (w, c) over the cluster subject to <w, x> + c >= 0 for all binary x.
inline RefitResult refit_pattern_with_objective(const std::vector<const TrainingSample*>& cluster, std::size_t side) {
  if (cluster.empty()) throw std::invalid_argument("refit_pattern: empty cluster");
  lp::L1FitLayout lay;
  const auto rows = fit_rows(cluster);
  const auto sol = lp::solve(lp::l1_fit_program(rows, {true}, &lay));
  if (sol.status != lp::Status::optimal)
    throw numerical_failure(std::string("refit_pattern: LP ") + lp::to_string(sol.status));
  std::vector<double> w(sol.values.begin(), sol.values.begin() + static_cast<std::ptrdiff_t>(side * side));
  double c = sol.values[lay.constant];
  double neg = c;
  for (double v : w) neg += std::min(v, 0.0);
  if (neg < 0) c -= neg;  // remove solver round-off so the invariant holds exactly
  return {Pattern(side, std::move(w), c), sol.objective_value};
}

inline Pattern refit_pattern(const std::vector<const TrainingSample*>& cluster, std::size_t side) {
  return refit_pattern_with_objective(cluster, side).pattern;
}

inline Pattern refit_pattern(const std::vector<TrainingSample>& cluster, std::size_t side) {
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : cluster) ptrs.push_back(&s);
  return refit_pattern(ptrs, side);
}

inline std::size_t orientation_bin(double tangent_angle, std::size_t n) {
  const double width = 2.0 * std::numbers::pi / static_cast<double>(n);
  return std::min(n - 1, static_cast<std::size_t>(wrap_angle(tangent_angle) / width));
}

/// Interior bin edges at empirical quantiles of |kappa|.
inline std::vector<double> curvature_bin_edges(const std::vector<TrainingSample>& samples, std::size_t n_bins) {
  std::vector<double> mags;
  mags.reserve(samples.size());
  for (const auto& s : samples) mags.push_back(std::abs(s.kappa));
  std::sort(mags.begin(), mags.end());
  std::vector<double> edges;
  for (std::size_t k = 1; k < n_bins; ++k) edges.push_back(mags[k * mags.size() / n_bins]);
  return edges;
}

inline std::size_t curvature_bin(double kappa, const std::vector<double>& edges) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), std::abs(kappa)) - edges.begin());
}

inline PatternBank init_bank(const std::vector<TrainingSample>& samples, const TrainingConfig& cfg) {
  if (cfg.n_orientations == 0 || cfg.n_curvature_bins == 0)
    throw std::invalid_argument("init_bank: bin counts must be positive");
  if (samples.empty()) throw training_data_failure("init_bank: no samples");
  const auto edges = curvature_bin_edges(samples, cfg.n_curvature_bins);
  std::vector<std::vector<const TrainingSample*>> bins(cfg.n_learned());
  for (const auto& s : samples) {
    if (s.patch.size() != cfg.side * cfg.side) throw std::invalid_argument("init_bank: sample side mismatch");
    const std::size_t b = orientation_bin(s.tangent_angle, cfg.n_orientations) * cfg.n_curvature_bins +
                          curvature_bin(s.kappa, edges);
    bins[b].push_back(&s);
  }
  for (std::size_t b = 0; b < bins.size(); ++b)
    if (bins[b].empty())
      throw training_data_failure("init_bank: empty bin " + std::to_string(b) + "; draw more samples");
  std::vector<Pattern> learned(bins.size());
  parallel_for(bins.size(), [&](std::size_t b) { learned[b] = refit_pattern(bins[b], cfg.side); });
  return make_bank(cfg.side, cfg.f_max, std::move(learned));
}

inline std::vector<std::size_t> assign_patterns(const PatternBank& bank, const std::vector<TrainingSample>& samples) {
  if (bank.empty()) throw std::invalid_argument("assign_patterns: empty bank");
  std::vector<std::size_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = higher_order_cost(bank, samples[i].patch).index;
  return out;
}

inline double evaluate_pointwise(const PatternBank& bank, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : samples) s += std::abs(higher_order_cost(bank, t.patch).cost - t.target_cost);
  return s / static_cast<double>(samples.size());
}

struct Alg1Result {
  PatternBank bank;
  ErrorTrace trace;
  std::size_t iterations = 0;
  bool reached_fixpoint = false;
};

/// Alternates assignment and per-cluster refitting. Refits are accepted
/// jointly when they do not raise the training error, otherwise one pattern at
/// a time in index order; the loop ends at an assignment fixpoint, when no
/// refit is accepted, or after max_iterations.
inline Alg1Result train_alg1(PatternBank bank, const std::vector<TrainingSample>& train,
                             const std::vector<TrainingSample>& test, std::size_t max_iterations,
                             bool guard = true) {
  Alg1Result res;
  double err = evaluate_pointwise(bank, train);
  res.trace.training_error.push_back(err);
  res.trace.test_error.push_back(evaluate_pointwise(bank, test));
  std::optional<std::vector<std::size_t>> previous;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    auto assignment = assign_patterns(bank, train);
    if (previous && *previous == assignment) {
      res.reached_fixpoint = true;
      break;
    }
    std::vector<std::vector<const TrainingSample*>> clusters(bank.size());
    for (std::size_t i = 0; i < train.size(); ++i) clusters[assignment[i]].push_back(&train[i]);
    std::vector<std::optional<Pattern>> refit(bank.size());
    parallel_for(bank.size(), [&](std::size_t y) {
      if (bank.is_special(y) || clusters[y].empty()) return;
      refit[y] = refit_pattern(clusters[y], bank.side);
    });
    PatternBank joint = bank;
    for (std::size_t y = 0; y < bank.size(); ++y)
      if (refit[y]) joint.patterns[y] = *refit[y];
    double joint_err = evaluate_pointwise(joint, train);
    bool accepted = false;
    if (!guard || joint_err <= err) {
      accepted = joint != bank;
      bank = std::move(joint);
      err = joint_err;
    } else {
      for (std::size_t y = 0; y < bank.size(); ++y) {
        if (!refit[y] || *refit[y] == bank.patterns[y]) continue;
        PatternBank trial = bank;
        trial.patterns[y] = *refit[y];
        const double e = evaluate_pointwise(trial, train);
        if (e <= err) {
          bank = std::move(trial);
          err = e;
          accepted = true;
        }
      }
    }
    previous = std::move(assignment);
    ++res.iterations;
    res.trace.training_error.push_back(err);
    res.trace.test_error.push_back(evaluate_pointwise(bank, test));
    if (!accepted) break;
  }
  res.bank = std::move(bank);
  return res;
}

inline Alg1Result train_alg1(const std::vector<TrainingSample>& train, const std::vector<TrainingSample>& test,
                             const TrainingConfig& cfg) {
  return train_alg1(init_bank(train, cfg), train, test, cfg.max_iterations);
}

// ---------------------------------------------------------------------------
// whole-shape totals

/// Pads by `side` background pixels on every border so that each 2x2 boundary
/// location is the center of some window.
inline BinaryLabeling pad_labeling(const BinaryLabeling& x, std::size_t pad) {
  BinaryLabeling out(x.width() + 2 * pad, x.height() + 2 * pad);
  for (std::size_t r = 0; r < x.height(); ++r)
    for (std::size_t c = 0; c < x.width(); ++c) out.set(r + pad, c + pad, x.at(r, c));
  return out;
}

inline bool bank_is_nonnegative(const PatternBank& bank) {
  for (const auto& p : bank.patterns)
    if (p.envelope_minimum() < 0) return false;
  return true;
}

/// Windows of the padded labeling that can have non-zero cost. With a
/// non-negative bank, a window whose special pattern vanishes is exactly zero
/// and is skipped.
inline std::vector<Patch> costly_windows(const PatternBank& bank, const BinaryLabeling& x) {
  const BinaryLabeling padded = pad_labeling(x, bank.side);
  const bool skip = bank_is_nonnegative(bank);
  std::vector<Patch> out;
  for (const Anchor& h : window_locations(padded.dims(), bank.side)) {
    if (skip && !is_boundary_location(padded, h, bank.side)) {
      const std::size_t o = center_offset(bank.side);
      const std::size_t y = padded.at(h.row + o, h.col + o) ? bank.fg_index : bank.bg_index;
      const Patch p = extract_patch(padded, h, bank.side);
      if (pattern_cost(bank.patterns[y], p) == 0.0) continue;
      out.push_back(p);
      continue;
    }
    out.push_back(extract_patch(padded, h, bank.side));
  }
  return out;
}

/// Sum of E_h over every window of the padded labeling.
inline double model_total_cost(const PatternBank& bank, const BinaryLabeling& x) {
  double s = 0.0;
  for (const auto& p : costly_windows(bank, x)) s += higher_order_cost(bank, p).cost;
  return s;
}

/// Signed error per unit of true length.
inline double relative_error(double model_total, double true_total, double true_length) {
  return (model_total - true_total) / true_length;
}

struct Alg2Options {
  bool refit_weights = false;
  std::size_t max_iterations = 10;
};

struct Alg2Result {
  PatternBank bank;
  std::vector<double> objective;  // sum_i |model total - t_i|, per iteration
  std::size_t iterations = 0;
};

inline double total_cost_objective(const PatternBank& bank, const std::vector<std::vector<Patch>>& windows,
                                   const std::vector<double>& totals) {
  double s = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    double m = 0.0;
    for (const auto& p : windows[i]) m += higher_order_cost(bank, p).cost;
    s += std::abs(m - totals[i]);
  }
  return s;
}

namespace detail {

/// One joint L1 fit of the non-special patterns given the per-window assignment.
inline PatternBank alg2_refit(const PatternBank& bank, const std::vector<std::vector<Patch>>& windows,
                              const std::vector<std::vector<std::size_t>>& assign, const std::vector<double>& totals,
                              bool refit_weights) {
  const std::size_t n_img = windows.size(), np = bank.size(), d = bank.side * bank.side;
  std::vector<std::size_t> free_patterns;
  for (std::size_t y = 0; y < np; ++y)
    if (!bank.is_special(y)) free_patterns.push_back(y);
  std::vector<std::size_t> slot(np, SIZE_MAX);
  for (std::size_t k = 0; k < free_patterns.size(); ++k) slot[free_patterns[k]] = k;

  lp::LinearProgram prog;
  // constants (and optionally weights and xi) per free pattern
  std::vector<std::size_t> c_var(free_patterns.size()), w_var(free_patterns.size()), xi_var(free_patterns.size());
  for (std::size_t k = 0; k < free_patterns.size(); ++k) {
    const Pattern& p = bank.patterns[free_patterns[k]];
    if (refit_weights) {
      w_var[k] = prog.num_vars();
      for (std::size_t v = 0; v < d; ++v) prog.add_variable(0.0, -lp::kInf, lp::kInf);
      xi_var[k] = prog.num_vars();
      for (std::size_t v = 0; v < d; ++v) prog.add_variable(0.0, -lp::kInf, 0.0);
      c_var[k] = prog.add_variable(0.0, -lp::kInf, lp::kInf);
    } else {
      double neg = 0.0;
      for (double w : p.weights) neg += std::min(w, 0.0);
      c_var[k] = prog.add_variable(0.0, -neg, lp::kInf);
    }
  }
  const std::size_t res_begin = prog.num_vars();
  for (std::size_t i = 0; i < n_img; ++i) {
    prog.add_variable(1.0);
    prog.add_variable(1.0);
  }
  for (std::size_t i = 0; i < n_img; ++i) {
    double fixed = 0.0;
    std::vector<double> count(free_patterns.size(), 0.0);
    std::vector<std::vector<double>> feat(refit_weights ? free_patterns.size() : 0, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < windows[i].size(); ++h) {
      const std::size_t y = assign[i][h];
      const Patch& x = windows[i][h];
      if (slot[y] == SIZE_MAX) {
        fixed += pattern_cost(bank.patterns[y], x);
        continue;
      }
      const std::size_t k = slot[y];
      count[k] += 1.0;
      if (refit_weights) {
        for (std::size_t v = 0; v < d; ++v) feat[k][v] += x[v];
      } else {
        fixed += pattern_cost(bank.patterns[y], x) - bank.patterns[y].constant;
      }
    }
    std::vector<lp::Term> terms;
    for (std::size_t k = 0; k < free_patterns.size(); ++k) {
      if (count[k] != 0.0) terms.push_back({c_var[k], count[k]});
      if (refit_weights)
        for (std::size_t v = 0; v < d; ++v)
          if (feat[k][v] != 0.0) terms.push_back({w_var[k] + v, feat[k][v]});
    }
    terms.push_back({res_begin + 2 * i, 1.0});
    terms.push_back({res_begin + 2 * i + 1, -1.0});
    prog.add_constraint(std::move(terms), lp::Relation::equal, totals[i] - fixed);
  }
  if (refit_weights) {
    for (std::size_t k = 0; k < free_patterns.size(); ++k) {
      for (std::size_t v = 0; v < d; ++v)
        prog.add_constraint({{xi_var[k] + v, 1.0}, {w_var[k] + v, -1.0}}, lp::Relation::less_equal, 0.0);
      std::vector<lp::Term> t;
      for (std::size_t v = 0; v < d; ++v) t.push_back({xi_var[k] + v, 1.0});
      t.push_back({c_var[k], 1.0});
      prog.add_constraint(std::move(t), lp::Relation::greater_equal, 0.0);
    }
  }
  const auto sol = lp::solve(prog);
  if (sol.status != lp::Status::optimal)
    throw numerical_failure(std::string("train_alg2: LP ") + lp::to_string(sol.status));
  PatternBank out = bank;
  for (std::size_t k = 0; k < free_patterns.size(); ++k) {
    Pattern& p = out.patterns[free_patterns[k]];
    if (refit_weights)
      for (std::size_t v = 0; v < d; ++v) p.weights[v] = sol.values[w_var[k] + v];
    p.constant = sol.values[c_var[k]];
    const double neg = p.envelope_minimum();
    if (neg < 0) p.constant -= neg;
  }
  return out;
}

}  // namespace detail

/// Recalibrates the bank so that summed window costs match the true totals of
/// whole shapes. Special patterns stay fixed; by default only constants move.
/// A refit that would raise the objective ends the loop with the previous bank.
inline Alg2Result train_alg2(const std::vector<BinaryLabeling>& labelings, const std::vector<double>& totals,
                             PatternBank bank, const Alg2Options& opt = {}) {
  if (labelings.size() != totals.size()) throw std::invalid_argument("train_alg2: size mismatch");
  if (labelings.empty()) throw std::invalid_argument("train_alg2: no shapes");
  std::vector<std::vector<Patch>> windows(labelings.size());
  // Skipped windows stay at zero cost: refits keep the special patterns and non-negativity.
  parallel_for(labelings.size(), [&](std::size_t i) { windows[i] = costly_windows(bank, labelings[i]); });
  Alg2Result res;
  double obj = total_cost_objective(bank, windows, totals);
  res.objective.push_back(obj);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    std::vector<std::vector<std::size_t>> assign(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
      assign[i].reserve(windows[i].size());
      for (const auto& p : windows[i]) assign[i].push_back(higher_order_cost(bank, p).index);
    });
    PatternBank next = detail::alg2_refit(bank, windows, assign, totals, opt.refit_weights);
    const double next_obj = total_cost_objective(next, windows, totals);
    if (next_obj > obj || next == bank) break;
    const bool progress = next_obj < obj - 1e-12 * std::max(1.0, obj);
    bank = std::move(next);
    obj = next_obj;
    res.objective.push_back(obj);
    ++res.iterations;
    if (!progress) break;
  }
  res.bank = std::move(bank);
  return res;
}

// ---------------------------------------------------------------------------
// approximation quality on whole shapes

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson_correlation: need two equal series");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

struct ApproxRow {
  double true_cost = 0.0;
  double model_cost = 0.0;
  double true_length = 0.0;
  double relative_error = 0.0;
};

struct ApproxSummary {
  std::vector<ApproxRow> rows;
  double correlation_total = 0.0;
  double correlation_per_length = 0.0;
  double mean_signed_error = 0.0;
  double mean_abs_error = 0.0;
};

inline ApproxSummary evaluate_approximation(const PatternBank& bank, const std::vector<ShapeSample>& shapes) {
  ApproxSummary s;
  s.rows.resize(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t i) {
    const auto& sh = shapes[i];
    auto& r = s.rows[i];
    r.true_cost = sh.true_total_cost;
    r.true_length = sh.true_length;
    r.model_cost = model_total_cost(bank, sh.labeling);
    r.relative_error = relative_error(r.model_cost, r.true_cost, r.true_length);
  });
  std::vector<double> t, m, tl, ml;
  for (const auto& r : s.rows) {
    t.push_back(r.true_cost);
    m.push_back(r.model_cost);
    tl.push_back(r.true_cost / r.true_length);
    ml.push_back(r.model_cost / r.true_length);
    s.mean_signed_error += r.relative_error / static_cast<double>(s.rows.size());
    s.mean_abs_error += std::abs(r.relative_error) / static_cast<double>(s.rows.size());
  }
  if (s.rows.size() >= 2) {
    s.correlation_total = pearson_correlation(t, m);
    s.correlation_per_length = pearson_correlation(tl, ml);
  }
  return s;
}

/// n shapes of one class, drawn sequentially from one seeded stream.
inline std::vector<ShapeSample> sample_shapes(const std::string& kind, std::size_t n, Dims dims, double f_max,
                                              std::uint64_t seed) {
  if (kind != "circles" && kind != "fourier") throw std::invalid_argument("sample_shapes: unknown shape class " + kind);
  Rng rng(seed);
  std::vector<ContinuousShape> shapes;
  for (std::size_t i = 0; i < n; ++i) {
    if (kind == "circles") {
      shapes.emplace_back(make_random_circle(rng, dims));
    } else {
      shapes.emplace_back(make_fourier_shape(rng, dims));
    }
  }
  std::vector<ShapeSample> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = make_shape_sample(shapes[i], dims, f_max); });
  return out;
}

}  // namespace curvemrf
