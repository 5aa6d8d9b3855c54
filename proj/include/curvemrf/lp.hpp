#pragma once

// Dense two-phase tableau simplex.
//
// Tolerances shared by every LP consumer in the library:
//   feasibility 1e-8, optimality (reduced cost) 1e-9, pivot magnitude 1e-10.
// Pivoting is Dantzig's rule; after 3 (m + n) iterations without objective
// progress the phase switches to Bland's rule for the rest of the phase.

#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace curvemrf::lp {

inline constexpr double kFeasibilityTol = 1e-8;
inline constexpr double kOptimalityTol = 1e-9;
inline constexpr double kPivotTol = 1e-10;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Relation { less_equal, greater_equal, equal };

struct Term {
  std::size_t var;
  double coeff;
};

struct Constraint {
  std::vector<Term> terms;
  Relation relation = Relation::less_equal;
  double rhs = 0.0;
};

/// minimize objective . x  s.t.  constraints, lower <= x <= upper.
struct LinearProgram {
  std::vector<double> objective;
  std::vector<Constraint> constraints;
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t num_vars() const { return objective.size(); }

  std::size_t add_variable(double cost, double lo = 0.0, double hi = kInf) {
    objective.push_back(cost);
    lower.push_back(lo);
    upper.push_back(hi);
    return objective.size() - 1;
  }

  void add_constraint(std::vector<Term> terms, Relation rel, double rhs) {
    constraints.push_back({std::move(terms), rel, rhs});
  }

  void add_dense_constraint(std::span<const double> coeffs, Relation rel, double rhs) {
    std::vector<Term> t;
    for (std::size_t j = 0; j < coeffs.size(); ++j)
      if (coeffs[j] != 0.0) t.push_back({j, coeffs[j]});
    add_constraint(std::move(t), rel, rhs);
  }
};

enum class Status { optimal, infeasible, unbounded };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::infeasible: return "infeasible";
    default: return "unbounded";
  }
}

struct Solution {
  Status status = Status::infeasible;
  std::vector<double> values;
  double objective_value = 0.0;
  /// One multiplier per constraint: >= 0 for >=, <= 0 for <=, free for =.
  std::vector<double> duals;
  std::size_t iterations = 0;
};

/// Largest violation of bounds or constraints at x.
inline double primal_residual(const LinearProgram& p, std::span<const double> x) {
  double worst = 0.0;
  for (std::size_t j = 0; j < p.num_vars(); ++j) {
    worst = std::max(worst, p.lower[j] - x[j]);
    worst = std::max(worst, x[j] - p.upper[j]);
  }
  for (const auto& c : p.constraints) {
    double s = 0.0;
    for (const auto& t : c.terms) s += t.coeff * x[t.var];
    const double d = s - c.rhs;
    if (c.relation == Relation::less_equal) worst = std::max(worst, d);
    else if (c.relation == Relation::greater_equal) worst = std::max(worst, -d);
    else worst = std::max(worst, std::abs(d));
  }
  return worst;
}

/// Lagrangian dual value b.y + sum_j (z_j > 0 ? l_j z_j : u_j z_j), z = c - A^T y;
/// reduced costs within the optimality tolerance count as zero.
inline double dual_objective(const LinearProgram& p, std::span<const double> y) {
  std::vector<double> z = p.objective;
  double v = 0.0;
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    v += p.constraints[i].rhs * y[i];
    for (const auto& t : p.constraints[i].terms) z[t.var] -= t.coeff * y[i];
  }
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (std::abs(z[j]) <= kOptimalityTol * std::max(1.0, std::abs(p.objective[j]))) continue;
    if (z[j] > 0) v += std::isfinite(p.lower[j]) ? p.lower[j] * z[j] : -kInf;
    else if (z[j] < 0) v += std::isfinite(p.upper[j]) ? p.upper[j] * z[j] : -kInf;
  }
  return v;
}

namespace detail {

struct VarMap {
  std::size_t pos = 0;                                     // column of x' (or x+)
  std::size_t neg = std::numeric_limits<std::size_t>::max();  // column of x- for free vars
  double sign = 1.0;                                       // x = offset + sign * x'
  double offset = 0.0;
};

class Tableau {
 public:
  Tableau(std::size_t rows, std::size_t cols) : m_(rows), n_(cols), w_(cols + 1), t_(rows * (cols + 1), 0.0) {}

  double& at(std::size_t i, std::size_t j) { return t_[i * w_ + j]; }
  double at(std::size_t i, std::size_t j) const { return t_[i * w_ + j]; }
  double& rhs(std::size_t i) { return t_[i * w_ + n_]; }
  double rhs(std::size_t i) const { return t_[i * w_ + n_]; }
  std::size_t rows() const { return m_; }
  std::size_t cols() const { return n_; }

  /// Pivot on (r, s), also eliminating column s from the cost row `cost`
  /// (length cols + 1, last entry holds -objective).
  void pivot(std::size_t r, std::size_t s, std::vector<double>& cost) {
    double* pr = &t_[r * w_];
    const double inv = 1.0 / pr[s];
    nz_.clear();
    for (std::size_t j = 0; j <= n_; ++j) {
      if (pr[j] != 0.0) {
        pr[j] *= inv;
        nz_.push_back(j);
      }
    }
    pr[s] = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      double* pi = &t_[i * w_];
      const double f = pi[s];
      if (f == 0.0) continue;
      for (std::size_t j : nz_) pi[j] -= f * pr[j];
      pi[s] = 0.0;
    }
    const double f = cost[s];
    if (f != 0.0) {
      for (std::size_t j : nz_) cost[j] -= f * pr[j];
      cost[s] = 0.0;
    }
  }

 private:
  std::size_t m_, n_, w_;
  std::vector<double> t_;
  std::vector<std::size_t> nz_;
};

}  // namespace detail

/// Two-phase simplex. Throws numerical_failure when the iteration cap is hit.
inline Solution solve(const LinearProgram& p) {
  const std::size_t nv = p.num_vars();
  if (p.lower.size() != nv || p.upper.size() != nv)
    throw std::invalid_argument("lp::solve: bounds size mismatch");
  for (const auto& c : p.constraints)
    for (const auto& t : c.terms)
      if (t.var >= nv) throw std::invalid_argument("lp::solve: constraint references unknown variable");

  // --- standard form: x' >= 0
  std::vector<detail::VarMap> vmap(nv);
  std::vector<double> cstd;
  struct BoundRow {
    std::size_t col;
    double ub;
  };
  std::vector<BoundRow> bound_rows;
  double const_obj = 0.0;
  for (std::size_t j = 0; j < nv; ++j) {
    const double lo = p.lower[j], hi = p.upper[j];
    if (lo > hi) {
      Solution s;
      s.status = Status::infeasible;
      return s;
    }
    auto& vm = vmap[j];
    if (std::isfinite(lo)) {
      vm = {cstd.size(), vm.neg, 1.0, lo};
      cstd.push_back(p.objective[j]);
      if (std::isfinite(hi)) bound_rows.push_back({vm.pos, hi - lo});
    } else if (std::isfinite(hi)) {
      vm = {cstd.size(), vm.neg, -1.0, hi};
      cstd.push_back(-p.objective[j]);
    } else {
      vm.pos = cstd.size();
      cstd.push_back(p.objective[j]);
      vm.neg = cstd.size();
      cstd.push_back(-p.objective[j]);
      vm.sign = 1.0;
      vm.offset = 0.0;
    }
    const_obj += p.objective[j] * vm.offset;
  }
  const std::size_t ns = cstd.size();

  struct Row {
    std::vector<Term> terms;  // over standard columns
    Relation rel;
    double rhs;
    double flip;  // +1 or -1 applied to reach rhs >= 0
  };
  std::vector<Row> rows;
  rows.reserve(p.constraints.size() + bound_rows.size());
  for (const auto& c : p.constraints) {
    Row r{{}, c.relation, c.rhs, 1.0};
    for (const auto& t : c.terms) {
      const auto& vm = vmap[t.var];
      r.rhs -= t.coeff * vm.offset;
      r.terms.push_back({vm.pos, t.coeff * vm.sign});
      if (vm.neg != std::numeric_limits<std::size_t>::max()) r.terms.push_back({vm.neg, -t.coeff});
    }
    rows.push_back(std::move(r));
  }
  for (const auto& b : bound_rows) rows.push_back({{{b.col, 1.0}}, Relation::less_equal, b.ub, 1.0});
  for (auto& r : rows) {
    if (r.rhs < 0) {
      r.flip = -1.0;
      r.rhs = -r.rhs;
      for (auto& t : r.terms) t.coeff = -t.coeff;
      if (r.rel == Relation::less_equal) r.rel = Relation::greater_equal;
      else if (r.rel == Relation::greater_equal) r.rel = Relation::less_equal;
    }
  }

  // --- columns: structural | slack/surplus | artificial
  const std::size_t m = rows.size();
  std::size_t n_slack = 0, n_art = 0;
  for (const auto& r : rows) {
    if (r.rel != Relation::equal) ++n_slack;
    if (r.rel != Relation::less_equal) ++n_art;
  }
  const std::size_t art_begin = ns + n_slack;
  const std::size_t ncols = art_begin + n_art;
  detail::Tableau tab(m, ncols);
  std::vector<std::size_t> basis(m);
  std::vector<std::size_t> aux(m);  // identity column of each row
  std::vector<bool> is_art(ncols, false);
  {
    std::size_t sl = ns, ar = art_begin;
    for (std::size_t i = 0; i < m; ++i) {
      for (const auto& t : rows[i].terms) tab.at(i, t.var) += t.coeff;
      tab.rhs(i) = rows[i].rhs;
      if (rows[i].rel == Relation::less_equal) {
        tab.at(i, sl) = 1.0;
        basis[i] = aux[i] = sl++;
      } else {
        if (rows[i].rel == Relation::greater_equal) tab.at(i, sl++) = -1.0;
        tab.at(i, ar) = 1.0;
        is_art[ar] = true;
        basis[i] = aux[i] = ar++;
      }
    }
  }
  // Crash: a structural unit column +e_i can replace row i's artificial.
  {
    std::vector<std::size_t> nnz(ns, 0), row_of(ns, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ns; ++j)
        if (tab.at(i, j) != 0.0) ++nnz[j], row_of[j] = i;
    std::vector<bool> used(ns, false);
    for (std::size_t j = 0; j < ns; ++j) {
      const std::size_t i = row_of[j];
      if (nnz[j] == 1 && is_art[basis[i]] && tab.at(i, j) == 1.0 && !used[j]) {
        basis[i] = j;
        used[j] = true;
      }
    }
  }

  Solution sol;
  std::size_t total_iter = 0;
  const std::size_t iter_cap = 50 * (m + ncols) + 1000;

  auto build_cost_row = [&](const std::vector<double>& c) {
    std::vector<double> d(ncols + 1, 0.0);
    for (std::size_t j = 0; j < ncols; ++j) d[j] = c[j];
    for (std::size_t i = 0; i < m; ++i) {
      const double cb = c[basis[i]];
      if (cb == 0.0) continue;
      for (std::size_t j = 0; j <= ncols; ++j) {
        const double v = j == ncols ? tab.rhs(i) : tab.at(i, j);
        if (v != 0.0) d[j] -= cb * v;
      }
    }
    return d;  // d[ncols] = -objective
  };

  // Returns false when unbounded.
  auto run_phase = [&](std::vector<double>& d, bool allow_artificial) {
    bool bland = false;
    std::size_t stall = 0;
    double best_obj = -d[ncols];
    const std::size_t stall_limit = 3 * (m + ncols);
    for (;;) {
      std::size_t s = ncols;
      double most = -kOptimalityTol;
      for (std::size_t j = 0; j < ncols; ++j) {
        if (!allow_artificial && is_art[j]) continue;
        if (d[j] < most) {
          s = j;
          if (bland) break;
          most = d[j];
        }
      }
      if (s == ncols) return true;
      std::size_t r = m;
      double best_ratio = kInf;
      for (std::size_t i = 0; i < m; ++i) {
        const double a = tab.at(i, s);
        if (a <= kPivotTol) continue;
        const double ratio = tab.rhs(i) / a;
        if (r == m || ratio < best_ratio - 1e-12) {
          r = i;
          best_ratio = ratio;
        } else if (ratio <= best_ratio + 1e-12) {
          if (bland ? basis[i] < basis[r] : a > tab.at(r, s)) {
            r = i;
            best_ratio = std::min(best_ratio, ratio);
          }
        }
      }
      if (r == m) return false;
      tab.pivot(r, s, d);
      basis[r] = s;
      for (std::size_t i = 0; i < m; ++i)
        if (tab.rhs(i) < 0 && tab.rhs(i) > -kFeasibilityTol) tab.rhs(i) = 0.0;
      if (++total_iter > iter_cap) throw numerical_failure("lp::solve: iteration cap exceeded");
      const double obj = -d[ncols];
      if (obj < best_obj - 1e-12 * std::max(1.0, std::abs(best_obj))) {
        best_obj = obj;
        stall = 0;
      } else if (!bland && ++stall > stall_limit) {
        bland = true;
      }
    }
  };

  // --- phase 1
  bool need_phase1 = false;
  for (std::size_t i = 0; i < m; ++i) need_phase1 = need_phase1 || is_art[basis[i]];
  if (need_phase1) {
    std::vector<double> c1(ncols, 0.0);
    for (std::size_t j = art_begin; j < ncols; ++j) c1[j] = 1.0;
    auto d1 = build_cost_row(c1);
    run_phase(d1, true);
    double bmax = 1.0;
    for (const auto& r : rows) bmax = std::max(bmax, std::abs(r.rhs));
    if (-d1[ncols] > kFeasibilityTol * bmax) {
      sol.status = Status::infeasible;
      sol.iterations = total_iter;
      return sol;
    }
    std::vector<double> dummy(ncols + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      if (!is_art[basis[i]]) continue;
      std::size_t best = ncols;
      double mag = kPivotTol;
      for (std::size_t j = 0; j < art_begin; ++j)
        if (std::abs(tab.at(i, j)) > mag) mag = std::abs(tab.at(i, j)), best = j;
      if (best == ncols) continue;  // redundant row
      tab.pivot(i, best, dummy);
      basis[i] = best;
    }
  }

  // --- phase 2
  std::vector<double> c2(ncols, 0.0);
  for (std::size_t j = 0; j < ns; ++j) c2[j] = cstd[j];
  auto d2 = build_cost_row(c2);
  const bool bounded = run_phase(d2, false);
  sol.iterations = total_iter;
  if (!bounded) {
    sol.status = Status::unbounded;
    return sol;
  }

  std::vector<double> xs(ncols, 0.0);
  for (std::size_t i = 0; i < m; ++i) xs[basis[i]] = std::max(0.0, tab.rhs(i));
  sol.status = Status::optimal;
  sol.values.resize(nv);
  for (std::size_t j = 0; j < nv; ++j) {
    const auto& vm = vmap[j];
    double v = vm.offset + vm.sign * xs[vm.pos];
    if (vm.neg != std::numeric_limits<std::size_t>::max()) v -= xs[vm.neg];
    sol.values[j] = v;
  }
  sol.objective_value = 0.0;
  for (std::size_t j = 0; j < nv; ++j) sol.objective_value += p.objective[j] * sol.values[j];
  sol.duals.resize(p.constraints.size());
  for (std::size_t i = 0; i < p.constraints.size(); ++i) sol.duals[i] = -rows[i].flip * d2[aux[i]];
  (void)const_obj;
  return sol;
}

// ---------------------------------------------------------------------------
// L1 regression programs

struct L1FitRow {
  std::vector<double> features;
  double target = 0.0;
};

struct L1FitOptions {
  /// Adds xi_v <= w_v, xi_v <= 0, sum xi + c >= 0 so that <w, x> + c >= 0 for
  /// every binary x.
  bool nonnegative_envelope = false;
};

/// Variable layout of an L1 fit program: w (dim, free), c (free),
/// xi (dim, <= 0, only with nonnegativity), then per-row residual parts p, q >= 0.
struct L1FitLayout {
  std::size_t dim = 0;
  std::size_t constant = 0;
  std::size_t xi_begin = 0;
  std::size_t residual_begin = 0;
  std::size_t rows = 0;
};

/// min sum_i |<w, x_i> + c - f_i| written as <w, x_i> + c + p_i - q_i = f_i.
inline LinearProgram l1_fit_program(std::span<const L1FitRow> rows, const L1FitOptions& opt, L1FitLayout* layout = nullptr) {
  if (rows.empty()) throw std::invalid_argument("l1_fit_program: no rows");
  const std::size_t d = rows.front().features.size();
  for (const auto& r : rows)
    if (r.features.size() != d) throw std::invalid_argument("l1_fit_program: feature dimension mismatch");
  LinearProgram p;
  L1FitLayout lay;
  lay.dim = d;
  lay.rows = rows.size();
  for (std::size_t v = 0; v < d; ++v) p.add_variable(0.0, -kInf, kInf);
  lay.constant = p.add_variable(0.0, -kInf, kInf);
  lay.xi_begin = p.num_vars();
  if (opt.nonnegative_envelope)
    for (std::size_t v = 0; v < d; ++v) p.add_variable(0.0, -kInf, 0.0);
  lay.residual_begin = p.num_vars();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p.add_variable(1.0);
    p.add_variable(1.0);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<Term> t;
    for (std::size_t v = 0; v < d; ++v)
      if (rows[i].features[v] != 0.0) t.push_back({v, rows[i].features[v]});
    t.push_back({lay.constant, 1.0});
    t.push_back({lay.residual_begin + 2 * i, 1.0});
    t.push_back({lay.residual_begin + 2 * i + 1, -1.0});
    p.add_constraint(std::move(t), Relation::equal, rows[i].target);
  }
  if (opt.nonnegative_envelope) {
    for (std::size_t v = 0; v < d; ++v)
      p.add_constraint({{lay.xi_begin + v, 1.0}, {v, -1.0}}, Relation::less_equal, 0.0);
    std::vector<Term> t;
    for (std::size_t v = 0; v < d; ++v) t.push_back({lay.xi_begin + v, 1.0});
    t.push_back({lay.constant, 1.0});
    p.add_constraint(std::move(t), Relation::greater_equal, 0.0);
  }
  if (layout) *layout = lay;
  return p;
}

// ---------------------------------------------------------------------------
// text dump

/// CPLEX-LP style listing for cross-checking with external solvers.
inline void write_lp_text(const LinearProgram& p, std::ostream& os) {
  auto name = [](std::size_t j) { return "x" + std::to_string(j); };
  auto write_terms = [&](const std::vector<Term>& terms) {
    bool first = true;
    for (const auto& t : terms) {
      if (t.coeff == 0.0) continue;
      os << (t.coeff < 0 ? " - " : (first ? " " : " + ")) << std::abs(t.coeff) << ' ' << name(t.var);
      first = false;
    }
    if (first) os << " 0 " << name(0);
  };
  os.precision(17);
  os << "Minimize\n obj:";
  std::vector<Term> obj;
  for (std::size_t j = 0; j < p.num_vars(); ++j)
    if (p.objective[j] != 0.0) obj.push_back({j, p.objective[j]});
  write_terms(obj);
  os << "\nSubject To\n";
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    const auto& c = p.constraints[i];
    os << " c" << i << ':';
    write_terms(c.terms);
    os << (c.relation == Relation::less_equal ? " <= " : c.relation == Relation::greater_equal ? " >= " : " = ")
       << c.rhs << '\n';
  }
  os << "Bounds\n";
  for (std::size_t j = 0; j < p.num_vars(); ++j) {
    const double lo = p.lower[j], hi = p.upper[j];
    if (!std::isfinite(lo) && !std::isfinite(hi)) os << ' ' << name(j) << " free\n";
    else {
      os << ' ' << (std::isfinite(lo) ? std::to_string(lo) : std::string("-inf")) << " <= " << name(j) << " <= "
         << (std::isfinite(hi) ? std::to_string(hi) : std::string("+inf")) << '\n';
    }
  }
  os << "End\n";
}

}  // namespace curvemrf::lp
