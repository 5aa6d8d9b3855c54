#pragma once

// Exhaustive search over basic solutions: every choice of n linearly
// independent tight hyperplanes (equalities always tight) gives a candidate
// vertex; the best feasible one is the LP optimum of a bounded program.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "curvemrf/lp.hpp"

namespace oracles {

struct Hyperplane {
  std::vector<double> a;
  double b;
};

inline std::optional<std::vector<double>> solve_square(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    if (std::abs(A[piv][col]) < 1e-11) return std::nullopt;
    std::swap(A[piv], A[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = A[r][col] / A[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
  return x;
}

/// Optimal objective of a bounded feasible program, or +inf when no vertex is feasible.
inline double vertex_enumeration(const curvemrf::lp::LinearProgram& p) {
  using curvemrf::lp::Relation;
  const std::size_t n = p.num_vars();
  std::vector<Hyperplane> eq, ineq;
  auto dense = [&](const curvemrf::lp::Constraint& c) {
    std::vector<double> a(n, 0.0);
    for (const auto& t : c.terms) a[t.var] += t.coeff;
    return a;
  };
  for (const auto& c : p.constraints) (c.relation == Relation::equal ? eq : ineq).push_back({dense(c), c.rhs});
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    if (std::isfinite(p.lower[j])) ineq.push_back({e, p.lower[j]});
    if (std::isfinite(p.upper[j])) ineq.push_back({e, p.upper[j]});
  }
  auto feasible = [&](const std::vector<double>& x) { return curvemrf::lp::primal_residual(p, x) <= 1e-7; };
  double best = std::numeric_limits<double>::infinity();
  if (eq.size() > n) return best;
  const std::size_t need = n - eq.size();
  std::vector<std::size_t> pick(need);
  for (std::size_t i = 0; i < need; ++i) pick[i] = i;
  if (need > ineq.size()) return best;
  for (;;) {
    std::vector<std::vector<double>> A;
    std::vector<double> b;
    for (const auto& h : eq) A.push_back(h.a), b.push_back(h.b);
    for (std::size_t i : pick) A.push_back(ineq[i].a), b.push_back(ineq[i].b);
    if (auto x = solve_square(A, b); x && feasible(*x)) {
      double v = 0.0;
      for (std::size_t j = 0; j < n; ++j) v += p.objective[j] * (*x)[j];
      best = std::min(best, v);
    }
    std::size_t i = need;
    while (i > 0 && pick[i - 1] == ineq.size() - need + i - 1) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t k = i; k < need; ++k) pick[k] = pick[k - 1] + 1;
    if (need == 0) break;
  }
  return best;
}

}  // namespace oracles
