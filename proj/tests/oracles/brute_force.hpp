#pragma once

// Straightforward re-evaluations used as independent references in tests.

#include <limits>
#include <random>

#include "curvemrf/core.hpp"

namespace oracles {

using namespace curvemrf;

/// Special patterns plus `learned` random ones, each shifted so that its
/// minimum over binary patches is non-negative.
inline PatternBank random_bank(std::mt19937_64& rng, std::size_t side, std::size_t learned, double f_max) {
  std::uniform_real_distribution<double> w(-1.0, 1.0), slack(0.0, 0.5);
  std::vector<Pattern> ps;
  for (std::size_t i = 0; i < learned; ++i) {
    std::vector<double> wt(side * side);
    double neg = 0.0;
    for (auto& v : wt) {
      v = w(rng);
      neg += std::min(v, 0.0);
    }
    ps.emplace_back(side, std::move(wt), -neg + slack(rng));
  }
  return make_bank(side, f_max, std::move(ps));
}

inline EnergyModel random_model(std::mt19937_64& rng, std::size_t width, std::size_t height, std::size_t side,
                                std::size_t learned, bool pairwise, double unary_scale = 2.0) {
  std::uniform_real_distribution<double> u(-unary_scale, unary_scale), p(0.0, 0.6);
  std::vector<UnaryTable> un(width * height);
  for (auto& t : un) t = {u(rng), u(rng)};
  std::vector<PairwiseTerm> pw;
  if (pairwise) {
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t i = r * width + c;
        if (c + 1 < width) pw.push_back({i, i + 1, {p(rng), p(rng), p(rng), p(rng)}});
        if (r + 1 < height) pw.push_back({i, i + width, {p(rng), p(rng), p(rng), p(rng)}});
      }
  }
  return make_energy_model({width, height}, std::move(un), random_bank(rng, side, learned, 2.0), std::move(pw));
}

inline double direct_energy(const EnergyModel& m, const BinaryLabeling& x) {
  double e = 0.0;
  for (std::size_t i = 0; i < x.dims().size(); ++i) e += x[i] ? m.unaries[i][1] : m.unaries[i][0];
  for (const auto& t : m.pairwise) e += t.table[x[t.u] * 2 + x[t.v]];
  const std::size_t k = m.bank.side;
  if (m.bank.empty() || k > x.width() || k > x.height()) return e;
  for (std::size_t r = 0; r + k <= x.height(); ++r)
    for (std::size_t c = 0; c + k <= x.width(); ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : m.bank.patterns) {
        double s = p.constant;
        for (std::size_t dr = 0; dr < k; ++dr)
          for (std::size_t dc = 0; dc < k; ++dc) s += p.weights[dr * k + dc] * x.at(r + dr, c + dc);
        best = std::min(best, s);
      }
      e += best;
    }
  return e;
}

inline BinaryLabeling labeling_from_mask(Dims d, unsigned long long mask) {
  BinaryLabeling x(d.width, d.height);
  for (std::size_t i = 0; i < d.size(); ++i) x.set(i, (mask >> i) & 1ULL);
  return x;
}

struct ExhaustiveResult {
  double energy = std::numeric_limits<double>::infinity();
  BinaryLabeling labeling;
};

inline ExhaustiveResult exhaustive_minimum(const EnergyModel& m) {
  const std::size_t n = m.dims.size();
  if (n > 20) throw std::invalid_argument("exhaustive_minimum: grid too large");
  ExhaustiveResult best;
  for (unsigned long long mask = 0; mask < (1ULL << n); ++mask) {
    auto x = labeling_from_mask(m.dims, mask);
    const double e = direct_energy(m, x);
    if (e < best.energy) best = {e, x};
  }
  return best;
}

}  // namespace oracles
