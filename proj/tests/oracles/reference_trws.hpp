#pragma once

// Textbook sequential TRW-S on a generic pairwise graph that stores every
// message in both directions. Used to cross-check the link-compressed solver.

#include <algorithm>
#include <limits>
#include <vector>

#include "curvemrf/core.hpp"

namespace oracles {

struct GenericGraph {
  std::vector<std::vector<double>> unary;  // per node
  struct Edge {
    std::size_t s, t;
    std::vector<double> table;  // table[xs * L_t + xt]
  };
  std::vector<Edge> edges;
  std::size_t labels(std::size_t n) const { return unary[n].size(); }
};

/// Pixels first (row-major), then windows in location order.
inline GenericGraph generic_from_model(const curvemrf::EnergyModel& m) {
  GenericGraph g;
  const std::size_t np = m.dims.size();
  for (std::size_t v = 0; v < np; ++v) g.unary.push_back({m.unaries[v][0], m.unaries[v][1]});
  for (const auto& t : m.pairwise) g.edges.push_back({t.u, t.v, {t.table[0], t.table[1], t.table[2], t.table[3]}});
  if (!m.has_higher_order()) return g;
  const std::size_t K = m.bank.side, ny = m.bank.size();
  for (std::size_t h = 0; h < m.locations.size(); ++h) {
    std::vector<double> c;
    for (const auto& p : m.bank.patterns) c.push_back(p.constant);
    g.unary.push_back(c);
    const std::size_t node = np + h;
    for (std::size_t dr = 0; dr < K; ++dr)
      for (std::size_t dc = 0; dc < K; ++dc) {
        const std::size_t v = (m.locations[h].row + dr) * m.dims.width + m.locations[h].col + dc;
        std::vector<double> tab(2 * ny, 0.0);
        for (std::size_t y = 0; y < ny; ++y) tab[ny + y] = m.bank.patterns[y].weights[dr * K + dc];
        g.edges.push_back({v, node, tab});
      }
  }
  return g;
}

/// Each window immediately after the pixel at its window center.
inline std::vector<std::size_t> long_order(const curvemrf::EnergyModel& m) {
  const std::size_t np = m.dims.size();
  std::vector<std::size_t> order;
  const std::size_t o = m.has_higher_order() ? m.bank.side / 2 - 1 : 0;
  for (std::size_t v = 0; v < np; ++v) {
    order.push_back(v);
    for (std::size_t h = 0; h < m.locations.size(); ++h)
      if ((m.locations[h].row + o) * m.dims.width + m.locations[h].col + o == v) order.push_back(np + h);
  }
  return order;
}

class ReferenceTrws {
 public:
  ReferenceTrws(const GenericGraph& g, std::vector<std::size_t> order, bool bp = false)
      : g_(g), order_(std::move(order)) {
    const std::size_t n = g.unary.size();
    pos_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pos_[order_[i]] = i;
    incident_.resize(n);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      incident_[g.edges[e].s].push_back(e);
      incident_[g.edges[e].t].push_back(e);
    }
    weight_.resize(n);
    gamma_.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t before = 0, after = 0;
      for (std::size_t e : incident_[s]) (pos_[other(e, s)] < pos_[s] ? before : after)++;
      weight_[s] = std::max<std::size_t>({before, after, 1});
      gamma_[s] = bp ? 1.0 : 1.0 / static_cast<double>(weight_[s]);
    }
    // msg_[2e]: s->t over labels of t; msg_[2e+1]: t->s over labels of s
    for (const auto& e : g.edges) {
      msg_.emplace_back(g.labels(e.t), 0.0);
      msg_.emplace_back(g.labels(e.s), 0.0);
    }
  }

  std::size_t other(std::size_t e, std::size_t n) const { return g_.edges[e].s == n ? g_.edges[e].t : g_.edges[e].s; }

  std::vector<double> belief(std::size_t s) const {
    std::vector<double> b = g_.unary[s];
    for (std::size_t e : incident_[s]) {
      const auto& in = msg_[2 * e + (g_.edges[e].t == s ? 0 : 1)];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += in[i];
    }
    return b;
  }

  double edge_cost(std::size_t e, std::size_t from, std::size_t xf, std::size_t xt) const {
    const auto& ed = g_.edges[e];
    return ed.s == from ? ed.table[xf * g_.labels(ed.t) + xt] : ed.table[xt * g_.labels(ed.t) + xf];
  }

  void send(std::size_t s, std::size_t e) {
    const std::size_t t = other(e, s);
    const auto b = belief(s);
    const bool s_is_first = g_.edges[e].s == s;
    auto& out = msg_[2 * e + (s_is_first ? 0 : 1)];
    const auto& in = msg_[2 * e + (s_is_first ? 1 : 0)];
    for (std::size_t xt = 0; xt < g_.labels(t); ++xt) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t xs = 0; xs < g_.labels(s); ++xs)
        best = std::min(best, gamma_[s] * b[xs] - in[xs] + edge_cost(e, s, xs, xt));
      out[xt] = best;
    }
    const double mn = *std::min_element(out.begin(), out.end());
    for (double& v : out) v -= mn;
  }

  void pass() {
    for (std::size_t i = 0; i < order_.size(); ++i) {
      const std::size_t s = order_[i];
      for (std::size_t e : incident_[s])
        if (pos_[other(e, s)] > pos_[s]) send(s, e);
    }
    for (std::size_t i = order_.size(); i-- > 0;) {
      const std::size_t s = order_[i];
      for (std::size_t e : incident_[s])
        if (pos_[other(e, s)] < pos_[s]) send(s, e);
    }
  }

  /// Chain bound: pair the k-th earlier neighbor with the k-th later neighbor
  /// (both sorted by position, then edge id).
  double lower_bound() const {
    const std::size_t n = g_.unary.size();
    std::vector<std::vector<std::size_t>> before(n), after(n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t e : incident_[s]) (pos_[other(e, s)] < pos_[s] ? before[s] : after[s]).push_back(e);
      auto key = [&](std::size_t e) { return std::pair{pos_[other(e, s)], e}; };
      auto cmp = [&](std::size_t a, std::size_t b) { return key(a) < key(b); };
      std::sort(before[s].begin(), before[s].end(), cmp);
      std::sort(after[s].begin(), after[s].end(), cmp);
    }
    std::vector<std::vector<double>> b(n);
    for (std::size_t s = 0; s < n; ++s) b[s] = belief(s);
    auto term = [&](std::size_t s) {
      auto v = b[s];
      for (double& x : v) x /= static_cast<double>(weight_[s]);
      return v;
    };
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (before[s].empty() && after[s].empty()) {
        auto v = term(s);
        total += *std::min_element(v.begin(), v.end());
        continue;
      }
      for (std::size_t k = before[s].size(); k < after[s].size(); ++k) {
        std::size_t cur = s, e = after[s][k];
        auto dp = term(cur);
        for (;;) {
          const std::size_t t = other(e, cur);
          auto tt = term(t);
          const bool cur_first = g_.edges[e].s == cur;
          const auto& m_ct = msg_[2 * e + (cur_first ? 0 : 1)];
          const auto& m_tc = msg_[2 * e + (cur_first ? 1 : 0)];
          std::vector<double> nx(tt.size(), std::numeric_limits<double>::infinity());
          for (std::size_t xt = 0; xt < tt.size(); ++xt) {
            for (std::size_t xc = 0; xc < dp.size(); ++xc)
              nx[xt] = std::min(nx[xt], dp[xc] + edge_cost(e, cur, xc, xt) - m_ct[xt] - m_tc[xc]);
            nx[xt] += tt[xt];
          }
          dp = std::move(nx);
          const auto it = std::find(before[t].begin(), before[t].end(), e);
          const std::size_t r = static_cast<std::size_t>(it - before[t].begin());
          if (r >= after[t].size()) break;
          cur = t;
          e = after[t][r];
        }
        total += *std::min_element(dp.begin(), dp.end());
      }
    }
    return total;
  }

 private:
  const GenericGraph& g_;
  std::vector<std::size_t> order_, pos_;
  std::vector<std::vector<std::size_t>> incident_;
  std::vector<std::size_t> weight_;
  std::vector<double> gamma_;
  std::vector<std::vector<double>> msg_;
};

}  // namespace oracles
