#pragma once

// MAP inference on the pairwise form of the lower-envelope energy: pixel
// variables x_v in {0,1}, one pattern-switching variable y_h per window with
// unary c_y, and links theta_vh(x, y) = x * w_{y, offset(v, h)}.
//
// TRW-S stores only the window->pixel messages. A pixel->window message is a
// function of two numbers per link, a_vh(x) = gamma_v * theta_hat_v(x) -
// m_hv(x) taken when the pixel last sent it, and is expanded on demand as
// m_vh(y) = min(a_vh(0), a_vh(1) + w_{y, offset}).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "core.hpp"
#include "lp.hpp"

namespace curvemrf {

// ---------------------------------------------------------------------------
// pairwise model

struct PairwiseModel {
  Dims dims;
  std::vector<UnaryTable> unaries;
  std::vector<PairwiseTerm> grid;
  std::size_t side = 0;
  std::size_t n_patterns = 0;
  std::vector<double> constants;  // c_y
  std::vector<double> weights;    // w[y * side^2 + offset]
  std::vector<double> min_weight;  // min_y w[y, offset]
  std::vector<Anchor> windows;
  // links of pixel v: link_ids[link_begin[v] .. link_begin[v+1])
  std::vector<std::size_t> link_begin;
  std::vector<std::size_t> link_ids;

  std::size_t num_pixels() const { return dims.size(); }
  std::size_t num_windows() const { return windows.size(); }
  std::size_t links_per_window() const { return side * side; }
  std::size_t num_links() const { return windows.size() * side * side; }
  std::size_t link_window(std::size_t link) const { return link / links_per_window(); }
  std::size_t link_offset(std::size_t link) const { return link % links_per_window(); }
  std::size_t link_pixel(std::size_t link) const {
    const Anchor& h = windows[link_window(link)];
    const std::size_t off = link_offset(link);
    return (h.row + off / side) * dims.width + h.col + off % side;
  }
  double weight(std::size_t y, std::size_t offset) const { return weights[y * side * side + offset]; }
  /// theta_vh(x, y) for link `link`.
  double link_cost(std::size_t link, Label x, std::size_t y) const { return x ? weight(y, link_offset(link)) : 0.0; }
};

inline PairwiseModel build_pairwise_model(const EnergyModel& m) {
  PairwiseModel p;
  p.dims = m.dims;
  p.unaries = m.unaries;
  p.grid = m.pairwise;
  if (m.has_higher_order()) {
    p.side = m.bank.side;
    p.n_patterns = m.bank.size();
    p.windows = m.locations;
    const std::size_t k2 = p.side * p.side;
    p.min_weight.assign(k2, std::numeric_limits<double>::infinity());
    for (const auto& pat : m.bank.patterns) {
      p.constants.push_back(pat.constant);
      for (std::size_t o = 0; o < k2; ++o) {
        p.weights.push_back(pat.weights[o]);
        p.min_weight[o] = std::min(p.min_weight[o], pat.weights[o]);
      }
    }
  }
  std::vector<std::size_t> count(p.num_pixels() + 1, 0);
  for (std::size_t l = 0; l < p.num_links(); ++l) ++count[p.link_pixel(l) + 1];
  for (std::size_t v = 0; v < p.num_pixels(); ++v) count[v + 1] += count[v];
  p.link_begin = count;
  p.link_ids.resize(p.num_links());
  for (std::size_t l = 0; l < p.num_links(); ++l) p.link_ids[count[p.link_pixel(l)]++] = l;
  return p;
}

/// E0(x) + sum_h (<w_{y_h}, x_{V(h)}> + c_{y_h}).
inline double pairwise_energy(const PairwiseModel& p, const BinaryLabeling& x, std::span<const std::size_t> y) {
  if (y.size() != p.num_windows()) throw std::invalid_argument("pairwise_energy: one label per window");
  double e = 0.0;
  for (std::size_t v = 0; v < p.num_pixels(); ++v) e += p.unaries[v][x[v]];
  for (const auto& t : p.grid) e += t.table[2 * x[t.u] + x[t.v]];
  for (std::size_t h = 0; h < p.num_windows(); ++h) e += p.constants[y[h]];
  for (std::size_t l = 0; l < p.num_links(); ++l) e += p.link_cost(l, x[p.link_pixel(l)], y[p.link_window(l)]);
  return e;
}

// ---------------------------------------------------------------------------
// TRW-S / BP

enum class Ordering { short_chains, long_chains };
enum class GammaRule { trws, bp };

struct TrwsOptions {
  std::size_t passes = 300;
  /// Stop early once the bound changes by less than 1e-9 (relative) over 10 passes.
  bool auto_stop = false;
  Ordering ordering = Ordering::short_chains;
  GammaRule gamma = GammaRule::trws;
  /// Called after every pass with (pass, lower bound); returning false stops the run.
  std::function<bool(std::size_t, double)> on_pass;
};

struct MinMarginals {
  Dims dims;
  std::vector<std::array<double, 2>> pixels;
  std::vector<std::vector<double>> windows;
};

struct InferenceState {
  std::vector<std::array<double, 2>> window_to_pixel;  // m_hv(x), per link
  std::vector<std::array<double, 2>> reverse_base;     // a_vh(x), per link
  std::vector<std::array<double, 2>> grid_messages;    // [2e]: u->v over x_v, [2e+1]: v->u over x_u
  std::vector<double> lower_bound_trace;
  std::size_t passes = 0;
};

/// min_x [gamma * theta_hat(x) - m_hv(x) + x * w]
inline double reverse_message(double gamma, const std::array<double, 2>& theta_hat, const std::array<double, 2>& m_hv,
                              double w) {
  return std::min(gamma * theta_hat[0] - m_hv[0], gamma * theta_hat[1] - m_hv[1] + w);
}

namespace detail {

struct Neighbor {
  std::size_t node;
  std::size_t index;  // grid edge or link
  bool is_link;
};

class Trws {
 public:
  Trws(const PairwiseModel& m, Ordering ordering, GammaRule gamma) : m_(m) {
    const std::size_t np = m.num_pixels(), nw = m.num_windows();
    n_nodes_ = np + nw;
    order_.reserve(n_nodes_);
    if (ordering == Ordering::short_chains || nw == 0) {
      for (std::size_t i = 0; i < n_nodes_; ++i) order_.push_back(i);
    } else {
      // each window right after the pixel at its window center
      std::vector<std::vector<std::size_t>> after(np);
      const std::size_t o = center_offset(m.side);
      for (std::size_t h = 0; h < nw; ++h)
        after[(m.windows[h].row + o) * m.dims.width + m.windows[h].col + o].push_back(np + h);
      for (std::size_t v = 0; v < np; ++v) {
        order_.push_back(v);
        for (std::size_t w : after[v]) order_.push_back(w);
      }
    }
    pos_.resize(n_nodes_);
    for (std::size_t i = 0; i < n_nodes_; ++i) pos_[order_[i]] = i;

    earlier_.resize(n_nodes_);
    later_.resize(n_nodes_);
    auto add = [&](std::size_t a, std::size_t b, std::size_t idx, bool link) {
      (pos_[b] < pos_[a] ? earlier_[a] : later_[a]).push_back({b, idx, link});
    };
    for (std::size_t e = 0; e < m.grid.size(); ++e) {
      add(m.grid[e].u, m.grid[e].v, e, false);
      add(m.grid[e].v, m.grid[e].u, e, false);
    }
    for (std::size_t l = 0; l < m.num_links(); ++l) {
      const std::size_t v = m.link_pixel(l), h = np + m.link_window(l);
      add(v, h, l, true);
      add(h, v, l, true);
    }
    auto by_pos = [&](const Neighbor& a, const Neighbor& b) {
      return pos_[a.node] != pos_[b.node] ? pos_[a.node] < pos_[b.node] : a.index < b.index;
    };
    for (std::size_t s = 0; s < n_nodes_; ++s) {
      std::sort(earlier_[s].begin(), earlier_[s].end(), by_pos);
      std::sort(later_[s].begin(), later_[s].end(), by_pos);
    }
    chains_per_node_.resize(n_nodes_);
    gamma_.resize(n_nodes_);
    for (std::size_t s = 0; s < n_nodes_; ++s) {
      chains_per_node_[s] = std::max<std::size_t>({earlier_[s].size(), later_[s].size(), 1});
      gamma_[s] = gamma == GammaRule::bp ? 1.0 : 1.0 / static_cast<double>(chains_per_node_[s]);
    }
    build_chains();

    st_.window_to_pixel.assign(m.num_links(), {0.0, 0.0});
    st_.reverse_base.assign(m.num_links(), {0.0, std::numeric_limits<double>::infinity()});
    st_.grid_messages.assign(2 * m.grid.size(), {0.0, 0.0});
  }

  InferenceState& state() { return st_; }

  void forward() {
    for (std::size_t i = 0; i < n_nodes_; ++i) process(order_[i], later_[order_[i]]);
  }
  void backward() {
    for (std::size_t i = n_nodes_; i-- > 0;) process(order_[i], earlier_[order_[i]]);
  }

  double reverse(std::size_t link, std::size_t y) const {
    const auto& a = st_.reverse_base[link];
    return std::min(a[0], a[1] + m_.weight(y, m_.link_offset(link)));
  }

  std::array<double, 2> pixel_belief(std::size_t v) const {
    std::array<double, 2> th = m_.unaries[v];
    for (std::size_t k = m_.link_begin[v]; k < m_.link_begin[v + 1]; ++k) {
      const auto& msg = st_.window_to_pixel[m_.link_ids[k]];
      th[0] += msg[0];
      th[1] += msg[1];
    }
    for (const auto* list : {&earlier_[v], &later_[v]})
      for (const Neighbor& nb : *list) {
        if (nb.is_link) continue;
        const auto& msg = st_.grid_messages[2 * nb.index + (m_.grid[nb.index].v == v ? 0 : 1)];
        th[0] += msg[0];
        th[1] += msg[1];
      }
    return th;
  }

  void window_belief(std::size_t h, std::vector<double>& th) const {
    th.assign(m_.constants.begin(), m_.constants.end());
    const std::size_t k2 = m_.links_per_window();
    for (std::size_t off = 0; off < k2; ++off) {
      const auto& a = st_.reverse_base[h * k2 + off];
      for (std::size_t y = 0; y < m_.n_patterns; ++y) th[y] += std::min(a[0], a[1] + m_.weight(y, off));
    }
  }

  MinMarginals min_marginals() const {
    MinMarginals mm;
    mm.dims = m_.dims;
    mm.pixels.resize(m_.num_pixels());
    for (std::size_t v = 0; v < m_.num_pixels(); ++v) mm.pixels[v] = pixel_belief(v);
    mm.windows.resize(m_.num_windows());
    for (std::size_t h = 0; h < m_.num_windows(); ++h) window_belief(h, mm.windows[h]);
    return mm;
  }

  /// Sum over monotone chains of the chain minimum.
  double lower_bound() const {
    const std::size_t np = m_.num_pixels();
    std::vector<std::array<double, 2>> pix(np);
    for (std::size_t v = 0; v < np; ++v) pix[v] = pixel_belief(v);
    std::vector<std::vector<double>> win(m_.num_windows());
    for (std::size_t h = 0; h < m_.num_windows(); ++h) window_belief(h, win[h]);
    auto node_term = [&](std::size_t s, std::vector<double>& out) {
      const double inv = 1.0 / static_cast<double>(chains_per_node_[s]);
      if (s < np) {
        out = {pix[s][0] * inv, pix[s][1] * inv};
      } else {
        out = win[s - np];
        for (double& v : out) v *= inv;
      }
    };
    double bound = 0.0;
    std::vector<double> cur, nxt, term;
    for (const auto& chain : chains_) {
      std::size_t s = chain.start;
      node_term(s, cur);
      for (const Neighbor& step : chain.steps) {
        const std::size_t t = step.node;
        node_term(t, term);
        nxt.assign(term.size(), std::numeric_limits<double>::infinity());
        if (!step.is_link) {
          const auto& e = m_.grid[step.index];
          const auto& muv = st_.grid_messages[2 * step.index];
          const auto& mvu = st_.grid_messages[2 * step.index + 1];
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
              // a labels s, b labels t
              const int xu = s == e.u ? a : b, xv = s == e.u ? b : a;
              const double pot = e.table[2 * xu + xv] - muv[xv] - mvu[xu];
              nxt[b] = std::min(nxt[b], cur[a] + pot);
            }
        } else if (s < np) {
          const auto& mhv = st_.window_to_pixel[step.index];
          const std::size_t off = m_.link_offset(step.index);
          const double base0 = cur[0] - mhv[0], base1 = cur[1] - mhv[1];
          for (std::size_t y = 0; y < m_.n_patterns; ++y)
            nxt[y] = std::min(base0, base1 + m_.weight(y, off)) - reverse(step.index, y);
        } else {
          const auto& mhv = st_.window_to_pixel[step.index];
          const std::size_t off = m_.link_offset(step.index);
          double r0 = std::numeric_limits<double>::infinity(), r1 = r0;
          for (std::size_t y = 0; y < m_.n_patterns; ++y) {
            const double b = cur[y] - reverse(step.index, y);
            r0 = std::min(r0, b);
            r1 = std::min(r1, b + m_.weight(y, off));
          }
          nxt[0] = r0 - mhv[0];
          nxt[1] = r1 - mhv[1];
        }
        for (std::size_t i = 0; i < nxt.size(); ++i) nxt[i] += term[i];
        std::swap(cur, nxt);
        s = t;
      }
      bound += *std::min_element(cur.begin(), cur.end());
    }
    return bound;
  }

 private:
  struct Chain {
    std::size_t start;
    std::vector<Neighbor> steps;
  };

  void build_chains() {
    // k-th incoming edge of a node continues with its k-th outgoing edge
    auto rank_in = [&](std::size_t t, std::size_t from, std::size_t idx, bool link) {
      const auto& list = earlier_[t];
      for (std::size_t k = 0; k < list.size(); ++k)
        if (list[k].node == from && list[k].index == idx && list[k].is_link == link) return k;
      throw std::logic_error("trws: inconsistent neighbor lists");
    };
    for (std::size_t s = 0; s < n_nodes_; ++s) {
      if (earlier_[s].empty() && later_[s].empty()) {
        chains_.push_back({s, {}});
        continue;
      }
      for (std::size_t k = earlier_[s].size(); k < later_[s].size(); ++k) {
        Chain c{s, {}};
        std::size_t cur = s;
        Neighbor step = later_[s][k];
        for (;;) {
          c.steps.push_back(step);
          const std::size_t t = step.node;
          const std::size_t r = rank_in(t, cur, step.index, step.is_link);
          if (r >= later_[t].size()) break;
          cur = t;
          step = later_[t][r];
        }
        chains_.push_back(std::move(c));
      }
    }
  }

  void process(std::size_t s, const std::vector<Neighbor>& targets) {
    if (targets.empty()) return;
    const std::size_t np = m_.num_pixels();
    const double g = gamma_[s];
    if (s < np) {
      const auto th = pixel_belief(s);
      for (const Neighbor& nb : targets) {
        if (nb.is_link) {
          const auto& mhv = st_.window_to_pixel[nb.index];
          std::array<double, 2> a{g * th[0] - mhv[0], g * th[1] - mhv[1]};
          const double norm = std::min(a[0], a[1] + m_.min_weight[m_.link_offset(nb.index)]);
          st_.reverse_base[nb.index] = {a[0] - norm, a[1] - norm};
        } else {
          const auto& e = m_.grid[nb.index];
          const bool s_is_u = e.u == s;
          auto& out = st_.grid_messages[2 * nb.index + (s_is_u ? 0 : 1)];
          const auto& in = st_.grid_messages[2 * nb.index + (s_is_u ? 1 : 0)];
          for (int xt = 0; xt < 2; ++xt) {
            double best = std::numeric_limits<double>::infinity();
            for (int xs = 0; xs < 2; ++xs) {
              const double pot = s_is_u ? e.table[2 * xs + xt] : e.table[2 * xt + xs];
              best = std::min(best, g * th[xs] - in[xs] + pot);
            }
            out[xt] = best;
          }
          const double norm = std::min(out[0], out[1]);
          out[0] -= norm;
          out[1] -= norm;
        }
      }
      return;
    }
    const std::size_t h = s - np;
    window_belief(h, win_);
    for (const Neighbor& nb : targets) {
      const std::size_t off = m_.link_offset(nb.index);
      double r0 = std::numeric_limits<double>::infinity(), r1 = r0;
      for (std::size_t y = 0; y < m_.n_patterns; ++y) {
        const double b = g * win_[y] - reverse(nb.index, y);
        r0 = std::min(r0, b);
        r1 = std::min(r1, b + m_.weight(y, off));
      }
      const double norm = std::min(r0, r1);
      st_.window_to_pixel[nb.index] = {r0 - norm, r1 - norm};
    }
  }

  const PairwiseModel& m_;
  std::size_t n_nodes_ = 0;
  std::vector<std::size_t> order_, pos_;
  std::vector<std::vector<Neighbor>> earlier_, later_;
  std::vector<std::size_t> chains_per_node_;
  std::vector<double> gamma_;
  std::vector<Chain> chains_;
  InferenceState st_;
  std::vector<double> win_;
};

}  // namespace detail

struct TrwsResult {
  InferenceState state;
  MinMarginals min_marginals;
};

/// Sequential TRW-S: each pass is a forward sweep followed by a backward sweep.
inline TrwsResult trws_run(const PairwiseModel& m, const TrwsOptions& opt = {}) {
  if (opt.passes == 0) throw std::invalid_argument("trws_run: passes must be at least 1");
  detail::Trws solver(m, opt.ordering, opt.gamma);
  auto& st = solver.state();
  for (std::size_t pass = 1; pass <= opt.passes; ++pass) {
    solver.forward();
    solver.backward();
    st.passes = pass;
    double lb = std::numeric_limits<double>::quiet_NaN();
    if (opt.gamma == GammaRule::trws) {
      lb = solver.lower_bound();
      st.lower_bound_trace.push_back(lb);
    }
    if (opt.on_pass && !opt.on_pass(pass, lb)) break;
    if (opt.auto_stop && opt.gamma == GammaRule::trws && st.lower_bound_trace.size() > 10) {
      const auto& tr = st.lower_bound_trace;
      const double now = tr.back(), before = tr[tr.size() - 11];
      if (std::abs(now - before) <= 1e-9 * std::max(1.0, std::abs(now))) break;
    }
  }
  TrwsResult res;
  res.min_marginals = solver.min_marginals();
  res.state = std::move(st);
  return res;
}

/// Min-sum belief propagation: the same sweeps with every gamma set to 1.
inline MinMarginals bp_run(const PairwiseModel& m, std::size_t passes, Ordering ordering = Ordering::short_chains) {
  TrwsOptions opt;
  opt.passes = passes;
  opt.ordering = ordering;
  opt.gamma = GammaRule::bp;
  return trws_run(m, opt).min_marginals;
}

/// Per-pixel argmin; ties go to background.
/// Differences within this relative tolerance are round-off and count as ties.
inline constexpr double kMinMarginalTieTolerance = 1e-9;

inline bool min_marginal_tie(const std::array<double, 2>& m) {
  return std::abs(m[0] - m[1]) <= kMinMarginalTieTolerance * std::max({1.0, std::abs(m[0]), std::abs(m[1])});
}

/// Foreground where theta_hat(0) - theta_hat(1) > level; ties count as 0.
inline BinaryLabeling round_min_marginals(const MinMarginals& mm, double level = 0.0) {
  if (mm.pixels.size() != mm.dims.size()) throw std::invalid_argument("round_min_marginals: size mismatch");
  BinaryLabeling x(mm.dims.width, mm.dims.height);
  for (std::size_t v = 0; v < mm.pixels.size(); ++v) {
    const double d = min_marginal_tie(mm.pixels[v]) ? 0.0 : mm.pixels[v][0] - mm.pixels[v][1];
    x.set(v, d > level ? 1 : 0);
  }
  return x;
}

/// `count` rounding levels spread over the quantiles of the unconstrained
/// min-marginal differences, from just below the smallest to the largest.
inline std::vector<double> rounding_levels(const MinMarginals& mm, std::size_t count) {
  std::vector<double> d;
  for (const auto& p : mm.pixels)
    if (!min_marginal_tie(p) && std::abs(p[0] - p[1]) < 0.5 * kBig) d.push_back(p[0] - p[1]);
  if (d.empty() || count == 0) return {};
  std::sort(d.begin(), d.end());
  std::vector<double> levels;
  for (std::size_t i = 0; i < count; ++i) {
    const double q = count == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(count - 1);
    const auto k = static_cast<std::size_t>(std::lround(q * static_cast<double>(d.size() - 1)));
    levels.push_back(i == 0 ? std::nextafter(d[k], -kBig) : d[k]);
  }
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

/// Relaxed foreground values thresholded at 0.5; ties go to background.
inline BinaryLabeling round_relaxed(Dims dims, std::span<const double> values) {
  if (values.size() != dims.size()) throw std::invalid_argument("round_relaxed: size mismatch");
  BinaryLabeling x(dims.width, dims.height);
  for (std::size_t v = 0; v < values.size(); ++v) x.set(v, values[v] > 0.5 ? 1 : 0);
  return x;
}

// ---------------------------------------------------------------------------
// Block-ICM

namespace detail {

inline std::pair<std::size_t, std::size_t> block_shape(std::size_t k) {
  std::size_t a = 1;
  for (std::size_t d = 1; d * d <= k; ++d)
    if (k % d == 0) a = d;
  return {a, k / a};
}

}  // namespace detail

/// Exhaustive search over all 2^k labelings of small rectangular blocks placed
/// around boundary pixels and pixels whose unary prefers the other label.
/// Sweeps repeat until none of them lowers the energy.
inline BinaryLabeling block_icm(const EnergyModel& m, BinaryLabeling x, std::size_t block_size = 6) {
  if (block_size == 0 || block_size > 12) throw std::invalid_argument("block_icm: block size must be in [1, 12]");
  if (x.dims() != m.dims) throw std::invalid_argument("block_icm: dims mismatch");
  const std::size_t W = m.dims.width, H = m.dims.height;
  const std::size_t K = m.has_higher_order() ? m.bank.side : 0;
  const std::size_t np = m.bank.size();
  const std::size_t nwx = K ? W - K + 1 : 0, nwy = K ? H - K + 1 : 0;

  std::vector<std::vector<std::size_t>> edges_of(m.dims.size());
  for (std::size_t e = 0; e < m.pairwise.size(); ++e) {
    edges_of[m.pairwise[e].u].push_back(e);
    edges_of[m.pairwise[e].v].push_back(e);
  }
  // per-window per-pattern sums <w_y, x> + c_y
  std::vector<double> sums(K ? nwx * nwy * np : 0);
  auto recompute_window = [&](std::size_t wr, std::size_t wc) {
    double* s = &sums[(wr * nwx + wc) * np];
    for (std::size_t y = 0; y < np; ++y) {
      const Pattern& p = m.bank.patterns[y];
      double v = p.constant;
      for (std::size_t dr = 0; dr < K; ++dr)
        for (std::size_t dc = 0; dc < K; ++dc)
          if (x.at(wr + dr, wc + dc)) v += p.weights[dr * K + dc];
      s[y] = v;
    }
  };
  for (std::size_t wr = 0; wr < nwy; ++wr)
    for (std::size_t wc = 0; wc < nwx; ++wc) recompute_window(wr, wc);
  auto window_min = [&](std::size_t wi) {
    const double* s = &sums[wi * np];
    return *std::min_element(s, s + np);
  };

  auto [ba, bb] = detail::block_shape(block_size);
  std::vector<std::pair<std::size_t, std::size_t>> shapes{{ba, bb}};
  if (ba != bb) shapes.push_back({bb, ba});
  // an image no larger than one block is searched as a whole
  const bool whole = m.dims.size() <= block_size;
  if (whole) shapes = {{H, W}};

  std::vector<std::size_t> pix, affected;
  std::vector<char> in_block(m.dims.size(), 0);
  std::vector<double> base_window;
  std::vector<Label> best_assign, start_assign;
  bool improved = true;
  while (improved) {
    improved = false;
    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const std::size_t v = r * W + c;
        const Label l = x[v];
        bool cand = m.unaries[v][1 - l] < m.unaries[v][l];
        if (!cand && c + 1 < W && x[v + 1] != l) cand = true;
        if (!cand && c > 0 && x[v - 1] != l) cand = true;
        if (!cand && r + 1 < H && x[v + W] != l) cand = true;
        if (!cand && r > 0 && x[v - W] != l) cand = true;
        if (cand) candidates.push_back(v);
      }
    if (whole) candidates = {0};
    for (std::size_t center : candidates) {
      const std::size_t cr = center / W, cc = center % W;
      for (auto [bh, bw] : shapes) {
        if (bh > H || bw > W) continue;
        const std::size_t r0 = std::min(cr >= (bh - 1) / 2 ? cr - (bh - 1) / 2 : 0, H - bh);
        const std::size_t c0 = std::min(cc >= (bw - 1) / 2 ? cc - (bw - 1) / 2 : 0, W - bw);
        pix.clear();
        for (std::size_t r = r0; r < r0 + bh; ++r)
          for (std::size_t c = c0; c < c0 + bw; ++c) pix.push_back(r * W + c);
        for (std::size_t v : pix) in_block[v] = 1;
        // windows overlapping the block
        affected.clear();
        if (K) {
          const std::size_t wr0 = r0 + 1 >= K ? r0 + 1 - K : 0, wc0 = c0 + 1 >= K ? c0 + 1 - K : 0;
          const std::size_t wr1 = std::min(r0 + bh - 1, nwy - 1), wc1 = std::min(c0 + bw - 1, nwx - 1);
          for (std::size_t wr = wr0; wr <= wr1; ++wr)
            for (std::size_t wc = wc0; wc <= wc1; ++wc) affected.push_back(wr * nwx + wc);
        }
        // energy of the affected terms as a function of the block assignment
        auto local_energy = [&]() {
          double e = 0.0;
          for (std::size_t v : pix) {
            e += m.unaries[v][x[v]];
            for (std::size_t ei : edges_of[v]) {
              const auto& t = m.pairwise[ei];
              // edges inside the block are visited twice
              const double val = t.table[2 * x[t.u] + x[t.v]];
              e += (in_block[t.u] && in_block[t.v]) ? 0.5 * val : val;
            }
          }
          for (std::size_t wi : affected) e += window_min(wi);
          return e;
        };
        start_assign.clear();
        for (std::size_t v : pix) start_assign.push_back(x[v]);
        const double start = local_energy();
        double best = start;
        best_assign = start_assign;
        auto flip = [&](std::size_t i) {
          const std::size_t v = pix[i];
          const Label nl = 1 - x[v];
          x.set(v, nl);
          if (!K) return;
          const std::size_t vr = v / W, vc = v % W;
          const std::size_t wr0 = vr + 1 >= K ? vr + 1 - K : 0, wc0 = vc + 1 >= K ? vc + 1 - K : 0;
          const std::size_t wr1 = std::min(vr, nwy - 1), wc1 = std::min(vc, nwx - 1);
          for (std::size_t wr = wr0; wr <= wr1; ++wr)
            for (std::size_t wc = wc0; wc <= wc1; ++wc) {
              double* s = &sums[(wr * nwx + wc) * np];
              const std::size_t off = (vr - wr) * K + (vc - wc);
              for (std::size_t y = 0; y < np; ++y) {
                const double w = m.bank.patterns[y].weights[off];
                s[y] += nl ? w : -w;
              }
            }
        };
        const std::size_t n = pix.size();
        for (std::size_t code = 1; code < (std::size_t{1} << n); ++code) {
          // Gray code: flip the lowest set bit of code
          flip(static_cast<std::size_t>(std::countr_zero(code)));
          const double e = local_energy();
          if (e < best - 1e-12) {
            best = e;
            for (std::size_t i = 0; i < n; ++i) best_assign[i] = x[pix[i]];
          }
        }
        // the Gray sequence ends one flip away from the start; restore exactly
        for (std::size_t i = 0; i < n; ++i)
          if (x[pix[i]] != best_assign[i]) flip(i);
        if (best < start - 1e-12) improved = true;
        // drop accumulated round-off from the incremental updates
        for (std::size_t wi : affected) recompute_window(wi / nwx, wi % nwx);
        for (std::size_t v : pix) in_block[v] = 0;
      }
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// restricted local-polytope LP

struct RestrictedLp {
  lp::LinearProgram program;
  double offset = 0.0;  // objective contribution of fixed variables
  Dims dims;
  /// per pixel and label: LP variable index, or npos when the indicator is fixed
  std::vector<std::array<std::size_t, 2>> pixel_var;
  /// value of fixed pixel indicators (0 or 1); meaningful when pixel_var is npos
  std::vector<std::array<double, 2>> pixel_fixed;
  std::size_t free_pixels = 0;
  std::size_t free_windows = 0;

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  /// Relaxed foreground indicator mu_v(1) for each pixel.
  std::vector<double> pixel_values(const lp::Solution& s) const {
    std::vector<double> out(pixel_var.size());
    for (std::size_t v = 0; v < out.size(); ++v)
      out[v] = pixel_var[v][1] == npos ? pixel_fixed[v][1] : s.values[pixel_var[v][1]];
    return out;
  }
};

/// Dynamic range of all finite min-marginal entries.
/// Spread of the min-marginals, ignoring constraint-scale values (>= kBig / 2).
inline double min_marginal_range(const MinMarginals& mm) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto take = [&](double v) {
    if (std::abs(v) < 0.5 * kBig) lo = std::min(lo, v), hi = std::max(hi, v);
  };
  for (const auto& p : mm.pixels)
    for (double v : p) take(v);
  for (const auto& w : mm.windows)
    for (double v : w) take(v);
  return hi > lo ? hi - lo : 0.0;
}

inline double default_restriction_threshold(const MinMarginals& mm) { return 1e-6 * min_marginal_range(mm); }

/// Local-polytope LP in which labels whose min-marginal exceeds the node
/// minimum by more than `threshold` are fixed to 0. Nodes left with one label
/// are substituted out.
inline RestrictedLp build_restricted_lp(const PairwiseModel& m, const MinMarginals& mm, double threshold,
                                        std::size_t max_variables = 50000) {
  if (!(threshold >= 0)) throw std::invalid_argument("build_restricted_lp: threshold must be non-negative");
  if (mm.pixels.size() != m.num_pixels() || mm.windows.size() != m.num_windows())
    throw std::invalid_argument("build_restricted_lp: min-marginals do not match the model");
  constexpr std::size_t npos = RestrictedLp::npos;
  RestrictedLp r;
  r.dims = m.dims;
  auto& P = r.program;
  const std::size_t np = m.num_pixels(), nw = m.num_windows(), ny = m.n_patterns;

  // surviving labels
  std::vector<std::array<bool, 2>> pix_alive(np);
  for (std::size_t v = 0; v < np; ++v) {
    const double mn = std::min(mm.pixels[v][0], mm.pixels[v][1]);
    for (int x = 0; x < 2; ++x) pix_alive[v][x] = mm.pixels[v][x] - mn <= threshold;
    if (!pix_alive[v][0] && !pix_alive[v][1]) throw infeasible_restriction("build_restricted_lp: pixel has no label");
  }
  std::vector<std::vector<std::size_t>> win_alive(nw);
  for (std::size_t h = 0; h < nw; ++h) {
    const double mn = *std::min_element(mm.windows[h].begin(), mm.windows[h].end());
    for (std::size_t y = 0; y < ny; ++y)
      if (mm.windows[h][y] - mn <= threshold) win_alive[h].push_back(y);
    if (win_alive[h].empty()) throw infeasible_restriction("build_restricted_lp: window has no label");
  }

  // node indicator variables (single survivors are constants)
  r.pixel_var.assign(np, {npos, npos});
  r.pixel_fixed.assign(np, {0.0, 0.0});
  for (std::size_t v = 0; v < np; ++v) {
    if (pix_alive[v][0] && pix_alive[v][1]) {
      ++r.free_pixels;
      for (int x = 0; x < 2; ++x) r.pixel_var[v][x] = P.add_variable(m.unaries[v][x], 0.0, 1.0);
      P.add_constraint({{r.pixel_var[v][0], 1.0}, {r.pixel_var[v][1], 1.0}}, lp::Relation::equal, 1.0);
    } else {
      const int x = pix_alive[v][1] ? 1 : 0;
      r.pixel_fixed[v][x] = 1.0;
      r.offset += m.unaries[v][x];
    }
  }
  std::vector<std::vector<std::size_t>> win_var(nw);
  for (std::size_t h = 0; h < nw; ++h) {
    if (win_alive[h].size() == 1) {
      r.offset += m.constants[win_alive[h][0]];
      continue;
    }
    ++r.free_windows;
    std::vector<lp::Term> norm;
    for (std::size_t y : win_alive[h]) {
      win_var[h].push_back(P.add_variable(m.constants[y], 0.0, 1.0));
      norm.push_back({win_var[h].back(), 1.0});
    }
    P.add_constraint(std::move(norm), lp::Relation::equal, 1.0);
  }
  auto guard = [&] {
    if (P.num_vars() > max_variables)
      throw std::length_error("build_restricted_lp: restricted LP exceeds the variable limit");
  };
  guard();

  // links: theta(x, y) = x * w_y
  for (std::size_t l = 0; l < m.num_links(); ++l) {
    const std::size_t v = m.link_pixel(l), h = m.link_window(l), off = m.link_offset(l);
    const bool pv_free = r.pixel_var[v][0] != npos, wh_free = win_alive[h].size() > 1;
    if (!pv_free && !wh_free) {
      if (r.pixel_fixed[v][1] == 1.0) r.offset += m.weight(win_alive[h][0], off);
    } else if (!pv_free) {
      // mu_vh(x*, y) = mu_h(y)
      if (r.pixel_fixed[v][1] == 1.0)
        for (std::size_t k = 0; k < win_alive[h].size(); ++k) P.objective[win_var[h][k]] += m.weight(win_alive[h][k], off);
    } else if (!wh_free) {
      P.objective[r.pixel_var[v][1]] += m.weight(win_alive[h][0], off);
    } else {
      const std::size_t n = win_alive[h].size();
      std::vector<std::array<std::size_t, 2>> mu(n);
      for (std::size_t k = 0; k < n; ++k)
        for (int x = 0; x < 2; ++x) mu[k][x] = P.add_variable(x ? m.weight(win_alive[h][k], off) : 0.0, 0.0, 1.0);
      for (int x = 0; x < 2; ++x) {
        std::vector<lp::Term> t;
        for (std::size_t k = 0; k < n; ++k) t.push_back({mu[k][x], 1.0});
        t.push_back({r.pixel_var[v][x], -1.0});
        P.add_constraint(std::move(t), lp::Relation::equal, 0.0);
      }
      for (std::size_t k = 0; k < n; ++k)
        P.add_constraint({{mu[k][0], 1.0}, {mu[k][1], 1.0}, {win_var[h][k], -1.0}}, lp::Relation::equal, 0.0);
      guard();
    }
  }
  // grid edges
  for (const auto& e : m.grid) {
    const bool uf = r.pixel_var[e.u][0] != npos, vf = r.pixel_var[e.v][0] != npos;
    if (!uf && !vf) {
      r.offset += e.table[2 * (r.pixel_fixed[e.u][1] == 1.0) + (r.pixel_fixed[e.v][1] == 1.0)];
    } else if (!uf || !vf) {
      const std::size_t fixed = uf ? e.v : e.u, freev = uf ? e.u : e.v;
      const int xf = r.pixel_fixed[fixed][1] == 1.0;
      for (int x = 0; x < 2; ++x) {
        const double c = uf ? e.table[2 * x + xf] : e.table[2 * xf + x];
        P.objective[r.pixel_var[freev][x]] += c;
      }
    } else {
      std::array<std::size_t, 4> mu{};
      for (int k = 0; k < 4; ++k) mu[k] = P.add_variable(e.table[k], 0.0, 1.0);
      for (int xu = 0; xu < 2; ++xu)
        P.add_constraint({{mu[2 * xu], 1.0}, {mu[2 * xu + 1], 1.0}, {r.pixel_var[e.u][xu], -1.0}}, lp::Relation::equal,
                         0.0);
      for (int xv = 0; xv < 2; ++xv)
        P.add_constraint({{mu[xv], 1.0}, {mu[2 + xv], 1.0}, {r.pixel_var[e.v][xv], -1.0}}, lp::Relation::equal, 0.0);
      guard();
    }
  }
  return r;
}

}  // namespace curvemrf
