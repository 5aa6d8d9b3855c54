#include <gtest/gtest.h>

#include <random>

#include "curvemrf/inference.hpp"
#include "oracles/brute_force.hpp"
#include "oracles/reference_trws.hpp"

using namespace curvemrf;

namespace {

std::vector<std::size_t> best_windows(const PairwiseModel& p, const BinaryLabeling& x) {
  std::vector<std::size_t> y(p.num_windows());
  for (std::size_t h = 0; h < p.num_windows(); ++h) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < p.n_patterns; ++k) {
      double e = p.constants[k];
      for (std::size_t off = 0; off < p.links_per_window(); ++off)
        e += p.link_cost(h * p.links_per_window() + off, x[p.link_pixel(h * p.links_per_window() + off)], k);
      if (e < best) best = e, y[h] = k;
    }
  }
  return y;
}

std::vector<std::size_t> order_of(const EnergyModel& m, Ordering o) {
  if (o == Ordering::long_chains) return oracles::long_order(m);
  std::vector<std::size_t> id(m.dims.size() + m.locations.size());
  for (std::size_t i = 0; i < id.size(); ++i) id[i] = i;
  return id;
}

}  // namespace

TEST(PairwiseModel, Counts) {
  std::mt19937_64 rng(1);
  auto m = oracles::random_model(rng, 4, 4, 3, 2, false);
  auto p = build_pairwise_model(m);
  EXPECT_EQ(p.num_windows(), 4u);
  EXPECT_EQ(p.num_links(), 36u);
  auto m2 = oracles::random_model(rng, 3, 3, 2, 1, false);
  auto p2 = build_pairwise_model(m2);
  EXPECT_EQ(p2.num_windows(), 4u);
  EXPECT_EQ(p2.num_links(), 16u);
  // every pixel lists exactly the links that touch it
  std::size_t total = 0;
  for (std::size_t v = 0; v < p2.num_pixels(); ++v)
    for (std::size_t k = p2.link_begin[v]; k < p2.link_begin[v + 1]; ++k) {
      EXPECT_EQ(p2.link_pixel(p2.link_ids[k]), v);
      ++total;
    }
  EXPECT_EQ(total, 16u);
}

TEST(PairwiseModel, ZeroWeightsGiveZeroLinks) {
  std::vector<Pattern> flat{Pattern(2, std::vector<double>(4, 0.0), 0.3)};
  auto m = make_energy_model({3, 3}, std::vector<UnaryTable>(9, {0.0, 0.0}), make_bank(2, 2.0, flat));
  // specials carry weights, so check the learned pattern only
  auto p = build_pairwise_model(m);
  for (std::size_t l = 0; l < p.num_links(); ++l) {
    EXPECT_EQ(p.link_cost(l, 0, 3), 0.0);
    EXPECT_EQ(p.link_cost(l, 1, 3), 0.0);
  }
}

TEST(PairwiseModel, MinimizingWindowLabelsRecoversEnergy) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = oracles::random_model(rng, 4, 4, 2, 3, true);
    auto p = build_pairwise_model(m);
    for (unsigned long long mask : {0ULL, 0xffffULL, 0x0f0fULL, 0x1234ULL, 0xa5a5ULL}) {
      auto x = oracles::labeling_from_mask(m.dims, mask);
      auto y = best_windows(p, x);
      EXPECT_NEAR(pairwise_energy(p, x, y), oracles::direct_energy(m, x), 1e-9);
      auto y2 = y;
      y2[0] = (y2[0] + 1) % p.n_patterns;
      EXPECT_GE(pairwise_energy(p, x, y2), pairwise_energy(p, x, y) - 1e-12);
    }
  }
}

TEST(ReverseMessage, Examples) {
  EXPECT_EQ(reverse_message(1.0, {0.0, 0.0}, {0.0, 0.0}, 2.5), 0.0);
  EXPECT_EQ(reverse_message(0.5, {4.0, 0.0}, {1.0, 0.0}, -3.0), -3.0);
  EXPECT_EQ(reverse_message(0.5, {4.0, 0.0}, {1.0, 0.0}, 3.0), 1.0);
}

TEST(Trws, MatchesFullStorageReference) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const bool pw = trial % 2 == 0;
    auto m = oracles::random_model(rng, 5, 4, 2 + trial % 2, 3, pw);
    auto p = build_pairwise_model(m);
    auto g = oracles::generic_from_model(m);
    for (Ordering o : {Ordering::short_chains, Ordering::long_chains}) {
      oracles::ReferenceTrws ref(g, order_of(m, o));
      std::vector<double> ref_lb;
      for (int pass = 0; pass < 15; ++pass) {
        ref.pass();
        ref_lb.push_back(ref.lower_bound());
      }
      TrwsOptions opt;
      opt.passes = 15;
      opt.ordering = o;
      auto res = trws_run(p, opt);
      ASSERT_EQ(res.state.lower_bound_trace.size(), 15u);
      for (std::size_t i = 0; i < 15; ++i)
        EXPECT_NEAR(res.state.lower_bound_trace[i], ref_lb[i], 1e-9 * std::max(1.0, std::abs(ref_lb[i])));
      for (std::size_t v = 0; v < p.num_pixels(); ++v) {
        auto b = ref.belief(v);
        EXPECT_NEAR(res.min_marginals.pixels[v][0], b[0], 1e-9);
        EXPECT_NEAR(res.min_marginals.pixels[v][1], b[1], 1e-9);
      }
      for (std::size_t h = 0; h < p.num_windows(); ++h) {
        auto b = ref.belief(p.num_pixels() + h);
        for (std::size_t y = 0; y < p.n_patterns; ++y) EXPECT_NEAR(res.min_marginals.windows[h][y], b[y], 1e-9);
      }
    }
  }
}

TEST(Trws, BoundIsMonotoneAndBelowOptimum) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 8; ++trial) {
    auto m = oracles::random_model(rng, 4, 4, 2 + trial % 2, 4, trial % 2 == 0);
    auto best = oracles::exhaustive_minimum(m);
    auto p = build_pairwise_model(m);
    for (Ordering o : {Ordering::short_chains, Ordering::long_chains}) {
      TrwsOptions opt;
      opt.passes = 40;
      opt.ordering = o;
      auto res = trws_run(p, opt);
      const auto& tr = res.state.lower_bound_trace;
      for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_GE(tr[i], tr[i - 1] - 1e-9);
      EXPECT_LE(tr.back(), best.energy + 1e-9);
      auto x = round_min_marginals(res.min_marginals);
      EXPECT_GE(total_energy(m, x), best.energy - 1e-9);
    }
  }
}

TEST(Trws, ExactOnChains) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const Dims d{12, 1};
    std::vector<UnaryTable> un(12);
    for (auto& t : un) t = {u(rng), u(rng)};
    auto m = make_energy_model(d, un, PatternBank{}, length_prior_edges(d, 0.7, 4));
    auto best = oracles::exhaustive_minimum(m);
    TrwsOptions opt;
    opt.passes = 5;
    auto res = trws_run(build_pairwise_model(m), opt);
    EXPECT_NEAR(res.state.lower_bound_trace.back(), best.energy, 1e-9);
    EXPECT_NEAR(total_energy(m, round_min_marginals(res.min_marginals)), best.energy, 1e-9);
  }
}

TEST(Trws, AutoStopAndCancel) {
  std::mt19937_64 rng(6);
  auto m = oracles::random_model(rng, 5, 5, 2, 3, true);
  auto p = build_pairwise_model(m);
  TrwsOptions opt;
  opt.passes = 1000;
  opt.auto_stop = true;
  auto res = trws_run(p, opt);
  EXPECT_LT(res.state.passes, 1000u);
  EXPECT_GE(res.state.passes, 11u);

  std::size_t calls = 0;
  opt.auto_stop = false;
  opt.on_pass = [&](std::size_t pass, double lb) {
    ++calls;
    EXPECT_TRUE(std::isfinite(lb));
    return pass < 3;
  };
  auto cut = trws_run(p, opt);
  EXPECT_EQ(cut.state.passes, 3u);
  EXPECT_EQ(calls, 3u);
  opt.passes = 0;
  EXPECT_THROW(trws_run(p, opt), std::invalid_argument);
}

TEST(Trws, StorageHoldsTwoNumbersPerLink) {
  std::mt19937_64 rng(7);
  auto m = oracles::random_model(rng, 6, 6, 3, 5, false);
  auto p = build_pairwise_model(m);
  TrwsOptions opt;
  opt.passes = 1;
  auto res = trws_run(p, opt);
  EXPECT_EQ(res.state.window_to_pixel.size(), p.num_links());
  EXPECT_EQ(res.state.reverse_base.size(), p.num_links());
}

TEST(Bp, MatchesReference) {
  std::mt19937_64 rng(8);
  auto m = oracles::random_model(rng, 4, 4, 2, 3, true);
  auto p = build_pairwise_model(m);
  auto g = oracles::generic_from_model(m);
  oracles::ReferenceTrws ref(g, order_of(m, Ordering::short_chains), true);
  for (int i = 0; i < 5; ++i) ref.pass();
  auto mm = bp_run(p, 5);
  for (std::size_t v = 0; v < p.num_pixels(); ++v) {
    auto b = ref.belief(v);
    EXPECT_NEAR(mm.pixels[v][0], b[0], 1e-9 * std::max(1.0, std::abs(b[0])));
    EXPECT_NEAR(mm.pixels[v][1], b[1], 1e-9 * std::max(1.0, std::abs(b[1])));
  }
}

TEST(Rounding, TiesGoToBackground) {
  MinMarginals mm;
  mm.dims = {3, 1};
  mm.pixels = {{1.0, 1.0}, {2.0, 1.0}, {0.0, 3.0}};
  auto x = round_min_marginals(mm);
  EXPECT_EQ(x[0], 0);
  EXPECT_EQ(x[1], 1);
  EXPECT_EQ(x[2], 0);
  mm.pixels = {{1.0, 1.0 - 1e-14}, {1e6, 1e6 - 1e-4}, {1e6, 1e6 - 1e-2}};
  x = round_min_marginals(mm);
  EXPECT_EQ(x[0], 0);
  EXPECT_EQ(x[1], 0);
  EXPECT_EQ(x[2], 1);
  std::vector<double> rel{0.5, 0.50001, 0.2};
  auto r = round_relaxed({3, 1}, rel);
  EXPECT_EQ(r[0], 0);
  EXPECT_EQ(r[1], 1);
  EXPECT_EQ(r[2], 0);
}

TEST(Rounding, LevelsSweepUnconstrainedDifferences) {
  MinMarginals mm;
  mm.dims = {5, 1};
  mm.pixels = {{0.0, kBig}, {kBig, 0.0}, {0.3, 0.0}, {0.0, 0.2}, {1.0, 1.0}};
  const auto levels = rounding_levels(mm, 3);
  ASSERT_EQ(levels.size(), 2u);
  EXPECT_LT(levels[0], -0.2);
  EXPECT_GT(levels[0], -0.2 - 1e-12);
  EXPECT_DOUBLE_EQ(levels[1], 0.3);
  EXPECT_EQ(rounding_levels(mm, 0).size(), 0u);
  auto lo = round_min_marginals(mm, levels[0]);
  EXPECT_EQ(std::vector<Label>(lo.labels().begin(), lo.labels().end()), (std::vector<Label>{0, 1, 1, 1, 1}));
  auto hi = round_min_marginals(mm, levels.back());
  EXPECT_EQ(std::vector<Label>(hi.labels().begin(), hi.labels().end()), (std::vector<Label>{0, 1, 0, 0, 0}));
}

TEST(Rounding, RangeIgnoresConstraintValues) {
  MinMarginals mm;
  mm.dims = {2, 1};
  mm.pixels = {{0.0, kBig}, {0.5, 2.0}};
  mm.windows = {{1.0, -1.0}};
  EXPECT_DOUBLE_EQ(min_marginal_range(mm), 3.0);
  EXPECT_DOUBLE_EQ(default_restriction_threshold(mm), 3e-6);
}

TEST(BlockIcm, NeverIncreasesEnergy) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = oracles::random_model(rng, 9, 8, 3, 4, trial % 2 == 0);
    auto x0 = oracles::labeling_from_mask(m.dims, rng());
    auto x = block_icm(m, x0);
    EXPECT_LE(total_energy(m, x), total_energy(m, x0) + 1e-12);
    // a second run from the result changes nothing
    EXPECT_EQ(block_icm(m, x), x);
  }
}

TEST(BlockIcm, SmallImagesReachGlobalOptimum) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t w = trial % 2 ? 3 : 2, h = trial % 2 ? 2 : 3;
    auto m = oracles::random_model(rng, w, h, 2, 3, true);
    auto best = oracles::exhaustive_minimum(m);
    for (unsigned long long start : {0ULL, 63ULL, 21ULL}) {
      auto x = block_icm(m, oracles::labeling_from_mask(m.dims, start));
      EXPECT_NEAR(total_energy(m, x), best.energy, 1e-12);
    }
  }
}

TEST(BlockIcm, FixesAnIsolatedFlip) {
  const Dims d{8, 8};
  std::vector<UnaryTable> un(64, {0.0, 1.0});
  auto m = make_energy_model(d, un, PatternBank{}, length_prior_edges(d, 0.5, 4));
  BinaryLabeling x(8, 8);
  x.set(4, 4, 1);
  EXPECT_EQ(block_icm(m, x).count_foreground(), 0u);
  EXPECT_THROW(block_icm(m, x, 0), std::invalid_argument);
}

TEST(RestrictedLp, InfiniteThresholdBracketsOptimum) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = oracles::random_model(rng, 3, 3, 2, 2, trial % 2 == 0);
    auto p = build_pairwise_model(m);
    TrwsOptions opt;
    opt.passes = 50;
    auto res = trws_run(p, opt);
    auto r = build_restricted_lp(p, res.min_marginals, std::numeric_limits<double>::infinity());
    EXPECT_EQ(r.free_pixels, 9u);
    auto s = lp::solve(r.program);
    ASSERT_EQ(s.status, lp::Status::optimal);
    const double relaxed = s.objective_value + r.offset;
    auto best = oracles::exhaustive_minimum(m);
    EXPECT_LE(relaxed, best.energy + 1e-7);
    EXPECT_GE(relaxed, res.state.lower_bound_trace.back() - 1e-7);
    auto x = round_relaxed(m.dims, r.pixel_values(s));
    EXPECT_GE(total_energy(m, x), best.energy - 1e-9);
  }
}

TEST(RestrictedLp, ZeroThresholdFixesEverything) {
  // strong unaries make every min-marginal unique
  const Dims d{3, 3};
  std::vector<UnaryTable> un(9);
  for (std::size_t i = 0; i < 9; ++i) un[i] = i % 3 == 0 ? UnaryTable{5.0, 0.0} : UnaryTable{0.0, 5.0};
  auto m = make_energy_model(d, un, make_bank(2, 2.0, {}));
  auto p = build_pairwise_model(m);
  auto res = trws_run(p, {});
  auto r = build_restricted_lp(p, res.min_marginals, 0.0);
  EXPECT_EQ(r.program.num_vars(), 0u);
  EXPECT_EQ(r.free_pixels, 0u);
  auto x = round_min_marginals(res.min_marginals);
  auto s = lp::solve(r.program);
  ASSERT_EQ(s.status, lp::Status::optimal);
  EXPECT_NEAR(s.objective_value + r.offset, total_energy(m, x), 1e-9);
  EXPECT_EQ(round_relaxed(d, r.pixel_values(s)), x);
}

TEST(RestrictedLp, RejectsBadInput) {
  std::mt19937_64 rng(12);
  auto m = oracles::random_model(rng, 3, 3, 2, 1, false);
  auto p = build_pairwise_model(m);
  auto mm = trws_run(p, {}).min_marginals;
  EXPECT_THROW(build_restricted_lp(p, mm, -1.0), std::invalid_argument);
  auto bad = mm;
  bad.pixels[0] = {std::nan(""), std::nan("")};
  EXPECT_THROW(build_restricted_lp(p, bad, 1.0), infeasible_restriction);
  EXPECT_THROW(build_restricted_lp(p, mm, 1e9, 3), std::length_error);
}
