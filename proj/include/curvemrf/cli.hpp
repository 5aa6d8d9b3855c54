#pragma once

// Command-line front end. Every command except `serve` writes a manifest.json
// holding the fully resolved argument list; `rerun` replays it.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "inference.hpp"
#include "io.hpp"
#include "learning.hpp"
#include "service.hpp"
#include "tasks.hpp"

namespace curvemrf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNoOutputDir = 2;
constexpr int kExitPortBusy = 3;
constexpr std::size_t kMaxSide = 160;

class exit_with : public std::runtime_error {
 public:
  exit_with(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

namespace detail {

struct InferenceFlags {
  std::size_t passes = 300;
  std::string ordering = "short";
  std::string gamma = "trws";
  std::size_t icm_block = 6;
  std::size_t rounding_levels = 5;
  bool restricted_lp = false;
  double lp_threshold = -1.0;  // negative: default rule
  bool dump_lp = false;
  bool allow_large = false;

  InferenceSettings settings() const {
    InferenceSettings s;
    s.passes = passes;
    s.ordering = ordering == "long" ? Ordering::long_chains : Ordering::short_chains;
    s.gamma = gamma == "bp" ? GammaRule::bp : GammaRule::trws;
    s.icm_block = icm_block;
    s.rounding_levels = rounding_levels;
    s.restricted_lp = restricted_lp;
    if (lp_threshold >= 0) s.lp_threshold = lp_threshold;
    return s;
  }
};

inline void add_inference_flags(CLI::App* sub, InferenceFlags& f) {
  sub->add_option("--passes", f.passes, "TRW-S passes")->check(CLI::PositiveNumber);
  sub->add_option("--ordering", f.ordering, "node ordering")->check(CLI::IsMember({"short", "long"}));
  sub->add_option("--gamma", f.gamma, "message weights: trws or bp")->check(CLI::IsMember({"trws", "bp"}));
  sub->add_option("--icm-block", f.icm_block, "Block-ICM block size (0 disables)")->check(CLI::Range(0, 12));
  sub->add_option("--rounding-levels", f.rounding_levels, "extra min-marginal rounding levels (0: plain rounding only)");
  sub->add_flag("--restricted-lp", f.restricted_lp, "refine with the restricted local-polytope LP");
  sub->add_option("--lp-threshold", f.lp_threshold, "min-marginal gap above which labels are pruned");
  sub->add_flag("--dump-lp", f.dump_lp, "write the restricted LP as restricted.lp");
  sub->add_flag("--allow-large", f.allow_large, "accept images larger than 160x160");
}

inline void check_size(Dims d, bool allow_large) {
  if (!allow_large && (d.width > kMaxSide || d.height > kMaxSide))
    throw std::invalid_argument("image is " + std::to_string(d.width) + "x" + std::to_string(d.height) +
                                "; images above 160x160 need --allow-large");
}

/// Resolved option values of a subcommand, in declaration order.
inline std::vector<std::string> resolved_args(const CLI::App* sub) {
  std::vector<std::string> args{sub->get_name()};
  for (const CLI::Option* o : sub->get_options()) {
    if (o->get_lnames().empty() || o->get_lnames()[0] == "help") continue;
    const std::string name = "--" + o->get_lnames()[0];
    if (o->get_items_expected_max() == 0) {
      if (o->count() > 0) args.push_back(name);
      continue;
    }
    std::vector<std::string> vals = o->results();
    if (vals.empty()) {
      const std::string d = o->get_default_str();
      if (d.empty()) continue;
      vals = {d};
    }
    // vector defaults are captured as "[a,b]"
    if (vals.size() == 1 && vals[0].size() >= 2 && vals[0].front() == '[' && vals[0].back() == ']') {
      std::string inner = vals[0].substr(1, vals[0].size() - 2);
      vals.clear();
      std::stringstream ss(inner);
      for (std::string item; std::getline(ss, item, ',');) vals.push_back(item);
    }
    for (const auto& v : vals) {
      args.push_back(name);
      args.push_back(v);
    }
  }
  return args;
}

inline json manifest(const CLI::App* sub) {
  json config = json::object();
  const auto args = resolved_args(sub);
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string key = args[i].substr(2);
    if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
      if (config.contains(key)) {
        if (!config[key].is_array()) config[key] = json::array({config[key]});
        config[key].push_back(args[i + 1]);
      } else {
        config[key] = args[i + 1];
      }
      ++i;
    } else {
      config[key] = true;
    }
  }
  return {{"command", sub->get_name()}, {"args", args}, {"config", config}};
}

inline fs::path require_out_dir(const std::string& out) {
  if (out.empty() || !fs::is_directory(out)) throw exit_with(kExitNoOutputDir, "output directory does not exist: " + out);
  return fs::path(out);
}

inline void write_json(const fs::path& p, const json& j) { io::write_file(p, j.dump(2) + "\n"); }

inline std::string pgm_bytes(const io::GrayImage& g) {
  return io::to_bytes([&](std::ostream& o) { io::write_pgm(o, g); });
}

inline json nullable(double v) { return std::isfinite(v) ? json(v) : json(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// commands

struct TrainArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t side = 6;
  std::size_t patterns = 0;
  std::size_t samples = 2000;
  std::size_t test_samples = 2000;
  std::size_t orientations = 0;  // 0: derived from --patterns, else 8
  std::size_t curvature_bins = 3;
  std::size_t iterations = 10;
  double f_max = kDefaultFMax;
  double curvature_power = 1.0;
  bool alg2 = false;
  std::size_t alg2_shapes = 100;
  bool alg2_weights = false;
  std::size_t alg2_iterations = 10;
};

inline int cmd_train(const TrainArgs& a, const json& manifest, std::ostream& out) {
  const fs::path dir = detail::require_out_dir(a.out);
  TrainingConfig cfg;
  cfg.side = a.side;
  cfg.n_samples = a.samples;
  cfg.n_test_samples = a.test_samples;
  cfg.n_orientations = a.orientations != 0 ? a.orientations : 8;
  cfg.n_curvature_bins = a.curvature_bins;
  cfg.max_iterations = a.iterations;
  cfg.f_max = a.f_max;
  cfg.seed = a.seed;
  cfg.curvature_power = a.curvature_power;
  if (a.patterns != 0) {
    if (a.orientations == 0) {
      if (a.patterns % a.curvature_bins != 0)
        throw std::invalid_argument("--patterns must be a multiple of --curvature-bins");
      cfg.n_orientations = a.patterns / a.curvature_bins;
    } else if (a.patterns != cfg.n_learned()) {
      throw std::invalid_argument("--patterns must equal --orientations x --curvature-bins");
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = generate_samples(cfg, cfg.n_samples, cfg.seed);
  const auto test = generate_samples(cfg, cfg.n_test_samples, test_seed(cfg.seed));
  auto res = train_alg1(train, test, cfg);
  PatternBank bank = res.bank;
  std::string alg2_csv;
  if (a.alg2) {
    const auto shapes = sample_shapes("fourier", a.alg2_shapes, {100, 100}, cfg.f_max, cfg.seed + 1);
    std::vector<BinaryLabeling> labelings;
    std::vector<double> totals;
    for (const auto& s : shapes) {
      labelings.push_back(s.labeling);
      totals.push_back(s.true_total_cost);
    }
    Alg2Options o;
    o.refit_weights = a.alg2_weights;
    o.max_iterations = a.alg2_iterations;
    auto r2 = train_alg2(labelings, totals, bank, o);
    bank = r2.bank;
    alg2_csv = "iteration,objective\n";
    for (std::size_t i = 0; i < r2.objective.size(); ++i) alg2_csv += std::to_string(i) + "," + io::fmt(r2.objective[i]) + "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::write_file(dir / "bank.json", io::bank_to_string(bank));
  io::write_file(dir / "trace.csv", io::error_trace_csv(res.trace));
  if (a.alg2) io::write_file(dir / "alg2_trace.csv", alg2_csv);
  detail::write_json(dir / "manifest.json", manifest);
  out << "patterns " << bank.size() << " (" << cfg.n_learned() << " learned)  iterations " << res.iterations
      << "  train error " << res.trace.training_error.front() << " -> " << res.trace.training_error.back()
      << "  test error " << res.trace.test_error.front() << " -> " << res.trace.test_error.back() << "  " << secs
      << " s\n";
  return kExitOk;
}

struct EvalArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::string bank;
  std::string shapes = "circles";
  std::size_t n = 50;
  std::size_t size = 100;
};

inline int cmd_eval_approx(const EvalArgs& a, const json& manifest, std::ostream& out) {
  const fs::path dir = detail::require_out_dir(a.out);
  const auto bank = io::load_bank(a.bank);
  const auto shapes = sample_shapes(a.shapes, a.n, {a.size, a.size}, bank.f_max, a.seed);
  const auto s = evaluate_approximation(bank, shapes);
  std::string csv = "index,true_cost,model_cost,true_length,true_per_length,model_per_length,relative_error\n";
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& r = s.rows[i];
    csv += std::to_string(i) + "," + io::fmt(r.true_cost) + "," + io::fmt(r.model_cost) + "," + io::fmt(r.true_length) +
           "," + io::fmt(r.true_cost / r.true_length) + "," + io::fmt(r.model_cost / r.true_length) + "," +
           io::fmt(r.relative_error) + "\n";
  }
  json summary{{"shapes", a.shapes},
               {"n", a.n},
               {"correlation_total", detail::nullable(s.correlation_total)},
               {"correlation_per_length", detail::nullable(s.correlation_per_length)},
               {"mean_signed_relative_error", s.mean_signed_error},
               {"mean_abs_relative_error", s.mean_abs_error}};
  io::write_file(dir / "approx.csv", csv);
  detail::write_json(dir / "summary.json", summary);
  detail::write_json(dir / "manifest.json", manifest);
  out << summary.dump() << "\n";
  return kExitOk;
}

struct InpaintArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::string bank;
  std::string mask;
  detail::InferenceFlags inf;
};

inline int cmd_inpaint(const InpaintArgs& a, const json& manifest, std::ostream& out) {
  const fs::path dir = detail::require_out_dir(a.out);
  const auto bank = io::load_bank(a.bank);
  const auto seeds = io::gray_to_seeds(io::load_pgm(a.mask));
  detail::check_size(seeds.dims, a.inf.allow_large);
  const auto model = make_energy_model(seeds.dims, inpainting_unaries(seeds), bank);
  const auto r = run_pipeline(model, a.inf.settings());
  const double lb = r.lower_bound_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : r.lower_bound_trace.back();
  json result{{"energy", r.energy},
              {"rounded_energy", r.rounded_energy},
              {"lower_bound", detail::nullable(lb)},
              {"passes", r.passes},
              {"constraints_satisfied", satisfies_seeds(r.labeling, seeds)},
              {"foreground_pixels", r.labeling.count_foreground()}};
  if (r.lp_bound) result["restricted_lp_bound"] = *r.lp_bound;
  if (r.lp_energy) result["restricted_lp_energy"] = *r.lp_energy;
  if (!r.lp_note.empty()) result["restricted_lp_note"] = r.lp_note;
  if (a.inf.dump_lp) {
    const auto pm = build_pairwise_model(model);
    const auto s = a.inf.settings();
    const double thr = s.lp_threshold.value_or(default_restriction_threshold(r.min_marginals));
    try {
      const auto rl = build_restricted_lp(pm, r.min_marginals, thr, s.lp_max_variables);
      io::write_file(dir / "restricted.lp", io::to_bytes([&](std::ostream& o) { lp::write_lp_text(rl.program, o); }));
    } catch (const std::length_error& e) {
      result["restricted_lp_dump"] = std::string("skipped: ") + e.what();
    }
  }
  io::write_file(dir / "labeling.pgm", detail::pgm_bytes(io::labeling_to_gray(r.labeling)));
  io::write_file(dir / "lb.csv", io::lower_bound_csv(r.lower_bound_trace));
  io::write_file(dir / "min_marginals.pgm",
                 detail::pgm_bytes({seeds.dims.width, seeds.dims.height, min_marginal_map(r.min_marginals)}));
  detail::write_json(dir / "result.json", result);
  detail::write_json(dir / "manifest.json", manifest);
  out << result.dump() << "\n";
  return kExitOk;
}

struct SegmentArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::string bank;
  std::string image;
  std::string strokes;
  std::string truth;
  std::vector<double> lambda{1.0};
  std::size_t components = 10;
  detail::InferenceFlags inf;
};

inline ColorImage overlay(const ColorImage& img, const BinaryLabeling& x) {
  ColorImage o = img;
  for (std::size_t i = 0; i < o.pixels.size(); ++i)
    if (x[i]) o.pixels[i] = {0.5 * o.pixels[i][0] + 0.5, 0.5 * o.pixels[i][1], 0.5 * o.pixels[i][2]};
  return o;
}

inline int cmd_segment(const SegmentArgs& a, const json& manifest, std::ostream& out) {
  const fs::path dir = detail::require_out_dir(a.out);
  const auto bank = io::load_bank(a.bank);
  const auto img = io::load_ppm(a.image);
  const auto seeds = io::gray_to_seeds(io::load_pgm(a.strokes));
  if (seeds.dims != img.dims()) throw std::invalid_argument("strokes and image sizes differ");
  detail::check_size(img.dims(), a.inf.allow_large);
  std::optional<BinaryLabeling> truth;
  if (!a.truth.empty()) {
    truth = io::gray_to_labeling(io::load_pgm(a.truth));
    if (truth->dims() != img.dims()) throw std::invalid_argument("truth and image sizes differ");
  }
  json runs = json::array();
  std::vector<std::size_t> boundaries;
  for (std::size_t k = 0; k < a.lambda.size(); ++k) {
    SegmentationOptions so;
    so.lambda = a.lambda[k];
    so.components = a.components;
    so.seed = a.seed;
    so.inference = a.inf.settings();
    const auto r = segment_image(img, seeds, bank, so);
    const auto& p = r.pipeline;
    const std::string suffix = a.lambda.size() > 1 ? "_" + std::to_string(k) : "";
    io::write_file(dir / ("labeling" + suffix + ".pgm"), detail::pgm_bytes(io::labeling_to_gray(p.labeling)));
    io::write_file(dir / ("overlay" + suffix + ".ppm"),
                   io::to_bytes([&](std::ostream& o) { io::write_ppm(o, overlay(img, p.labeling)); }));
    io::write_file(dir / ("lb" + suffix + ".csv"), io::lower_bound_csv(p.lower_bound_trace));
    io::write_file(dir / ("min_marginals" + suffix + ".pgm"),
                   detail::pgm_bytes({img.width, img.height, min_marginal_map(p.min_marginals)}));
    const double lb = p.lower_bound_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : p.lower_bound_trace.back();
    json run{{"lambda", so.lambda},
             {"energy", p.energy},
             {"lower_bound", detail::nullable(lb)},
             {"boundary_count", boundary_count(p.labeling)},
             {"foreground_pixels", p.labeling.count_foreground()},
             {"log_likelihood_fg", r.foreground.log_likelihood.back()},
             {"log_likelihood_bg", r.background.log_likelihood.back()}};
    if (truth) {
      std::size_t agree = 0;
      for (std::size_t i = 0; i < img.pixels.size(); ++i) agree += p.labeling[i] == (*truth)[i];
      run["accuracy"] = static_cast<double>(agree) / static_cast<double>(img.pixels.size());
    }
    boundaries.push_back(boundary_count(p.labeling));
    runs.push_back(run);
  }
  // boundary length should shrink as lambda grows; report violations instead of failing
  json flagged = json::array();
  std::vector<std::size_t> order(a.lambda.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a.lambda[x] < a.lambda[y]; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (boundaries[order[i]] > boundaries[order[i - 1]]) flagged.push_back(a.lambda[order[i]]);
  json result{{"runs", runs}, {"boundary_monotone", flagged.empty()}, {"flagged_lambdas", flagged},
              {"prior_mechanism", "unaries divided by lambda; lambda = 0 disables the prior"}};
  detail::write_json(dir / "result.json", result);
  detail::write_json(dir / "manifest.json", manifest);
  out << result.dump() << "\n";
  return kExitOk;
}

struct BaselineArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::string scenario = "line";
  int length = 40;
  int radius = 20;
};

inline int cmd_baseline(const BaselineArgs& a, const json& manifest, std::ostream& out) {
  const fs::path dir = detail::require_out_dir(a.out);
  if (a.length < 1 || a.radius < 1) throw std::invalid_argument("--length and --radius must be positive");
  std::optional<DirectedEdgeGraph> g;
  PathEnd s, t;
  if (a.scenario == "line") {
    g.emplace(a.length + 1, 11);
    s = {{0, 5}, {}};
    t = {{a.length, 5}, {}};
  } else if (a.scenario == "line-quarter-slope") {
    if (a.length % 4 != 0) throw std::invalid_argument("--length must be a multiple of 4 for line-quarter-slope");
    g.emplace(a.length + 1, a.length / 4 + 1);
    s = {{0, 0}, {}};
    t = {{a.length, a.length / 4}, {}};
  } else if (a.scenario == "quarter-circle") {
    g.emplace(a.radius + 1, a.radius + 1);
    s = {{0, a.radius}, find_offset(1, 0)};
    t = {{a.radius, 0}, find_offset(0, -1)};
  } else {
    throw std::invalid_argument("unknown scenario " + a.scenario);
  }
  const auto p = baseline_optimal_path(*g, s, t);
  std::string csv = "x,y\n";
  for (const auto& n : p.nodes) csv += std::to_string(n.x) + "," + std::to_string(n.y) + "\n";
  json result{{"scenario", a.scenario}, {"cost", p.cost}, {"edge_elements", p.offsets.size()}};
  if (a.scenario != "quarter-circle") result["staircase_cost"] = path_cost(*g, staircase_offsets(s.node, t.node));
  io::write_file(dir / "path.csv", csv);
  detail::write_json(dir / "result.json", result);
  detail::write_json(dir / "manifest.json", manifest);
  out << result.dump() << "\n";
  return kExitOk;
}

struct ServeArgs {
  std::string bank;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::size_t queue_depth = 8;
  std::size_t max_passes = 2000;
  std::uint64_t seed = 1;
};

inline int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  ServiceOptions o;
  o.queue_depth = a.queue_depth;
  o.max_passes = a.max_passes;
  o.static_dir = a.static_dir;
  o.seed = a.seed;
  SegmentationService svc(io::load_bank(a.bank), o);
  if (!svc.bind(a.host, a.port)) {
    err << "cannot bind " << a.host << ":" << a.port << "\n";
    return kExitPortBusy;
  }
  out << "listening on http://" << a.host << ":" << a.port << "\n" << std::flush;
  return svc.listen() ? kExitOk : kExitError;
}

// ---------------------------------------------------------------------------
// entry point

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Curvature priors from learned soft patterns"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "learn a pattern bank");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--seed", ta.seed);
  train->add_option("--K", ta.side, "window side")->check(CLI::Range(4, 16));
  train->add_option("--patterns", ta.patterns, "learned patterns (0: orientations x bins)");
  train->add_option("--samples", ta.samples)->check(CLI::PositiveNumber);
  train->add_option("--test-samples", ta.test_samples)->check(CLI::PositiveNumber);
  train->add_option("--orientations", ta.orientations);
  train->add_option("--curvature-bins", ta.curvature_bins)->check(CLI::PositiveNumber);
  train->add_option("--iterations", ta.iterations);
  train->add_option("--f-max", ta.f_max)->check(CLI::PositiveNumber);
  train->add_option("--curvature-power", ta.curvature_power)->check(CLI::PositiveNumber);
  train->add_flag("--alg2", ta.alg2, "refit on whole Fourier shapes afterwards");
  train->add_option("--alg2-shapes", ta.alg2_shapes)->check(CLI::PositiveNumber);
  train->add_flag("--alg2-weights", ta.alg2_weights, "let the whole-shape refit change weights too");
  train->add_option("--alg2-iterations", ta.alg2_iterations);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval-approx", "compare model and true total curvature cost");
  eval->add_option("--out", ea.out)->required();
  eval->add_option("--seed", ea.seed);
  eval->add_option("--bank", ea.bank)->required();
  eval->add_option("--shapes", ea.shapes)->check(CLI::IsMember({"circles", "fourier"}));
  eval->add_option("--n", ea.n)->check(CLI::Range(2, 100000));
  eval->add_option("--size", ea.size)->check(CLI::Range(20, 1000));

  InpaintArgs ia;
  auto* inpaint = app.add_subcommand("inpaint", "complete a partially constrained shape");
  inpaint->add_option("--out", ia.out)->required();
  inpaint->add_option("--seed", ia.seed);
  inpaint->add_option("--bank", ia.bank)->required();
  inpaint->add_option("--mask", ia.mask, "seed mask PGM (0 bg, 255 fg, 128 free)")->required();
  detail::add_inference_flags(inpaint, ia.inf);

  SegmentArgs sa;
  auto* segment = app.add_subcommand("segment", "seeded color segmentation");
  segment->add_option("--out", sa.out)->required();
  segment->add_option("--seed", sa.seed);
  segment->add_option("--bank", sa.bank)->required();
  segment->add_option("--image", sa.image, "color PPM")->required();
  segment->add_option("--strokes", sa.strokes, "seed mask PGM")->required();
  segment->add_option("--truth", sa.truth, "ground-truth PGM for accuracy");
  segment->add_option("--lambda", sa.lambda, "prior strength; repeat for a sweep")->check(CLI::NonNegativeNumber);
  segment->add_option("--components", sa.components)->check(CLI::PositiveNumber);
  detail::add_inference_flags(segment, sa.inf);

  BaselineArgs ba;
  auto* baseline = app.add_subcommand("baseline", "16-connected shortest-path curvature baseline");
  baseline->add_option("--out", ba.out)->required();
  baseline->add_option("--seed", ba.seed);
  baseline->add_option("--scenario", ba.scenario)->check(CLI::IsMember({"line", "line-quarter-slope", "quarter-circle"}));
  baseline->add_option("--length", ba.length);
  baseline->add_option("--radius", ba.radius);

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "HTTP job service for interactive segmentation");
  serve->add_option("--bank", sv.bank)->required();
  serve->add_option("--host", sv.host);
  serve->add_option("--port", sv.port)->check(CLI::Range(0, 65535));
  serve->add_option("--static", sv.static_dir, "directory served at /");
  serve->add_option("--queue-depth", sv.queue_depth)->check(CLI::PositiveNumber);
  serve->add_option("--max-passes", sv.max_passes)->check(CLI::PositiveNumber);
  serve->add_option("--seed", sv.seed);

  std::string manifest_path, rerun_out;
  auto* rerun = app.add_subcommand("rerun", "replay a run from its manifest");
  rerun->add_option("--manifest", manifest_path)->required();
  rerun->add_option("--out", rerun_out, "override the output directory");

  std::vector<std::string> argv{"curvemrf"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<const char*> cargv;
  for (const auto& s : argv) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (train->parsed()) return cmd_train(ta, detail::manifest(train), out);
    if (eval->parsed()) return cmd_eval_approx(ea, detail::manifest(eval), out);
    if (inpaint->parsed()) return cmd_inpaint(ia, detail::manifest(inpaint), out);
    if (segment->parsed()) return cmd_segment(sa, detail::manifest(segment), out);
    if (baseline->parsed()) return cmd_baseline(ba, detail::manifest(baseline), out);
    if (serve->parsed()) return cmd_serve(sv, out, err);
    if (rerun->parsed()) {
      const auto m = json::parse(io::read_file(manifest_path));
      auto replay = m.at("args").get<std::vector<std::string>>();
      if (!rerun_out.empty())
        for (std::size_t i = 0; i + 1 < replay.size(); ++i)
          if (replay[i] == "--out") replay[i + 1] = rerun_out;
      return run(replay, out, err);
    }
  } catch (const exit_with& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace curvemrf::cli
