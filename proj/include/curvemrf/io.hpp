#pragma once

// File formats: binary PGM/PPM, pattern-bank JSON, CSV traces, base64.

#include <boost/beast/core/detail/base64.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "learning.hpp"
#include "shapes.hpp"
#include "tasks.hpp"

namespace curvemrf::io {

using nlohmann::json;

class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// numbers

/// Shortest round-trip decimal form.
inline std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("fmt: conversion failed");
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Netpbm

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline std::size_t read_header_number(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw format_error("netpbm: malformed header");
  return v;
}

inline void read_netpbm(std::istream& in, const char* magic, std::size_t channels, std::size_t& w, std::size_t& h,
                        std::vector<std::uint8_t>& data) {
  char m[2] = {0, 0};
  in.read(m, 2);
  if (!in || m[0] != magic[0] || m[1] != magic[1]) throw format_error(std::string("netpbm: expected ") + magic);
  w = read_header_number(in);
  h = read_header_number(in);
  const std::size_t maxval = read_header_number(in);
  if (w == 0 || h == 0) throw format_error("netpbm: empty image");
  if (maxval == 0 || maxval > 255) throw format_error("netpbm: only 8-bit images are supported");
  in.get();  // single whitespace before the raster
  data.resize(w * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(in.gcount()) != data.size()) throw format_error("netpbm: truncated raster");
  if (maxval != 255)
    for (auto& b : data) b = static_cast<std::uint8_t>((b * 255 + maxval / 2) / maxval);
}

}  // namespace detail

inline GrayImage read_pgm(std::istream& in) {
  GrayImage g;
  detail::read_netpbm(in, "P5", 1, g.width, g.height, g.data);
  return g;
}

inline void write_pgm(std::ostream& out, const GrayImage& g) {
  out << "P5\n" << g.width << ' ' << g.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size()));
}

inline ColorImage read_ppm(std::istream& in) {
  ColorImage img;
  std::vector<std::uint8_t> raw;
  detail::read_netpbm(in, "P6", 3, img.width, img.height, raw);
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    for (int k = 0; k < 3; ++k) img.pixels[i][k] = raw[3 * i + k] / 255.0;
  return img;
}

inline void write_ppm(std::ostream& out, const ColorImage& img) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (const auto& p : img.pixels)
    for (double v : p) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

inline GrayImage labeling_to_gray(const BinaryLabeling& x) {
  GrayImage g{x.width(), x.height(), {}};
  for (Label l : x.labels()) g.data.push_back(l ? 255 : 0);
  return g;
}

/// Values >= 128 are foreground.
inline BinaryLabeling gray_to_labeling(const GrayImage& g) {
  std::vector<Label> l(g.data.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = g.data[i] >= 128 ? 1 : 0;
  return BinaryLabeling({g.width, g.height}, std::move(l));
}

/// 0 = background-constrained, 255 = foreground-constrained, anything else free.
inline SeedMask gray_to_seeds(const GrayImage& g) {
  SeedMask m({g.width, g.height});
  for (std::size_t i = 0; i < g.data.size(); ++i)
    m.tags[i] = g.data[i] == 255 ? SeedTag::foreground : g.data[i] == 0 ? SeedTag::background : SeedTag::free;
  return m;
}

inline GrayImage seeds_to_gray(const SeedMask& m) {
  GrayImage g{m.dims.width, m.dims.height, {}};
  for (SeedTag t : m.tags) g.data.push_back(t == SeedTag::foreground ? 255 : t == SeedTag::background ? 0 : 128);
  return g;
}

// ---------------------------------------------------------------------------
// files

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

template <class F>
std::string to_bytes(F&& writer) {
  std::ostringstream ss(std::ios::binary);
  writer(ss);
  return ss.str();
}

inline GrayImage load_pgm(const std::filesystem::path& p) {
  std::istringstream in(read_file(p), std::ios::binary);
  return read_pgm(in);
}

inline ColorImage load_ppm(const std::filesystem::path& p) {
  std::istringstream in(read_file(p), std::ios::binary);
  return read_ppm(in);
}

// ---------------------------------------------------------------------------
// base64

inline std::string base64_encode(std::string_view bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.size() % 4 != 0) throw format_error("base64: length is not a multiple of 4");
  const std::size_t pad = clean.size() - clean.find_last_not_of('=') - 1;
  if (pad > 2) throw format_error("base64: bad padding");
  for (std::size_t i = 0; i + pad < clean.size(); ++i)
    if (!std::isalnum(static_cast<unsigned char>(clean[i])) && clean[i] != '+' && clean[i] != '/')
      throw format_error("base64: invalid character");
  std::string out(b64::decoded_size(clean.size()), '\0');
  const std::size_t written = b64::decode(out.data(), clean.data(), clean.size()).first;
  out.resize(written);
  return out;
}

// ---------------------------------------------------------------------------
// pattern bank JSON

inline json bank_to_json(const PatternBank& b) {
  json j;
  j["side"] = b.side;
  j["f_max"] = b.f_max;
  j["cutoff_index"] = b.cutoff_index;
  j["fg_index"] = b.fg_index;
  j["bg_index"] = b.bg_index;
  j["patterns"] = json::array();
  for (const auto& p : b.patterns) j["patterns"].push_back({{"weights", p.weights}, {"constant", p.constant}});
  return j;
}

inline PatternBank bank_from_json(const json& j) {
  try {
    PatternBank b;
    b.side = j.at("side").get<std::size_t>();
    b.f_max = j.at("f_max").get<double>();
    b.cutoff_index = j.at("cutoff_index").get<std::size_t>();
    b.fg_index = j.at("fg_index").get<std::size_t>();
    b.bg_index = j.at("bg_index").get<std::size_t>();
    if (b.side < 2) throw format_error("bank: side must be at least 2");
    for (const auto& p : j.at("patterns")) {
      auto w = p.at("weights").get<std::vector<double>>();
      if (w.size() != b.side * b.side) throw format_error("bank: weights must have side^2 entries");
      b.patterns.emplace_back(b.side, std::move(w), p.at("constant").get<double>());
    }
    for (std::size_t i : {b.cutoff_index, b.fg_index, b.bg_index})
      if (i >= b.patterns.size()) throw format_error("bank: special index out of range");
    return b;
  } catch (const json::exception& e) {
    throw format_error(std::string("bank: ") + e.what());
  }
}

inline std::string bank_to_string(const PatternBank& b) { return bank_to_json(b).dump(2) + "\n"; }

inline PatternBank load_bank(const std::filesystem::path& p) {
  try {
    return bank_from_json(json::parse(read_file(p)));
  } catch (const json::parse_error& e) {
    throw format_error(std::string("bank: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV and sidecars

inline std::string error_trace_csv(const ErrorTrace& t) {
  std::string s = "iteration,train_error,test_error\n";
  for (std::size_t i = 0; i < t.training_error.size(); ++i)
    s += std::to_string(i) + "," + fmt(t.training_error[i]) + "," + fmt(t.test_error[i]) + "\n";
  return s;
}

inline std::string lower_bound_csv(std::span<const double> lb) {
  std::string s = "pass,lower_bound\n";
  for (std::size_t i = 0; i < lb.size(); ++i) s += std::to_string(i + 1) + "," + fmt(lb[i]) + "\n";
  return s;
}

inline json shape_to_json(const ContinuousShape& shape) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) {
          return {{"kind", "circle"}, {"radius", s.radius}, {"cx", s.cx}, {"cy", s.cy}};
        } else if constexpr (std::is_same_v<T, FourierShape>) {
          return {{"kind", "fourier"}, {"cx", s.cx}, {"cy", s.cy}, {"a0", s.a0},
                  {"a", std::vector<double>(s.a.begin(), s.a.end())},
                  {"b", std::vector<double>(s.b.begin(), s.b.end())}};
        } else {
          return {{"kind", "quadratic"}, {"frame_angle", s.frame_angle}, {"a", s.a}, {"b", s.b}, {"c", s.c},
                  {"ox", s.ox}, {"oy", s.oy}, {"t0", s.t0}, {"t1", s.t1}};
        }
      },
      shape);
}

inline json shape_sample_json(const ShapeSample& s) {
  json j = shape_to_json(s.shape);
  j["true_total_cost"] = s.true_total_cost;
  j["true_length"] = s.true_length;
  j["boundary_count"] = s.boundary_count;
  return j;
}

}  // namespace curvemrf::io
