#pragma once

// Batch runner behind the CLI. A run is (subcommand, params, seed); everything written to
// results.json is a function of those three, so reproduce() can replay it. Wall time and the
// worker count live in timing.json instead.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "decoupling.hpp"
#include "energy.hpp"
#include "expsum.hpp"
#include "incidence.hpp"
#include "moments.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "vdc.hpp"

namespace smallcap::harness {

using nlohmann::json;

enum class Subcommand { Moments, Decouple, Kakeya, Energy, Vdc, OracleCheck };

inline const char* to_string(Subcommand s) {
  switch (s) {
    case Subcommand::Moments: return "moments";
    case Subcommand::Decouple: return "decouple";
    case Subcommand::Kakeya: return "kakeya";
    case Subcommand::Energy: return "energy";
    case Subcommand::Vdc: return "vdc";
    case Subcommand::OracleCheck: return "oracle-check";
  }
  return "?";
}

inline Subcommand subcommand_from_string(const std::string& s) {
  for (auto c : {Subcommand::Moments, Subcommand::Decouple, Subcommand::Kakeya, Subcommand::Energy, Subcommand::Vdc,
                 Subcommand::OracleCheck})
    if (s == to_string(c)) return c;
  throw InvalidArgument("unknown subcommand '" + s + "'");
}

// usage errors; line is 1-based, 0 when unknown
struct ConfigError : InvalidArgument {
  int line = 0;
  ConfigError(const std::string& msg, int l)
      : InvalidArgument(l > 0 ? "config line " + std::to_string(l) + ": " + msg : "config: " + msg), line(l) {}
};

struct ExperimentConfig {
  Subcommand subcommand = Subcommand::Moments;
  json params = json::object();
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned workers = 0;  // 0: default_workers()
  std::string raw;       // source text, for line numbers
};

inline int line_of_offset(const std::string& text, std::size_t off) {
  off = std::min(off, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(off), '\n'));
}

inline int line_of_key(const std::string& text, const std::string& key) {
  auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

// Top level: {"subcommand": ..., "seed": ..., "out": ..., "params": {...}}; all optional.
inline ExperimentConfig parse_config(const std::string& text, Subcommand sub) {
  ExperimentConfig c;
  c.subcommand = sub;
  c.raw = text;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line_of_offset(text, e.byte ? e.byte - 1 : 0));
  }
  if (!j.is_object()) throw ConfigError("top level must be an object", 1);
  for (auto& [k, v] : j.items()) {
    if (k == "subcommand") {
      if (!v.is_string() || v.get<std::string>() != to_string(sub))
        throw ConfigError("subcommand does not match the command line (" + std::string(to_string(sub)) + ")",
                          line_of_key(text, k));
    } else if (k == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer", line_of_key(text, k));
      c.seed = v.get<std::uint64_t>();
    } else if (k == "out") {
      if (!v.is_string()) throw ConfigError("out must be a string", line_of_key(text, k));
      c.out = v.get<std::string>();
    } else if (k == "params") {
      if (!v.is_object()) throw ConfigError("params must be an object", line_of_key(text, k));
      c.params = v;
    } else {
      throw ConfigError("unknown key '" + k + "'", line_of_key(text, k));
    }
  }
  return c;
}

// Reads params with defaults, range checks and line numbers; the filled-in copy is what
// results.json records.
class ParamReader {
 public:
  ParamReader(const json& p, const std::string& raw) : p_(p), raw_(raw) {}

  void allow(std::initializer_list<const char*> keys) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto& [k, v] : p_.items())
      if (!ok.count(k)) fail(k, "unknown key '" + k + "'");
  }
  bool has(const std::string& k) const { return p_.contains(k); }

  double num(const std::string& k, double def, double lo = -1e300, double hi = 1e300) {
    double v = def;
    if (has(k)) {
      if (!p_[k].is_number()) fail(k, k + " must be a number");
      v = p_[k].get<double>();
    }
    if (!(v >= lo && v <= hi) || !std::isfinite(v)) fail(k, k + " = " + fmt(v) + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
    eff_[k] = v;
    return v;
  }
  long long integer(const std::string& k, long long def, long long lo, long long hi) {
    long long v = def;
    if (has(k)) {
      if (!p_[k].is_number_integer()) fail(k, k + " must be an integer");
      v = p_[k].get<long long>();
    }
    if (v < lo || v > hi) fail(k, k + " = " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    eff_[k] = v;
    return v;
  }
  bool flag(const std::string& k, bool def) {
    bool v = def;
    if (has(k)) {
      if (!p_[k].is_boolean()) fail(k, k + " must be true or false");
      v = p_[k].get<bool>();
    }
    eff_[k] = v;
    return v;
  }
  std::string choice(const std::string& k, const std::string& def, std::initializer_list<const char*> opts) {
    std::string v = def;
    if (has(k)) {
      if (!p_[k].is_string()) fail(k, k + " must be a string");
      v = p_[k].get<std::string>();
    }
    bool ok = false;
    std::string all;
    for (auto o : opts) {
      ok = ok || v == o;
      all += std::string(all.empty() ? "" : ", ") + o;
    }
    if (!ok) fail(k, k + " = '" + v + "' is not one of {" + all + "}");
    eff_[k] = v;
    return v;
  }
  std::string text(const std::string& k, const std::string& def) {
    std::string v = def;
    if (has(k)) {
      if (!p_[k].is_string()) fail(k, k + " must be a string");
      v = p_[k].get<std::string>();
    }
    eff_[k] = v;
    return v;
  }
  std::vector<double> nums(const std::string& k, std::vector<double> def, double lo, double hi, bool required = false) {
    if (required && !has(k)) fail(k, "missing required list '" + k + "'");
    std::vector<double> v = std::move(def);
    if (has(k)) {
      if (!p_[k].is_array()) fail(k, k + " must be a list");
      v.clear();
      for (auto& e : p_[k]) {
        if (!e.is_number()) fail(k, k + " must hold numbers");
        v.push_back(e.get<double>());
      }
    }
    if (v.empty()) fail(k, k + " must not be empty");
    for (double x : v)
      if (!(x >= lo && x <= hi)) fail(k, k + " entry " + fmt(x) + " outside [" + fmt(lo) + ", " + fmt(hi) + "]");
    eff_[k] = v;
    return v;
  }
  std::vector<long long> ints(const std::string& k, std::vector<long long> def, long long lo, long long hi,
                              bool required = false) {
    if (required && !has(k)) fail(k, "missing required list '" + k + "'");
    std::vector<long long> v = std::move(def);
    if (has(k)) {
      if (!p_[k].is_array()) fail(k, k + " must be a list");
      v.clear();
      for (auto& e : p_[k]) {
        if (!e.is_number_integer()) fail(k, k + " must hold integers");
        v.push_back(e.get<long long>());
      }
    }
    if (v.empty()) fail(k, k + " must not be empty");
    for (auto x : v)
      if (x < lo || x > hi) fail(k, k + " entry " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    eff_[k] = v;
    return v;
  }
  // optional threshold: absent means no check line
  std::optional<double> threshold(const std::string& k) {
    if (!has(k)) return std::nullopt;
    return num(k, 0);
  }

  [[noreturn]] void fail(const std::string& k, const std::string& msg) const { throw ConfigError(msg, line_of_key(raw_, k)); }
  const json& effective() const { return eff_; }

 private:
  static std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  }
  const json& p_;
  const std::string& raw_;
  json eff_ = json::object();
};

struct Check {
  std::string name;
  double measured = 0, limit = 0;
  std::string relation = "<=";
  bool pass = false;
  std::string note;
};

inline Check check_le(std::string name, double measured, double limit, std::string note = "") {
  return {std::move(name), measured, limit, "<=", measured <= limit, std::move(note)};
}
inline Check check_ge(std::string name, double measured, double limit, std::string note = "") {
  return {std::move(name), measured, limit, ">=", measured >= limit, std::move(note)};
}

struct Outcome {
  json results = json::object();
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<Check> checks;
  json params = json::object();  // effective parameters
  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return CounterRng::mix(seed ^ CounterRng::mix(a * 0x9E3779B97F4A7C15ull + b));
}

// ---------------- moments ----------------

inline Outcome run_moments(ParamReader& P, std::uint64_t seed) {
  P.allow({"curve", "n", "N", "beta", "tau", "p", "a", "method", "samples", "normalized", "slope_min", "slope_max", "r2_min"});
  Outcome o;
  auto curve = P.choice("curve", "moment", {"moment", "parabola"});
  const int n = curve == "parabola" ? 2 : static_cast<int>(P.integer("n", 3, 2, 6));
  auto Ns = P.ints("N", {}, 1, 1 << 20, true);
  const double beta = P.num("beta", 0, 0, 20);
  const double tau = P.num("tau", 0, -1e6, 1e6);
  const double p = P.num("p", n * (n + 1) - 2 * beta, 1e-9, 200);
  auto coeffs = P.choice("a", "ones", {"ones", "random"});
  auto method = P.choice("method", "exact", {"exact", "mc"});
  const auto samples = static_cast<std::size_t>(P.integer("samples", 200000, 1, 1LL << 34));
  const bool normalized = P.flag("normalized", false);
  auto smin = P.threshold("slope_min"), smax = P.threshold("slope_max"), r2 = P.threshold("r2_min");
  o.params = P.effective();

  o.columns = {"N", "value", "error_bound", "norm"};
  json scan = json::array();
  std::vector<std::pair<double, double>> xy;
  for (auto N : Ns) {
    auto cs = curve == "parabola" ? CurveSpec::parabola() : CurveSpec::moment(n);
    auto spec = coeffs == "ones" ? ExpSumSpec::ones(cs, N) : ExpSumSpec::random_phases(cs, N, mix_seed(seed, 1, static_cast<std::uint64_t>(N)));
    auto dom = beta > 0 ? SlabDomain::slab(n, tau, std::pow(static_cast<double>(N), -beta)) : SlabDomain::full(n);
    auto q = method == "exact" ? MomentQuery::exact(spec, p, dom, normalized)
                               : MomentQuery::monte_carlo(spec, p, dom, samples, mix_seed(seed, 2, static_cast<std::uint64_t>(N)), normalized);
    auto e = compute_moment(q);
    scan.push_back({{"N", N}, {"value", e.value}, {"error_bound", e.error_bound}, {"method", method}, {"backend", e.backend}});
    o.rows.push_back({static_cast<double>(N), e.value, e.error_bound, e.norm()});
    xy.emplace_back(static_cast<double>(N), e.value);
  }
  o.results["scan"] = scan;
  if (xy.size() >= 2) {
    auto f = fit_growth_exponent(xy);
    o.results["fit"] = to_json(f);
    if (smin) o.checks.push_back(check_ge("slope_min", f.slope, *smin));
    if (smax) o.checks.push_back(check_le("slope_max", f.slope, *smax));
    if (r2) o.checks.push_back(check_ge("r2_min", f.r_squared, *r2));
  } else if (smin || smax || r2) {
    P.fail("N", "a slope threshold needs at least two N values");
  }
  return o;
}

// ---------------- decoupling ----------------

inline Outcome run_decouple(ParamReader& P, std::uint64_t seed) {
  P.allow({"mode", "L", "m", "p", "r", "N", "seeds", "min_factor", "max_ratio"});
  Outcome o;
  auto mode = P.choice("mode", "sharpness", {"sharpness", "refined"});
  auto Ls = P.ints("L", {4, 8, 16}, 2, 64);
  const int m = static_cast<int>(P.integer("m", 4, 1, 64));
  const double p = P.num("p", 4, 2, 64);
  if (mode == "sharpness") {
    const double r = P.num("r", p, 2, 64);
    auto thr = P.threshold("min_factor");
    o.params = P.effective();
    o.columns = {"L", "lower_bound", "target", "ratio"};
    json rows = json::array();
    double worst = 1e300;
    for (auto L : Ls) {
      auto F = build_extremal(flat_box_partition(static_cast<int>(L), m), ExtremalMode::IndicatorLike);
      auto d = dec_lower_bound(F, p, r);
      const double target = std::pow(static_cast<double>(L), 1 - 1 / p - 1 / r);
      rows.push_back({{"L", L}, {"dec", to_json(d)}, {"target", target}});
      o.rows.push_back({static_cast<double>(L), d.lower_bound, target, d.lower_bound / target});
      worst = std::min(worst, d.lower_bound / target);
    }
    o.results["rows"] = rows;
    o.results["min_ratio"] = worst;
    if (thr) o.checks.push_back(check_ge("min_factor", worst, *thr));
  } else {
    const bool given = P.has("N");
    auto Nlist = given ? P.ints("N", {}, 1, 1 << 12) : std::vector<long long>{};
    const auto seeds = P.integer("seeds", 10, 1, 10000);
    auto thr = P.threshold("max_ratio");
    o.params = P.effective();
    o.columns = {"L", "N", "max_ratio", "mean_ratio"};
    json rows = json::array();
    double worst = 0;
    for (auto L : Ls) {
      auto Ns = given ? Nlist : std::vector<long long>{1, L, L * L};
      for (auto N : Ns) {
        if (N > L * L) P.fail("N", "N = " + std::to_string(N) + " exceeds L^2 for L = " + std::to_string(L));
        double mx = 0, mean = 0;
        for (long long s = 0; s < seeds; ++s) {
          auto fam = make_packet_family(static_cast<int>(L), static_cast<int>(N), mix_seed(seed, static_cast<std::uint64_t>(L * 4096 + N), static_cast<std::uint64_t>(s)), m);
          auto g = refined_flat_gain(fam, p);
          mx = std::max(mx, g.ratio());
          mean += g.ratio() / static_cast<double>(seeds);
        }
        rows.push_back({{"L", L}, {"N", N}, {"max_ratio", mx}, {"mean_ratio", mean}});
        o.rows.push_back({static_cast<double>(L), static_cast<double>(N), mx, mean});
        worst = std::max(worst, mx);
      }
    }
    o.results["rows"] = rows;
    o.results["max_ratio"] = worst;
    if (thr) o.checks.push_back(check_le("max_ratio", worst, *thr));
  }
  return o;
}

// ---------------- kakeya ----------------

struct StructuredConstant {
  double value = 0;  // max over r >= 4NW of |Q_r| r^2 W / (|T| |T_max|)
  int r = 0;
  bool vacuous = true;
  std::size_t tubes = 0;
  int max_richness = 0;
  bool audit = false;
};

inline TubeFamily bush_family(double delta, double alpha, int N, std::uint64_t seed) {
  TubeOptions opt;
  const double W = std::pow(delta, 2 * alpha - 2);
  const int K = std::max(1, static_cast<int>(std::floor(W / 2)));
  CounterRng rng(seed, 0xB05E);
  for (int k = 0; k < K; ++k) opt.focal_points.push_back({0.25 + 0.5 * rng.uniform(), 0.25 + 0.5 * rng.uniform()});
  return generate_structured_tubes(delta, alpha, N, seed, opt);
}

inline StructuredConstant structured_constant(const TubeFamily& f) {
  StructuredConstant c;
  std::vector<const TubeFamily*> v{&f};
  auto h = count_rich_cubes<2>(v, f.delta);
  c.tubes = f.size();
  c.max_richness = h.max_richness(0);
  c.audit = audit_structure(f).pass;
  const auto& S = f.structure;
  const int r0 = static_cast<int>(std::ceil(4 * S.N * S.W - 1e-9));
  for (int r = r0; r <= c.max_richness; ++r) {
    double q = static_cast<double>(h.at_least(r)) * r * r * S.W / (static_cast<double>(f.size()) * S.t_max);
    c.vacuous = false;
    if (q > c.value) c.value = q, c.r = r;
  }
  return c;
}

struct VinogradovConstant {
  double value = 0;  // max over r of |Q_r| / rhs(r)
  int r = 0;
  std::array<std::size_t, 3> sizes{0, 0, 0};
  bool audit = false;
  std::vector<std::string> audit_failures;
  json per_r = json::array();
};

// right side of the trilinear bound with geometric-mean N, M
inline double trilinear_rhs(double N, double M, double r, double delta, double alpha, double W) {
  const double e = (4 - 6 * alpha) / (3 * alpha - 1);
  return std::pow(N * M / (r * r * delta), e) * std::pow(N * M / r, 3) * W;
}

inline VinogradovConstant vinogradov_constant(const PlateFamily& pf) {
  VinogradovConstant c;
  auto a = audit_structure(pf);
  c.audit = a.pass;
  c.audit_failures = a.failures;
  auto s1 = pf.subfamily(0), s2 = pf.subfamily(1), s3 = pf.subfamily(2);
  c.sizes = {s1.size(), s2.size(), s3.size()};
  std::vector<const PlateFamily*> v{&s1, &s2, &s3};
  auto h = count_rich_cubes<3>(v, pf.delta);
  const auto& S = pf.structure;
  const double N = std::cbrt(static_cast<double>(S.Ni[0]) * S.Ni[1] * S.Ni[2]);
  const double M = std::cbrt(static_cast<double>(S.M[0]) * S.M[1] * S.M[2]);
  const int rmax = std::min({h.max_richness(0), h.max_richness(1), h.max_richness(2)});
  for (int r = 1; r <= rmax; r *= 2) {
    const double Q = static_cast<double>(h.at_least(r));
    const double rhs = trilinear_rhs(N, M, r, pf.delta, S.alpha, S.W);
    c.per_r.push_back({{"r", r}, {"Q", Q}, {"rhs", rhs}, {"ratio", Q / rhs}});
    if (Q / rhs > c.value) c.value = Q / rhs, c.r = r;
  }
  return c;
}

inline double spread(const std::vector<double>& v) {
  double lo = 1e300, hi = 0;
  for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  if (hi == 0) return 1;
  return lo > 0 ? hi / lo : INFINITY;
}

inline Outcome run_kakeya(ParamReader& P, std::uint64_t seed) {
  P.allow({"mode", "delta", "directions", "m", "seeds", "pixel_factor", "raster_seeds", "alpha", "N", "M", "Ni",
           "max_constant", "raster_tolerance", "max_spread"});
  Outcome o;
  auto mode = P.choice("mode", "linear", {"linear", "bilinear", "structured", "vinogradov"});
  if (mode == "linear") {
    auto deltas = P.nums("delta", {1.0 / 64}, 1.0 / 1024, 0.25);
    const int ndir = static_cast<int>(P.integer("directions", 64, 1, 4096));
    auto ms = P.ints("m", {1, 2, 4}, 1, 64);
    const auto seeds = P.integer("seeds", 100, 1, 100000);
    const double pf = P.num("pixel_factor", 8, 1, 64);
    const auto rseeds = P.integer("raster_seeds", 5, 0, 100000);
    auto cmax = P.threshold("max_constant");
    auto rtol = P.threshold("raster_tolerance");
    o.params = P.effective();
    o.columns = {"delta", "m", "max_constant", "max_raster_gap"};
    double worst = 0, gap = 0;
    json rows = json::array();
    for (double d : deltas)
      for (auto m : ms) {
        double c = 0, g = 0;
        for (long long s = 0; s < seeds; ++s) {
          auto f = generate_random_tubes(d, ndir, static_cast<int>(m), mix_seed(seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(s)));
          const double l2 = kakeya_l2_overlap(f);
          c = std::max(c, l2 / (std::log(1 / d) * static_cast<double>(m) * f.total_volume()));
          if (s < rseeds) g = std::max(g, std::abs(kakeya_l2_raster(f, d / pf) - l2) / l2);
        }
        rows.push_back({{"delta", d}, {"m", m}, {"max_constant", c}, {"max_raster_gap", g}});
        o.rows.push_back({d, static_cast<double>(m), c, g});
        worst = std::max(worst, c);
        gap = std::max(gap, g);
      }
    o.results["rows"] = rows;
    o.results["max_constant"] = worst;
    o.results["max_raster_gap"] = gap;
    if (cmax) o.checks.push_back(check_le("max_constant", worst, *cmax));
    if (rtol) o.checks.push_back(check_le("raster_tolerance", gap, *rtol));
  } else if (mode == "bilinear") {
    auto deltas = P.nums("delta", {1.0 / 64}, 1.0 / 1024, 0.25);
    const int ndir = static_cast<int>(P.integer("directions", 24, 1, 4096));
    auto ms = P.ints("m", {3}, 1, 64);
    const auto seeds = P.integer("seeds", 50, 1, 100000);
    auto cmax = P.threshold("max_constant");
    o.params = P.effective();
    o.columns = {"delta", "m", "max_constant"};
    json rows = json::array();
    double worst = 0;
    for (double d : deltas)
      for (auto m : ms) {
        double c = 0;
        for (long long s = 0; s < seeds; ++s) {
          // two transverse direction windows, half a radian wide, a quarter radian apart
          auto f1 = generate_random_tubes(d, ndir, static_cast<int>(m), mix_seed(seed, 11, static_cast<std::uint64_t>(s)), 0.0, 0.5, true);
          auto f2 = generate_random_tubes(d, ndir, static_cast<int>(m), mix_seed(seed, 12, static_cast<std::uint64_t>(s)),
                                          std::numbers::pi / 2 - 0.25, 0.5, true);
          std::vector<const TubeFamily*> v{&f1, &f2};
          auto h = count_rich_cubes<2>(v, d);
          const double T = static_cast<double>(f1.size()) * static_cast<double>(f2.size());
          for (int r1 = 1; r1 <= h.max_richness(0); r1 *= 2)
            for (int r2 = 1; r2 <= h.max_richness(1); r2 *= 2)
              c = std::max(c, static_cast<double>(h.at_least({r1, r2, 0})) * r1 * r2 / T);
        }
        rows.push_back({{"delta", d}, {"m", m}, {"max_constant", c}});
        o.rows.push_back({d, static_cast<double>(m), c});
        worst = std::max(worst, c);
      }
    o.results["rows"] = rows;
    o.results["max_constant"] = worst;
    if (cmax) o.checks.push_back(check_le("max_constant", worst, *cmax));
  } else if (mode == "structured") {
    auto alphas = P.nums("alpha", {0.5, 0.75}, 0.5, 1);
    auto deltas = P.nums("delta", {1.0 / 32, 1.0 / 64}, 1.0 / 256, 0.25);
    const int N = static_cast<int>(P.integer("N", 1, 1, 1 << 16));
    auto smax = P.threshold("max_spread");
    o.params = P.effective();
    o.columns = {"alpha", "delta", "tubes", "max_richness", "constant", "r"};
    json rows = json::array();
    for (double a : alphas) {
      std::vector<double> cs;
      bool vac = true, audit = true;
      for (double d : deltas) {
        auto f = bush_family(d, a, N, mix_seed(seed, static_cast<std::uint64_t>(a * 1000), static_cast<std::uint64_t>(1 / d)));
        auto c = structured_constant(f);
        rows.push_back({{"alpha", a}, {"delta", d}, {"tubes", c.tubes}, {"max_richness", c.max_richness}, {"constant", c.value},
                        {"r", c.r}, {"vacuous", c.vacuous}, {"audit", c.audit}});
        o.rows.push_back({a, d, static_cast<double>(c.tubes), static_cast<double>(c.max_richness), c.value, static_cast<double>(c.r)});
        cs.push_back(c.value);
        vac = vac && c.vacuous;
        audit = audit && c.audit;
      }
      std::ostringstream nm;
      nm << "alpha=" << a;
      o.checks.push_back(check_ge("audit " + nm.str(), audit ? 1 : 0, 1));
      if (smax) o.checks.push_back(check_le("spread " + nm.str(), spread(cs), *smax, vac ? "vacuous: no cube reaches r >= 4NW" : ""));
    }
    o.results["rows"] = rows;
  } else {
    auto deltas = P.nums("delta", {1.0 / 16, 1.0 / 32}, 1.0 / 128, 0.25);
    const double alpha = P.num("alpha", 0.5, 0.34, 1);
    auto M = P.ints("M", {2, 2, 2}, 1, 1 << 12);
    auto Ni = P.ints("Ni", {1, 1, 1}, 1, 1 << 12);
    if (M.size() != 3) P.fail("M", "M needs three entries");
    if (Ni.size() != 3) P.fail("Ni", "Ni needs three entries");
    auto smax = P.threshold("max_spread");
    o.params = P.effective();
    o.columns = {"delta", "S1", "S2", "S3", "constant", "r"};
    json rows = json::array();
    std::vector<double> cs;
    bool audit = true;
    for (double d : deltas) {
      auto pf = generate_vinogradov_family(d, alpha, {static_cast<int>(M[0]), static_cast<int>(M[1]), static_cast<int>(M[2])},
                                           {static_cast<int>(Ni[0]), static_cast<int>(Ni[1]), static_cast<int>(Ni[2])},
                                           mix_seed(seed, 31, static_cast<std::uint64_t>(1 / d)));
      auto c = vinogradov_constant(pf);
      rows.push_back({{"delta", d}, {"sizes", c.sizes}, {"constant", c.value}, {"r", c.r}, {"per_r", c.per_r},
                      {"audit", c.audit}, {"audit_failures", c.audit_failures}});
      o.rows.push_back({d, static_cast<double>(c.sizes[0]), static_cast<double>(c.sizes[1]), static_cast<double>(c.sizes[2]), c.value,
                        static_cast<double>(c.r)});
      cs.push_back(c.value);
      audit = audit && c.audit;
    }
    o.results["rows"] = rows;
    o.checks.push_back(check_ge("audit", audit ? 1 : 0, 1));
    if (smax) o.checks.push_back(check_le("spread", spread(cs), *smax));
  }
  return o;
}

// ---------------- energy ----------------

inline Outcome run_energy(ParamReader& P, std::uint64_t) {
  P.allow({"delta", "tolerance", "points", "slope_max"});
  Outcome o;
  const double tol = P.num("tolerance", 1e-9, 0, 1);
  EnergyOptions opt;
  opt.tolerance = tol;
  if (P.has("points")) {
    auto path = P.text("points", "");
    o.params = P.effective();
    std::ifstream in(path);
    if (!in) P.fail("points", "cannot open point file '" + path + "'");
    auto pts = read_points(in);
    auto e = additive_energy(pts, opt);
    o.results["energy"] = to_json(e);
    o.columns = {"size", "energy", "near_tolerance"};
    o.rows.push_back({static_cast<double>(e.set_size), static_cast<double>(e.count), static_cast<double>(e.near_tolerance)});
    return o;
  }
  auto deltas = P.nums("delta", {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}, 1.0 / 256, 0.5);
  auto smax = P.threshold("slope_max");
  o.params = P.effective();
  if (deltas.size() < 3) P.fail("delta", "the scan needs at least 3 delta values");
  auto s = energy_exponent_scan(deltas, opt);
  o.results = to_json(s);
  o.columns = {"delta", "size", "energy", "near_tolerance"};
  for (auto& p : s.points)
    o.rows.push_back({p.delta, static_cast<double>(p.size), static_cast<double>(p.energy), static_cast<double>(p.near_tolerance)});
  if (smax) o.checks.push_back(check_le("slope_max", s.fit.slope, *smax));
  return o;
}

// ---------------- vdc ----------------

inline Outcome run_vdc(ParamReader& P, std::uint64_t) {
  P.allow({"t", "N_min", "N_max", "max_ratio", "grid"});
  Outcome o;
  const double t = P.num("t", 1e6, 1, 1e12);
  const double lo = P.num("N_min", std::cbrt(t), 1, 1e7);
  const double hi = P.num("N_max", std::pow(t, 5.0 / 12), 1, 1e7);
  if (lo > hi) P.fail("N_min", "N_min exceeds N_max");
  auto rmax = P.threshold("max_ratio");
  const bool grid = P.flag("grid", true);
  o.params = P.effective();
  auto rows = vdc_scan(t, lo, hi);
  if (rows.empty()) P.fail("N_min", "no dyadic N in [N_min, N_max]");
  o.columns = {"N", "abs_sum", "classical", "bdg", "new", "ratio"};
  json js = json::array();
  double worst = 0;
  for (auto& r : rows) {
    js.push_back(to_json(r));
    o.rows.push_back({static_cast<double>(r.N), r.abs_sum, r.classical, r.bdg, r.fresh, r.abs_sum / r.fresh});
    worst = std::max(worst, r.abs_sum / r.fresh);
  }
  o.results["rows"] = js;
  o.results["max_ratio"] = worst;
  if (rmax) o.checks.push_back(check_le("max_ratio", worst, *rmax));
  if (grid) {
    // new <= bdg on a 10 x 10 grid of (N, varpi), varpi in [1, 2]
    double gw = 0;
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        const long long N = 1LL << (4 + i * 2);
        const double w = 1 + j / 9.0;
        auto s = PhaseSpec::bound_only(N, 4, std::pow(static_cast<double>(N), -w));
        gw = std::max(gw, new_fourth_bound(s) / bdg_bound(s));
      }
    o.results["grid_max_new_over_bdg"] = gw;
    o.checks.push_back(check_le("new_le_bdg", gw, 1));
  }
  return o;
}

// ---------------- oracle suite ----------------

inline Outcome run_oracle_check(ParamReader& P, std::uint64_t seed) {
  P.allow({"cases"});
  const int cases = static_cast<int>(P.integer("cases", 10, 1, 1000));
  Outcome o;
  o.params = P.effective();
  o.columns = {"case", "primary", "oracle", "relative_gap"};
  json reps = json::array();
  auto add = [&](const std::string& name, double primary, double orac, double tol) {
    oracle::OracleReport r{primary, orac, name};
    reps.push_back(oracle::to_json(r));
    o.rows.push_back({static_cast<double>(o.rows.size()), primary, orac, r.relative_gap()});
    o.checks.push_back(check_le(name, r.relative_gap(), tol));
  };
  // quadrature against the exact backends
  {
    auto s = ExpSumSpec::ones(CurveSpec::parabola(), 8);
    auto e = exact_torus_moment(MomentQuery::exact(s, 4, SlabDomain::full(2)));
    add("quadrature parabola N=8 p=4", e.value, oracle::dense_quadrature_moment(s.materialize(), 4, SlabDomain::full(2)).value, 1e-6);
  }
  for (int c = 0; c < cases; ++c) {
    CounterRng rng(seed, 0x0C + static_cast<std::uint64_t>(c));
    const long long N = 3 + static_cast<long long>(rng.below(6));
    const double p = 2 + 2 * static_cast<double>(rng.below(3));
    auto s = ExpSumSpec::random_phases(CurveSpec::parabola(), N, mix_seed(seed, 5, static_cast<std::uint64_t>(c)));
    auto d = rng.uniform() < 0.5 ? SlabDomain::full(2) : SlabDomain::slab(2, rng.uniform(-1, 1), rng.uniform(0.1, 1));
    auto e = exact_torus_moment(MomentQuery::exact(s, p, d));
    add("quadrature random #" + std::to_string(c), e.value, oracle::dense_quadrature_moment(s.materialize(), p, d).value, 1e-6);
  }
  // energy
  for (int c = 0; c < cases; ++c) {
    CounterRng rng(seed, 0xE0 + static_cast<std::uint64_t>(c));
    std::set<Vec3> set;
    const auto n = 5 + rng.below(30);
    while (set.size() < n) set.insert({static_cast<double>(rng.below(6)), static_cast<double>(rng.below(6)), static_cast<double>(rng.below(3))});
    std::vector<Vec3> pts(set.begin(), set.end());
    add("energy lattice #" + std::to_string(c), static_cast<double>(additive_energy(pts, 0.0).count),
        static_cast<double>(oracle::naive_energy(pts, 0)), 0);
  }
  // rich cubes
  for (int c = 0; c < cases; ++c) {
    auto f1 = generate_random_tubes(1.0 / 16, 6, 2, mix_seed(seed, 21, static_cast<std::uint64_t>(c)));
    auto f2 = generate_random_tubes(1.0 / 16, 6, 2, mix_seed(seed, 22, static_cast<std::uint64_t>(c)), 1.2, 0.5);
    std::vector<const TubeFamily*> v{&f1, &f2};
    auto a = count_rich_cubes<2>(v, 1.0 / 16), b = oracle::naive_rich_cubes<2>(v, 1.0 / 16);
    add("rich cubes #" + std::to_string(c), static_cast<double>(a.at_least(1)), static_cast<double>(b.at_least(1)), 0);
    o.checks.push_back(check_ge("rich histogram equal #" + std::to_string(c), a == b ? 1 : 0, 1));
  }
  // plate intersection volume against rejection sampling
  {
    const double delta = 1.0 / 64, D = 1.0 / 8;
    auto s1 = vinogradov_plate(0.2, delta, {0.5, 0.5, 0.5});
    auto s2 = vinogradov_plate(0.2 + D, delta, {0.5, 0.5, 0.5});
    auto pv = plate_intersection_volume(s1, s2);
    auto mc = oracle::mc_volume<3>(s1, s2, 2000000, seed);
    o.checks.push_back(check_le("plate volume within CI", std::abs(pv.volume - mc.value), 2 * mc.ci));
    reps.push_back(oracle::to_json(oracle::OracleReport{pv.volume, mc.value, "plate pair delta=1/64 D=1/8"}));
    o.rows.push_back({static_cast<double>(o.rows.size()), pv.volume, mc.value, std::abs(pv.volume - mc.value) / mc.value});
  }
  o.results["reports"] = reps;
  return o;
}

// ---------------- run / artifacts ----------------

struct WorkerScope {
  unsigned saved;
  explicit WorkerScope(unsigned w) : saved(default_workers()) {
    if (w) set_default_workers(w);
  }
  ~WorkerScope() { set_default_workers(saved); }
};

inline Outcome run(const ExperimentConfig& c) {
  WorkerScope ws(c.workers);
  ParamReader P(c.params, c.raw);
  switch (c.subcommand) {
    case Subcommand::Moments: return run_moments(P, c.seed);
    case Subcommand::Decouple: return run_decouple(P, c.seed);
    case Subcommand::Kakeya: return run_kakeya(P, c.seed);
    case Subcommand::Energy: return run_energy(P, c.seed);
    case Subcommand::Vdc: return run_vdc(P, c.seed);
    case Subcommand::OracleCheck: return run_oracle_check(P, c.seed);
  }
  throw InvalidArgument("unknown subcommand");
}

inline json checks_json(const std::vector<Check>& cs) {
  json a = json::array();
  for (auto& c : cs)
    a.push_back({{"name", c.name}, {"measured", c.measured}, {"limit", c.limit}, {"relation", c.relation}, {"pass", c.pass}, {"note", c.note}});
  return a;
}

inline json results_document(const ExperimentConfig& c, const Outcome& o) {
  return {{"version", version_string()},
          {"subcommand", to_string(c.subcommand)},
          {"seed", c.seed},
          {"config", o.params},
          {"results", o.results},
          {"checks", checks_json(o.checks)},
          {"pass", o.all_pass()}};
}

inline void write_dat(std::ostream& os, const Outcome& o) {
  os << "#";
  for (auto& c : o.columns) os << ' ' << c;
  os << '\n' << std::setprecision(17);
  for (auto& r : o.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? " " : "") << r[i];
    os << '\n';
  }
}

inline std::string check_line(const Check& c) {
  std::ostringstream os;
  os << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << std::setprecision(6) << c.measured << ' ' << c.relation << ' ' << c.limit;
  if (!c.note.empty()) os << " (" << c.note << ")";
  return os.str();
}

inline void write_artifacts(const std::string& dir, const ExperimentConfig& c, const Outcome& o, double seconds) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/results.json") << results_document(c, o).dump(2) << '\n';
  std::ofstream dat(dir + "/results.dat");
  write_dat(dat, o);
  json timing = {{"wall_seconds", seconds}, {"workers", c.workers ? c.workers : default_workers()}};
  std::ofstream(dir + "/timing.json") << timing.dump(2) << '\n';
}

// ---------------- reproduce ----------------

struct ReproduceReport {
  double max_relative_deviation = 0;
  double max_sigma = 0;  // MC scans under a different seed: largest |a-b| / sqrt(sa^2 + sb^2)
  std::size_t compared = 0;
  bool same_seed = true;
  bool pass = true;
  std::string mismatch;  // structural difference, if any
};

namespace detail {

inline void compare_numbers(const json& a, const json& b, const std::string& path, ReproduceReport& r) {
  if (a.type() != b.type() && !(a.is_number() && b.is_number())) {
    if (r.mismatch.empty()) r.mismatch = "type differs at " + path;
    return;
  }
  if (a.is_object()) {
    for (auto& [k, v] : a.items()) {
      if (!b.contains(k)) {
        if (r.mismatch.empty()) r.mismatch = "missing " + path + "/" + k;
        continue;
      }
      compare_numbers(v, b[k], path + "/" + k, r);
    }
  } else if (a.is_array()) {
    if (a.size() != b.size()) {
      if (r.mismatch.empty()) r.mismatch = "length differs at " + path;
      return;
    }
    for (std::size_t i = 0; i < a.size(); ++i) compare_numbers(a[i], b[i], path + "/" + std::to_string(i), r);
  } else if (a.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    ++r.compared;
    if (x != y) r.max_relative_deviation = std::max(r.max_relative_deviation, std::abs(x - y) / std::max(std::abs(x), 1e-300));
  } else if (a != b) {
    if (r.mismatch.empty()) r.mismatch = "value differs at " + path;
  }
}

}  // namespace detail

inline ExperimentConfig config_from_results(const json& doc) {
  for (auto k : {"version", "subcommand", "seed", "config", "results"})
    if (!doc.contains(k)) throw ConfigError(std::string("schema mismatch: results file lacks '") + k + "'", 0);
  ExperimentConfig c;
  c.subcommand = subcommand_from_string(doc["subcommand"].get<std::string>());
  c.seed = doc["seed"].get<std::uint64_t>();
  c.params = doc["config"];
  return c;
}

// Reruns the embedded config. With the recorded seed every numeric field must match exactly;
// under another seed only MC moment scans are judged, in units of their combined sigma.
inline ReproduceReport reproduce(const json& doc, std::optional<std::uint64_t> seed = std::nullopt, unsigned workers = 0,
                                 Outcome* rerun = nullptr) {
  auto c = config_from_results(doc);
  c.workers = workers;
  ReproduceReport r;
  if (seed && *seed != c.seed) {
    r.same_seed = false;
    c.seed = *seed;
  }
  auto o = run(c);
  if (rerun) *rerun = o;
  detail::compare_numbers(doc["results"], o.results, "", r);
  if (r.same_seed) {
    r.pass = r.mismatch.empty() && r.max_relative_deviation == 0;
  } else {
    const bool mc = c.subcommand == Subcommand::Moments && c.params.value("method", "exact") == "mc";
    if (mc) {
      auto& a = doc["results"]["scan"];
      auto& b = o.results["scan"];
      for (std::size_t i = 0; i < a.size(); ++i) {
        // error_bound is a 99% half-width
        const double sa = a[i]["error_bound"].get<double>() / 2.5758293035489, sb = b[i]["error_bound"].get<double>() / 2.5758293035489;
        const double z = std::abs(a[i]["value"].get<double>() - b[i]["value"].get<double>()) / std::sqrt(sa * sa + sb * sb);
        r.max_sigma = std::max(r.max_sigma, z);
      }
      r.pass = r.mismatch.empty() && r.max_sigma <= 3;
    } else {
      r.pass = r.mismatch.empty() && r.max_relative_deviation == 0;
    }
  }
  return r;
}

inline json to_json(const ReproduceReport& r) {
  return {{"max_relative_deviation", r.max_relative_deviation}, {"max_sigma", r.max_sigma}, {"compared", r.compared},
          {"same_seed", r.same_seed}, {"pass", r.pass}, {"mismatch", r.mismatch}};
}

}  // namespace smallcap::harness
