#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "random.hpp"

namespace smallcap {

enum class CurveKind { Parabola2D, MomentCurve, PerturbedCone, CustomPolynomialPhase };

inline const char* to_string(CurveKind k) {
  switch (k) {
    case CurveKind::Parabola2D: return "Parabola2D";
    case CurveKind::MomentCurve: return "MomentCurve";
    case CurveKind::PerturbedCone: return "PerturbedCone";
    case CurveKind::CustomPolynomialPhase: return "CustomPolynomialPhase";
  }
  return "?";
}

inline CurveKind curve_kind_from_string(const std::string& s) {
  if (s == "Parabola2D") return CurveKind::Parabola2D;
  if (s == "MomentCurve") return CurveKind::MomentCurve;
  if (s == "PerturbedCone") return CurveKind::PerturbedCone;
  if (s == "CustomPolynomialPhase") return CurveKind::CustomPolynomialPhase;
  throw InvalidArgument("unknown curve kind '" + s + "'");
}

// omega(k,l) = ((k+l)^{3/2} - (k-l)^{3/2}) / 3
inline double cone_omega(long long k, long long l) {
  require(k > l && l >= 1, "PerturbedCone needs k > l >= 1");
  double a = static_cast<double>(k + l), b = static_cast<double>(k - l);
  return (a * std::sqrt(a) - b * std::sqrt(b)) / 3.0;
}

struct CurveSpec {
  CurveKind kind = CurveKind::MomentCurve;
  int n = 3;                 // ambient dimension
  long long K = 0, L = 0;    // PerturbedCone: k in [K, 2K), l in [L, 2L)
  std::vector<double> poly;  // CustomPolynomialPhase: phi(u) = sum poly[i] u^i

  static CurveSpec parabola() { return {CurveKind::Parabola2D, 2, 0, 0, {}}; }
  static CurveSpec moment(int n) {
    require(n >= 2 && n <= 6, "MomentCurve dimension must lie in [2,6]");
    return {CurveKind::MomentCurve, n, 0, 0, {}};
  }
  static CurveSpec cone(long long K, long long L) {
    require(K >= 1 && L >= 1, "cone ranges must be positive");
    return {CurveKind::PerturbedCone, 3, K, L, {}};
  }
  static CurveSpec custom(std::vector<double> coeffs) {
    require(!coeffs.empty(), "empty polynomial");
    return {CurveKind::CustomPolynomialPhase, 3, 0, 0, std::move(coeffs)};
  }

  void validate() const {
    switch (kind) {
      case CurveKind::Parabola2D: require(n == 2, "Parabola2D has n = 2"); break;
      case CurveKind::MomentCurve: require(n >= 2 && n <= 6, "MomentCurve dimension must lie in [2,6]"); break;
      case CurveKind::PerturbedCone:
        require(n == 3 && K >= 1 && L >= 1, "bad PerturbedCone ranges");
        break;
      case CurveKind::CustomPolynomialPhase: require(n == 3 && !poly.empty(), "bad CustomPolynomialPhase"); break;
    }
  }

  // (k, l) pairs with k in [K,2K), l in [L,2L), k > l >= 1, in lexicographic order
  std::vector<std::pair<long long, long long>> cone_pairs() const {
    std::vector<std::pair<long long, long long>> out;
    for (long long k = K; k < 2 * K; ++k)
      for (long long l = L; l < 2 * L; ++l)
        if (k > l && l >= 1) out.emplace_back(k, l);
    return out;
  }
};

enum class Scaling { IntegerFrequencies, NormalizedFrequencies };

// Materialized frequency list plus coefficients; what the engines consume.
struct ExpSum {
  int dim = 0;
  std::vector<Vec3> freqs;  // unused trailing coordinates are 0
  std::vector<cplx> coeffs;

  std::size_t size() const { return freqs.size(); }

  cplx eval(const double* x) const {
    ComplexAccumulator acc;
    for (std::size_t j = 0; j < freqs.size(); ++j) {
      double ph = 0;
      for (int i = 0; i < dim; ++i) ph += frac_product(x[i], freqs[j][i]);
      acc.add(coeffs[j] * e_turns(ph));
    }
    return acc.value();
  }
  cplx eval(const Vec3& x) const { return eval(x.data()); }
};

struct ExpSumSpec {
  CurveSpec curve = CurveSpec::moment(3);
  long long N = 1;
  double alpha = 1.0;
  std::vector<cplx> coefficients;
  Scaling scaling = Scaling::IntegerFrequencies;
  double R = 1.0;
  std::optional<double> denominator;  // overrides R^alpha in normalized mode

  static ExpSumSpec ones(CurveSpec c, long long N) {
    ExpSumSpec s;
    s.curve = c;
    s.N = (c.kind == CurveKind::PerturbedCone) ? static_cast<long long>(c.cone_pairs().size()) : N;
    s.coefficients.assign(static_cast<std::size_t>(s.N), cplx(1, 0));
    s.validate();
    return s;
  }
  static ExpSumSpec random_phases(CurveSpec c, long long N, std::uint64_t seed) {
    ExpSumSpec s = ones(c, N);
    CounterRng rng(seed, 0xC0EF);
    for (auto& a : s.coefficients) a = e_turns(rng.uniform());
    return s;
  }

  int dim() const { return curve.n; }

  double freq_denominator() const { return denominator ? *denominator : std::pow(R, alpha); }

  void validate() const {
    curve.validate();
    require(N >= 1, "N must be positive");
    require(alpha >= 1.0 / 3 - 1e-12 && alpha <= 1 + 1e-12, "alpha must lie in [1/3, 1]");
    require(static_cast<long long>(coefficients.size()) == N, "coefficient list length must equal N");
    for (auto& a : coefficients)
      require(std::abs(std::abs(a) - 1.0) <= 1e-12, "coefficients must be unimodular");
    if (curve.kind == CurveKind::PerturbedCone) {
      require(scaling == Scaling::IntegerFrequencies, "PerturbedCone supports IntegerFrequencies only");
      require(static_cast<long long>(curve.cone_pairs().size()) == N, "N must equal the number of cone pairs");
    }
    if (scaling == Scaling::NormalizedFrequencies) require(R > 0 && freq_denominator() > 0, "R must be positive");
  }

  ExpSum materialize() const {
    validate();
    ExpSum s;
    s.dim = curve.n;
    s.coeffs = coefficients;
    s.freqs.reserve(static_cast<std::size_t>(N));
    const bool norm = scaling == Scaling::NormalizedFrequencies;
    const double d = norm ? freq_denominator() : 1.0;
    switch (curve.kind) {
      case CurveKind::Parabola2D:
      case CurveKind::MomentCurve:
        for (long long j = 1; j <= N; ++j) {
          Vec3 f{0, 0, 0};
          double pw = 1, dp = 1;
          for (int i = 0; i < curve.n && i < 3; ++i) {
            pw *= static_cast<double>(j);
            dp *= d;
            f[i] = norm ? pw / dp : pw;
          }
          s.freqs.push_back(f);
        }
        if (curve.n > 3) throw UnsupportedMode("materialize supports n <= 3; use eval_sum for n > 3");
        break;
      case CurveKind::PerturbedCone:
        for (auto [k, l] : curve.cone_pairs())
          s.freqs.push_back({static_cast<double>(l), static_cast<double>(k * l), cone_omega(k, l)});
        break;
      case CurveKind::CustomPolynomialPhase:
        for (long long j = 1; j <= N; ++j) {
          double u = static_cast<double>(j) / static_cast<double>(N), phi = 0;
          for (std::size_t i = curve.poly.size(); i-- > 0;) phi = phi * u + curve.poly[i];
          double jj = static_cast<double>(j), NN = static_cast<double>(N);
          Vec3 f{jj, jj * jj, NN * NN * NN * phi};
          if (norm) f = {f[0] / d, f[1] / (d * d), f[2] / (d * d * d)};
          s.freqs.push_back(f);
        }
        break;
    }
    return s;
  }
};

// S(x) = sum_j a_j e(xi_j . x), ascending j, compensated accumulation.
inline cplx eval_sum(const ExpSumSpec& spec, const std::vector<double>& x) {
  spec.validate();
  require(static_cast<int>(x.size()) == spec.dim(), "point dimension mismatch");
  for (double v : x) require(std::isfinite(v), "non-finite evaluation point");
  if (spec.curve.n <= 3) return spec.materialize().eval(x.data());
  // moment curve with n in (3, 6]
  const bool norm = spec.scaling == Scaling::NormalizedFrequencies;
  const double d = norm ? spec.freq_denominator() : 1.0;
  ComplexAccumulator acc;
  for (long long j = 1; j <= spec.N; ++j) {
    double ph = 0, pw = 1, dp = 1;
    for (int i = 0; i < spec.curve.n; ++i) {
      pw *= static_cast<double>(j);
      dp *= d;
      ph += frac_product(x[i], norm ? pw / dp : pw);
    }
    acc.add(spec.coefficients[static_cast<std::size_t>(j - 1)] * e_turns(ph));
  }
  return acc.value();
}

struct FrenetFrame {
  double t = 0;
  Vec3 t_vec{}, n_vec{}, b_vec{};
};

inline Vec3 curve_tangent(double t) { return normalized(Vec3{1, 2 * t, 3 * t * t}); }

inline FrenetFrame frenet_frame(double t) {
  require(t >= 0 && t <= 1, "frenet_frame parameter must lie in [0,1]");
  FrenetFrame f;
  f.t = t;
  f.t_vec = curve_tangent(t);
  f.b_vec = normalized(Vec3{3 * t * t, -3 * t, 1});
  f.n_vec = normalized(cross(f.b_vec, f.t_vec));
  return f;
}

// Polar grid on the truncated light cone 1 <= r^2 <= 2. Rings are delta apart in r;
// each ring gets the largest equal angular count with chord >= delta.
inline std::vector<Vec3> cone_points(double delta) {
  require(delta > 0 && delta <= 0.5, "cone_points: delta must lie in (0, 1/2]");
  std::vector<Vec3> pts;
  const double rmax = std::sqrt(2.0);
  for (int i = 0;; ++i) {
    double r = 1.0 + delta * i;
    if (r > rmax + 1e-12) break;
    double step = 2 * std::asin(std::min(1.0, delta / (2 * r)));
    auto m = static_cast<long long>(std::floor(kTwoPi / step + 1e-9));
    m = std::max<long long>(m, 1);
    for (long long a = 0; a < m; ++a) {
      double th = kTwoPi * static_cast<double>(a) / static_cast<double>(m);
      double x = r * std::cos(th), y = r * std::sin(th);
      pts.push_back({x, y, std::sqrt(x * x + y * y)});
    }
  }
  return pts;
}

// ---- JSON ----
inline nlohmann::json to_json(const ExpSumSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.curve.kind);
  j["n"] = s.curve.n;
  j["N"] = s.N;
  j["alpha"] = s.alpha;
  if (s.curve.kind == CurveKind::PerturbedCone) {
    j["K"] = s.curve.K;
    j["L"] = s.curve.L;
  }
  if (s.curve.kind == CurveKind::CustomPolynomialPhase) j["poly"] = s.curve.poly;
  if (s.scaling == Scaling::IntegerFrequencies) {
    j["scaling"] = {{"mode", "IntegerFrequencies"}};
  } else {
    j["scaling"] = {{"mode", "NormalizedFrequencies"}, {"R", s.R}};
    if (s.denominator) j["scaling"]["denominator"] = *s.denominator;
  }
  std::vector<double> ph;
  ph.reserve(s.coefficients.size());
  for (auto a : s.coefficients) ph.push_back(std::arg(a) / kTwoPi);
  j["phases"] = ph;
  return j;
}

inline ExpSumSpec expsum_from_json(const nlohmann::json& j) {
  ExpSumSpec s;
  s.curve.kind = curve_kind_from_string(j.at("kind").get<std::string>());
  s.curve.n = j.at("n").get<int>();
  s.N = j.at("N").get<long long>();
  s.alpha = j.value("alpha", 1.0);
  s.curve.K = j.value("K", 0LL);
  s.curve.L = j.value("L", 0LL);
  if (j.contains("poly")) s.curve.poly = j["poly"].get<std::vector<double>>();
  const auto& sc = j.at("scaling");
  std::string mode = sc.at("mode").get<std::string>();
  if (mode == "IntegerFrequencies") {
    s.scaling = Scaling::IntegerFrequencies;
  } else if (mode == "NormalizedFrequencies") {
    s.scaling = Scaling::NormalizedFrequencies;
    s.R = sc.at("R").get<double>();
    if (sc.contains("denominator")) s.denominator = sc["denominator"].get<double>();
  } else {
    throw InvalidArgument("unknown scaling mode '" + mode + "'");
  }
  for (double t : j.at("phases").get<std::vector<double>>()) s.coefficients.push_back(e_turns(t));
  s.validate();
  return s;
}

}  // namespace smallcap
