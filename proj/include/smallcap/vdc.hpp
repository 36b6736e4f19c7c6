#pragma once

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"
#include "parallel.hpp"

namespace smallcap {

enum class PhaseKind { LogPhase, Polynomial };

// Sum over n in (start, start + N] of e(f(n)).
struct PhaseSpec {
  PhaseKind kind = PhaseKind::Polynomial;
  double t = 0;                 // LogPhase: f(x) = t log x / 2 pi
  std::vector<double> coeffs;   // Polynomial: f(x) = sum c_i x^i
  long long start = 0;
  long long N = 1;
  int k = 4;
  double lambda = 1;  // lambda_k
  double A = 1;

  static PhaseSpec polynomial(std::vector<double> c, long long N) {
    PhaseSpec s;
    s.kind = PhaseKind::Polynomial;
    s.coeffs = std::move(c);
    s.N = N;
    return s;
  }
  // dyadic block (N, 2N]; lambda_k is the minimum of |f^(k)| there and A the ratio across the block
  static PhaseSpec log_phase(double t, long long N, int k = 4) {
    PhaseSpec s;
    s.kind = PhaseKind::LogPhase;
    s.t = t;
    s.start = N;
    s.N = N;
    s.k = k;
    double fact = 1;
    for (int i = 2; i < k; ++i) fact *= i;
    s.lambda = t * fact / (kTwoPi * std::pow(2.0 * static_cast<double>(N), k));
    s.A = std::pow(2.0, k);
    return s;
  }
  static PhaseSpec bound_only(long long N, int k, double lambda, double A = 1) {
    PhaseSpec s;
    s.N = N;
    s.k = k;
    s.lambda = lambda;
    s.A = A;
    return s;
  }

  // lambda_4 = N^{-varpi}
  double varpi() const { return -std::log(lambda) / std::log(static_cast<double>(N)); }

  void validate() const {
    require(N >= 1, "N must be positive");
    require(start >= 0, "start must be >= 0");
    require(k >= 2, "k must be at least 2");
    require(lambda > 0 && std::isfinite(lambda), "lambda_k must be positive");
    require(A >= 1, "A must be at least 1");
    if (kind == PhaseKind::LogPhase) {
      require(t >= 0, "t must be >= 0");
      if (t > 1e15) throw InvalidArgument("t beyond extended-precision safety (t > 1e15)");
    }
  }
};

namespace detail {

// t log(n) / 2 pi mod 1. Above 1e8 the product is formed in double-double from an 80-bit log.
inline double log_phase_turns(double t, long long n) {
  if (t == 0 || n == 1) return 0;
  if (t <= 1e8) return wrap_turns(t * (std::log(static_cast<double>(n)) / kTwoPi));
  const long double L = logl(static_cast<long double>(n));
  const double lh = static_cast<double>(L);
  const double ll = static_cast<double>(L - static_cast<long double>(lh));
  constexpr double inv_hi = 0.15915494309189535;
  constexpr double inv_lo = -9.839338337591243e-18;
  const double ch = t * inv_hi;
  const double cl = std::fma(t, inv_hi, -ch) + t * inv_lo;
  const double p = ch * lh;
  const double e = std::fma(ch, lh, -p) + ch * ll + cl * lh;
  return wrap_turns((p - std::floor(p)) + e);
}

inline double poly_phase_turns(const std::vector<double>& c, long long n) {
  // c_i n^i mod 1 built up one factor of n at a time
  double ph = 0;
  const auto m = static_cast<double>(n);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double y = c[i] - std::floor(c[i]);
    for (std::size_t r = 0; r < i; ++r) y = frac_product(y, m);
    ph += y;
  }
  return wrap_turns(ph);
}

}  // namespace detail

inline double phase_turns(const PhaseSpec& s, long long n) {
  return s.kind == PhaseKind::LogPhase ? detail::log_phase_turns(s.t, n) : detail::poly_phase_turns(s.coeffs, n);
}

inline cplx phase_sum(const PhaseSpec& s, unsigned workers = default_workers()) {
  s.validate();
  const long long block = 1 << 14;
  const auto nb = static_cast<std::size_t>((s.N + block - 1) / block);
  auto parts = parallel_blocks<cplx>(
      nb,
      [&](std::size_t b) {
        ComplexAccumulator acc;
        const long long lo = s.start + 1 + static_cast<long long>(b) * block;
        const long long hi = std::min(s.start + s.N, lo + block - 1);
        for (long long n = lo; n <= hi; ++n) acc.add(e_turns(phase_turns(s, n)));
        return acc.value();
      },
      workers);
  // fixed-order pairwise reduction
  while (parts.size() > 1) {
    std::vector<cplx> next;
    for (std::size_t i = 0; i < parts.size(); i += 2) next.push_back(i + 1 < parts.size() ? parts[i] + parts[i + 1] : parts[i]);
    parts.swap(next);
  }
  return parts.empty() ? cplx(0, 0) : parts[0];
}

inline double classical_bound(const PhaseSpec& s) {
  require(s.k >= 2, "k must be at least 2");
  const double N = static_cast<double>(s.N), k = s.k;
  const double q = std::pow(2.0, 2 - k);
  const double e = 1.0 / (std::pow(2.0, k) - 2);
  return std::pow(s.A, q) * N * std::pow(s.lambda, e) + std::pow(N, 1 - q) * std::pow(s.lambda, -e);
}

inline double bdg_bound(const PhaseSpec& s, double eps = 0) {
  require(s.k >= 2, "k must be at least 2");
  const double N = static_cast<double>(s.N), k = s.k;
  const double kk = k * (k - 1);
  return std::pow(N, 1 + eps) *
         (std::pow(s.lambda, 1 / kk) + std::pow(N, -1 / kk) + std::pow(N, -2 / kk) * std::pow(s.lambda, -2 / (k * kk)));
}

struct RegimeError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

inline double new_fourth_bound(const PhaseSpec& s, double eps = 0) {
  require(s.k == 4, "the new bound is a fourth derivative estimate (k = 4)");
  const double N = static_cast<double>(s.N);
  if (s.lambda < 1 / (8 * N * N)) throw RegimeError("regime violated: lambda_4 below N^-2 (lower side)");
  if (s.lambda > 8 / N) throw RegimeError("regime violated: lambda_4 above N^-1 (upper side)");
  const double w = s.varpi();
  return std::pow(N, 1 - w / (4 * w + 8) + eps) + std::pow(N, 8.0 / 9 + eps);
}

// sampled check of lambda <= |f^(k)| <= A lambda on the summation range
struct LambdaCertificate {
  bool ok = true;
  double min_ratio = 0, max_ratio = 0;  // |f^(k)| / lambda
};

inline LambdaCertificate certify_lambda(const PhaseSpec& s, int samples = 1000) {
  LambdaCertificate c;
  c.min_ratio = 1e300;
  c.max_ratio = 0;
  const double a = static_cast<double>(s.start), b = static_cast<double>(s.start + s.N);
  for (int i = 0; i < samples; ++i) {
    // open interval; x = 0 is excluded for LogPhase
    double x = a + (b - a) * (i + 1.0) / (samples + 1.0);
    if (i == samples - 1) x = b;
    double d = 0;
    if (s.kind == PhaseKind::LogPhase) {
      double fact = 1;
      for (int j = 2; j < s.k; ++j) fact *= j;
      d = s.t * fact / (kTwoPi * std::pow(x, s.k));
    } else {
      for (std::size_t j = static_cast<std::size_t>(s.k); j < s.coeffs.size(); ++j) {
        double f = 1;
        for (std::size_t r = j - static_cast<std::size_t>(s.k) + 1; r <= j; ++r) f *= static_cast<double>(r);
        d += s.coeffs[j] * f * std::pow(x, static_cast<double>(j) - s.k);
      }
      d = std::abs(d);
    }
    double r = d / s.lambda;
    c.min_ratio = std::min(c.min_ratio, r);
    c.max_ratio = std::max(c.max_ratio, r);
  }
  c.ok = c.min_ratio >= 1 - 1e-12 && c.max_ratio <= s.A * (1 + 1e-12);
  return c;
}

// sum over (N, 2N] of n^{it}
inline cplx zeta_block_sum(double t, long long N, unsigned workers = default_workers()) {
  require(N >= 1, "N must be at least 1");
  require(t >= 0 && t <= 1e12, "t must lie in [0, 1e12]");
  if (t > 0) require(static_cast<double>(N) <= std::sqrt(t) * (1 + 1e-12) || N == 1, "N must not exceed t^{1/2}");
  PhaseSpec s;
  s.kind = PhaseKind::LogPhase;
  s.t = t;
  s.start = N;
  s.N = N;
  return phase_sum(s, workers);
}

struct VdcRow {
  long long N = 0;
  double abs_sum = 0, classical = 0, bdg = 0, fresh = 0;
};

// dyadic N in [lo, hi] for the block (N, 2N]
inline std::vector<VdcRow> vdc_scan(double t, double lo, double hi) {
  std::vector<VdcRow> rows;
  for (long long N = 1; static_cast<double>(N) <= hi; N *= 2) {
    if (static_cast<double>(N) < lo) continue;
    auto s = PhaseSpec::log_phase(t, N, 4);
    VdcRow r;
    r.N = N;
    r.abs_sum = std::abs(phase_sum(s));
    r.classical = classical_bound(s);
    r.bdg = bdg_bound(s, 0);
    r.fresh = new_fourth_bound(s, 0);
    rows.push_back(r);
  }
  return rows;
}

inline nlohmann::json to_json(const PhaseSpec& s) {
  return {{"kind", s.kind == PhaseKind::LogPhase ? "LogPhase" : "Polynomial"},
          {"t", s.t}, {"coeffs", s.coeffs}, {"start", s.start}, {"N", s.N}, {"k", s.k}, {"lambda", s.lambda}, {"A", s.A}};
}

inline nlohmann::json to_json(const VdcRow& r) {
  return {{"N", r.N}, {"abs_sum", r.abs_sum}, {"classical", r.classical}, {"bdg", r.bdg}, {"new", r.fresh}};
}

}  // namespace smallcap
