#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "expsum.hpp"
#include "geometry.hpp"
#include "moments.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace smallcap {

enum class Manifold { Parabola, Cone2D, MomentCurve3D, FlatBox };
enum class ScaleKind { Canonical, SmallCap };

inline const char* to_string(Manifold m) {
  switch (m) {
    case Manifold::Parabola: return "Parabola";
    case Manifold::Cone2D: return "Cone2D";
    case Manifold::MomentCurve3D: return "MomentCurve3D";
    case Manifold::FlatBox: return "FlatBox";
  }
  return "?";
}

inline double canonical_exponent(Manifold m) {
  switch (m) {
    case Manifold::Parabola: return 0.5;
    case Manifold::Cone2D: return 0.5;
    case Manifold::MomentCurve3D: return 1.0 / 3;
    case Manifold::FlatBox: return 0;
  }
  return 0;
}

// One cap: a box for reporting plus the lattice frequencies (in units of h) that lie in it.
template <std::size_t D> struct Cap {
  OrientedBox<D> box;
  std::vector<std::array<long long, D>> samples;
};

// Frequencies live on h Z^D, so every norm is an exact average over the period torus.
template <std::size_t D> struct CapPartition {
  Manifold manifold = Manifold::Parabola;
  double delta = 0, alpha = 0;
  double h = 1;
  ScaleKind scale_kind = ScaleKind::Canonical;
  std::vector<Cap<D>> caps;

  std::size_t size() const { return caps.size(); }
  std::size_t total_samples() const {
    std::size_t s = 0;
    for (auto& c : caps) s += c.samples.size();
    return s;
  }
  void validate() const {
    require(!caps.empty(), "partition has no caps");
    std::set<std::array<long long, D>> seen;
    for (auto& c : caps)
      for (auto& k : c.samples)
        require(seen.insert(k).second, "caps overlap: a frequency sample lies in two caps");
  }
};

namespace detail {

inline long long lattice_floor(double x, double h) { return static_cast<long long>(std::floor(x / h + 1e-9)); }

// first lattice column i with i h >= c w
inline long long first_column(long long c, double w, double h) {
  return static_cast<long long>(std::ceil(static_cast<double>(c) * w / h - 1e-9));
}

}  // namespace detail

// Vertical delta-neighbourhood {(xi, xi^2 + t): 0 <= xi < 1, |t| <= delta}, cut into xi-intervals of length delta^alpha.
inline CapPartition<2> parabola_partition(double delta, double alpha) {
  require(delta > 0 && delta < 1, "delta must lie in (0,1)");
  require(alpha >= 0.5 - 1e-12 && alpha <= 1 + 1e-12, "alpha must lie in [1/2, 1]");
  CapPartition<2> P;
  P.manifold = Manifold::Parabola;
  P.delta = delta;
  P.alpha = alpha;
  P.h = delta / 2;
  P.scale_kind = alpha > 0.5 + 1e-12 ? ScaleKind::SmallCap : ScaleKind::Canonical;
  const auto ncap = static_cast<long long>(std::llround(std::pow(delta, -alpha)));
  const double w = 1.0 / static_cast<double>(ncap);
  for (long long c = 0; c < ncap; ++c) {
    Cap<2> cap;
    for (long long i = detail::first_column(c, w, P.h); i < detail::first_column(c + 1, w, P.h); ++i) {
      double xi = static_cast<double>(i) * P.h;
      long long lo = static_cast<long long>(std::ceil((xi * xi - delta) / P.h - 1e-9));
      long long hi = detail::lattice_floor(xi * xi + delta, P.h);
      for (long long j = lo; j <= hi; ++j) cap.samples.push_back({i, j});
    }
    double xc = (static_cast<double>(c) + 0.5) * w;
    Vec<2> t = normalized(Vec<2>{1, 2 * xc});
    cap.box.center = {xc, xc * xc};
    cap.box.axes = {Vec<2>{-t[1], t[0]}, t};
    cap.box.half = {delta + 0.25 * w * w, 0.5 * w * std::sqrt(1 + 4 * xc * xc)};
    cap.box.tag = BoxTag::CapBox;
    cap.box.group = static_cast<int>(c);
    P.caps.push_back(std::move(cap));
  }
  return P;
}

// Truncated cone 1 <= |xi| <= sqrt 2 over an angular window [0, window): sectors of angular width
// ~delta^{1/2}, each cut radially into ~delta^{-1/2} pieces, vertical thickness delta.
inline CapPartition<3> cone_partition(double delta, double window = 1.0) {
  require(delta > 0 && delta <= 0.25, "delta must lie in (0, 1/4]");
  require(window > 0 && window <= kTwoPi, "angular window must lie in (0, 2 pi]");
  CapPartition<3> P;
  P.manifold = Manifold::Cone2D;
  P.delta = delta;
  P.alpha = 0.5;
  P.h = delta / 2;
  P.scale_kind = ScaleKind::SmallCap;  // shorter than the canonical (delta^{1/2}, delta, 1) planks
  const auto nang = static_cast<long long>(std::ceil(window / std::sqrt(delta) - 1e-9));
  const auto nrad = static_cast<long long>(std::ceil(1 / std::sqrt(delta) - 1e-9));
  const double dphi = window / static_cast<double>(nang);
  const double r0 = 1, r1 = std::sqrt(2.0), dr = (r1 - r0) / static_cast<double>(nrad);
  for (long long a = 0; a < nang; ++a)
    for (long long b = 0; b < nrad; ++b) {
      Cap<3> cap;
      const double p0 = a * dphi, p1 = (a + 1) * dphi, q0 = r0 + b * dr, q1 = r0 + (b + 1) * dr;
      // bounding lattice box in the plane
      const long long n = static_cast<long long>(std::ceil(r1 / P.h)) + 1;
      for (long long i = -n; i <= n; ++i)
        for (long long j = -n; j <= n; ++j) {
          double x = i * P.h, y = j * P.h, r = std::hypot(x, y);
          if (r < q0 || r >= q1) continue;
          double phi = std::atan2(y, x);
          if (phi < 0) phi += kTwoPi;
          if (phi < p0 || phi >= p1) continue;
          long long lo = static_cast<long long>(std::ceil((r - delta) / P.h - 1e-9));
          long long hi = detail::lattice_floor(r + delta, P.h);
          for (long long k = lo; k <= hi; ++k) cap.samples.push_back({i, j, k});
        }
      double pc = 0.5 * (p0 + p1), rc = 0.5 * (q0 + q1);
      Vec3 radial = normalized(Vec3{std::cos(pc), std::sin(pc), 1});
      Vec3 ang{-std::sin(pc), std::cos(pc), 0};
      cap.box.center = {rc * std::cos(pc), rc * std::sin(pc), rc};
      cap.box.axes = {ang, cross(radial, ang), radial};
      cap.box.half = {0.5 * rc * dphi, delta + 0.125 * rc * dphi * dphi, 0.5 * dr * std::sqrt(2.0)};
      cap.box.tag = BoxTag::CapBox;
      cap.box.group = static_cast<int>(a);
      P.caps.push_back(std::move(cap));
    }
  return P;
}

// {(t, t^2 + u, t^3 + v): |u|, |v| <= delta}, t-intervals of length delta^alpha.
inline CapPartition<3> moment_curve_partition(double delta, double alpha) {
  require(delta > 0 && delta < 1, "delta must lie in (0,1)");
  require(alpha >= 1.0 / 3 - 1e-12 && alpha <= 1 + 1e-12, "alpha must lie in [1/3, 1]");
  CapPartition<3> P;
  P.manifold = Manifold::MomentCurve3D;
  P.delta = delta;
  P.alpha = alpha;
  P.h = delta / 2;
  P.scale_kind = alpha > 1.0 / 3 + 1e-12 ? ScaleKind::SmallCap : ScaleKind::Canonical;
  const auto ncap = static_cast<long long>(std::llround(std::pow(delta, -alpha)));
  const double w = 1.0 / static_cast<double>(ncap);
  for (long long c = 0; c < ncap; ++c) {
    Cap<3> cap;
    for (long long i = detail::first_column(c, w, P.h); i < detail::first_column(c + 1, w, P.h); ++i) {
      double t = static_cast<double>(i) * P.h;
      long long j0 = static_cast<long long>(std::ceil((t * t - delta) / P.h - 1e-9)), j1 = detail::lattice_floor(t * t + delta, P.h);
      long long k0 = static_cast<long long>(std::ceil((t * t * t - delta) / P.h - 1e-9)),
                k1 = detail::lattice_floor(t * t * t + delta, P.h);
      for (long long j = j0; j <= j1; ++j)
        for (long long k = k0; k <= k1; ++k) cap.samples.push_back({i, j, k});
    }
    double tc = (static_cast<double>(c) + 0.5) * w;
    auto fr = frenet_frame(tc);
    cap.box.center = {tc, tc * tc, tc * tc * tc};
    cap.box.axes = {fr.t_vec, fr.n_vec, fr.b_vec};
    cap.box.half = {0.5 * w * norm(Vec3{1, 2 * tc, 3 * tc * tc}), delta + w * w, delta + w * w * w};
    cap.box.tag = BoxTag::CapBox;
    cap.box.group = static_cast<int>(c);
    P.caps.push_back(std::move(cap));
  }
  return P;
}

// [0, L m) x [0, m) lattice box cut into L translates of an m x m square.
inline CapPartition<2> flat_box_partition(int L, int m) {
  require(L >= 1 && m >= 2, "flat box needs L >= 1 and m >= 2");
  CapPartition<2> P;
  P.manifold = Manifold::FlatBox;
  P.delta = 1;
  P.alpha = 0;
  P.h = 1;
  for (int c = 0; c < L; ++c) {
    Cap<2> cap;
    for (long long i = 0; i < m; ++i)
      for (long long j = 0; j < m; ++j) cap.samples.push_back({static_cast<long long>(c) * m + i, j});
    cap.box = OrientedBox<2>::axis_aligned({static_cast<double>(c * m), 0.0}, {static_cast<double>((c + 1) * m), static_cast<double>(m)});
    cap.box.tag = BoxTag::CapBox;
    cap.box.group = c;
    P.caps.push_back(std::move(cap));
  }
  return P;
}

// ---------------- cap functions ----------------

enum class ExtremalMode { IndicatorLike, RandomPhase };

template <std::size_t D> struct CapFunction {
  CapPartition<D> partition;
  std::vector<cplx> amplitude;  // one per cap

  ExpSum cap_sum(std::size_t i) const {
    ExpSum s;
    s.dim = static_cast<int>(D);
    for (auto& k : partition.caps[i].samples) {
      Vec3 f{0, 0, 0};
      for (std::size_t a = 0; a < D; ++a) f[a] = static_cast<double>(k[a]);
      s.freqs.push_back(f);
      s.coeffs.push_back(amplitude[i]);
    }
    return s;
  }
  ExpSum sum() const {
    ExpSum s;
    s.dim = static_cast<int>(D);
    for (std::size_t i = 0; i < partition.caps.size(); ++i) {
      auto c = cap_sum(i);
      s.freqs.insert(s.freqs.end(), c.freqs.begin(), c.freqs.end());
      s.coeffs.insert(s.coeffs.end(), c.coeffs.begin(), c.coeffs.end());
    }
    return s;
  }
};

template <std::size_t D>
CapFunction<D> build_extremal(const CapPartition<D>& P, ExtremalMode mode, std::uint64_t seed = 0, std::size_t min_samples = 4) {
  P.validate();
  for (std::size_t i = 0; i < P.caps.size(); ++i)
    if (P.caps[i].samples.size() < min_samples)
      throw InvalidArgument("cap " + std::to_string(i) + " holds " + std::to_string(P.caps[i].samples.size()) +
                            " samples, need at least " + std::to_string(min_samples));
  CapFunction<D> F;
  F.partition = P;
  F.amplitude.assign(P.caps.size(), cplx(1, 0));
  if (mode == ExtremalMode::RandomPhase) {
    CounterRng rng(seed, 0xCA95);
    for (auto& a : F.amplitude) a = e_turns(rng.uniform());
  }
  return F;
}

struct NormOptions {
  std::size_t mc_samples = 400000;  // only used for non-even p
  std::uint64_t seed = 17;
};

// ||S||_p as an average over the period torus; exact for even p
inline MomentEstimate torus_norm_moment(const ExpSum& s, double p, const NormOptions& opt = {}) {
  MomentQuery q;
  q.sum = s;
  q.p = p;
  q.domain = SlabDomain::full(s.dim);
  if (is_even_integer(p)) return exact_torus_moment(q);
  q.method = Method::MonteCarlo;
  q.samples = opt.mc_samples;
  q.seed = opt.seed;
  return monte_carlo_moment(q);
}

struct DecResult {
  double lower_bound = 0;
  double norm_F = 0;
  std::vector<double> cap_norms;
  std::size_t caps = 0;
  double p = 0, r = 0;
  bool exact = true;
};

inline DecResult dec_ratio(const ExpSum& whole, const std::vector<ExpSum>& pieces, double p, double r,
                           const NormOptions& opt = {}) {
  require(p >= 2 && r >= 2, "p and r must be at least 2");
  DecResult res;
  res.p = p;
  res.r = r;
  res.exact = is_even_integer(p);
  res.norm_F = torus_norm_moment(whole, p, opt).norm();
  res.cap_norms = parallel_blocks<double>(pieces.size(), [&](std::size_t i) {
    return pieces[i].size() ? torus_norm_moment(pieces[i], p, opt).norm() : 0.0;
  });
  double acc = 0;
  for (double v : res.cap_norms)
    if (v > 0) {
      acc += std::pow(v, r);
      ++res.caps;
    }
  if (res.caps == 0 || acc <= 0) throw InvalidArgument("zero denominator: every cap is empty");
  const double N = static_cast<double>(res.caps);
  res.lower_bound = res.norm_F / (std::pow(N, 0.5 - 1 / r) * std::pow(acc, 1 / r));
  return res;
}

template <std::size_t D> DecResult dec_lower_bound(const CapFunction<D>& F, double p, double r, const NormOptions& opt = {}) {
  std::vector<ExpSum> pieces;
  for (std::size_t i = 0; i < F.partition.caps.size(); ++i) pieces.push_back(F.cap_sum(i));
  return dec_ratio(F.sum(), pieces, p, r, opt);
}

// ---------------- refined flat decoupling ----------------

// 1-d model: B = [0, L m) in Z, B_i = [i m, (i+1) m), tau_k = [k/m, (k+1)/m) on the unit torus.
// Packet T has centre c_T = k/m + (s + 1/2) / (m L^2), s < L^2, and
// W_T(x) = (1/|B|) sum_{xi in B} e(xi (x - c_T)).
struct Packet {
  int tau = 0;
  int slot = 0;
  cplx w{1, 0};
};

struct PacketFamily {
  int L = 4, m = 4, N = 1;
  std::vector<Packet> packets;

  double centre(const Packet& T) const {
    return (static_cast<double>(T.tau) + (T.slot + 0.5) / (static_cast<double>(L) * L)) / m;
  }
  void validate() const {
    require(L >= 1 && m >= 1, "bad packet family dimensions");
    require(N >= 1 && N <= L * L, "N must lie in [1, L^2]");
    std::vector<int> cnt(static_cast<std::size_t>(m), 0);
    std::set<std::pair<int, int>> seen;
    for (auto& T : packets) {
      require(T.tau >= 0 && T.tau < m && T.slot >= 0 && T.slot < L * L, "packet out of range");
      require(seen.insert({T.tau, T.slot}).second, "duplicate packet");
      ++cnt[static_cast<std::size_t>(T.tau)];
    }
    for (std::size_t k = 0; k < cnt.size(); ++k)
      if (cnt[k] != 0 && cnt[k] != N)
        throw InvalidArgument("inconsistent multiplicity: tau " + std::to_string(k) + " holds " + std::to_string(cnt[k]) +
                              " packets, expected 0 or " + std::to_string(N));
  }

  // Fourier coefficients of sum w_T W_T on B
  ExpSum spectrum(int lo, int hi) const {
    ExpSum s;
    s.dim = 1;
    const double K = static_cast<double>(L) * m;
    for (int xi = lo; xi < hi; ++xi) {
      ComplexAccumulator acc;
      for (auto& T : packets) acc.add(T.w * e_turns(-frac_product(centre(T), xi)));
      s.freqs.push_back({static_cast<double>(xi), 0, 0});
      s.coeffs.push_back(acc.value() / K);
    }
    return s;
  }
};

inline PacketFamily make_packet_family(int L, int N, std::uint64_t seed, int m = 4, double occupancy = 0.5,
                                       bool random_phase = true) {
  PacketFamily f;
  f.L = L;
  f.m = m;
  f.N = N;
  require(N >= 1 && N <= L * L, "N must lie in [1, L^2]");
  CounterRng rng(seed, 0xF1A7);
  std::vector<int> taus;
  for (int k = 0; k < m; ++k)
    if (rng.uniform() < occupancy) taus.push_back(k);
  if (taus.empty()) taus.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(m))));
  const int S = L * L;
  for (int k : taus) {
    std::vector<int> slots(static_cast<std::size_t>(S));
    std::iota(slots.begin(), slots.end(), 0);
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);
    slots.resize(static_cast<std::size_t>(N));
    std::sort(slots.begin(), slots.end());
    for (int s : slots) f.packets.push_back({k, s, random_phase ? e_turns(rng.uniform()) : cplx(1, 0)});
  }
  f.validate();
  return f;
}

struct RefinedGain {
  double lhs = 0, rhs = 0;
  double factor = 0;  // (L^2/N)^{1/2 - 1/p}
  double ratio() const { return lhs / rhs; }
};

inline RefinedGain refined_flat_gain(const PacketFamily& fam, double p, const NormOptions& opt = {}) {
  fam.validate();
  require(p >= 2, "p must be at least 2");
  const int K = fam.L * fam.m;
  RefinedGain g;
  g.factor = std::pow(static_cast<double>(fam.L) * fam.L / fam.N, 0.5 - 1 / p);
  g.lhs = torus_norm_moment(fam.spectrum(0, K), p, opt).norm();
  auto caps = parallel_blocks<double>(static_cast<std::size_t>(fam.L), [&](std::size_t i) {
    auto s = fam.spectrum(static_cast<int>(i) * fam.m, static_cast<int>(i + 1) * fam.m);
    return torus_norm_moment(s, p, opt).value;
  });
  double acc = 0;
  for (double v : caps) acc += v;
  g.rhs = g.factor * std::pow(acc, 1 / p);
  return g;
}

// ---------------- JSON ----------------

template <std::size_t D> nlohmann::json partition_descriptor(const CapPartition<D>& P) {
  return {{"manifold", to_string(P.manifold)},
          {"delta", P.delta},
          {"alpha", P.alpha},
          {"lattice_step", P.h},
          {"scale_kind", P.scale_kind == ScaleKind::Canonical ? "Canonical" : "SmallCap"},
          {"caps", P.caps.size()},
          {"samples", P.total_samples()}};
}

inline nlohmann::json to_json(const DecResult& d) {
  return {{"lower_bound", d.lower_bound}, {"norm_F", d.norm_F}, {"cap_norms", d.cap_norms}, {"caps", d.caps},
          {"p", d.p},                     {"r", d.r},           {"exact", d.exact}};
}

inline nlohmann::json to_json(const RefinedGain& g) {
  return {{"lhs", g.lhs}, {"rhs", g.rhs}, {"factor", g.factor}, {"ratio", g.ratio()}};
}

}  // namespace smallcap
