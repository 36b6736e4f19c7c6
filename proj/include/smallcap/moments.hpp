#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "expsum.hpp"
#include "fft.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "random.hpp"

namespace smallcap {

// ---------------- domains / queries ----------------

enum class AxisKind { FullPeriod, Truncated };

struct AxisInterval {
  AxisKind kind = AxisKind::FullPeriod;
  double start = 0, length = 1;
  double measure() const { return kind == AxisKind::FullPeriod ? 1.0 : length; }
};

struct SlabDomain {
  std::vector<AxisInterval> axes;

  static SlabDomain full(int n) { return SlabDomain{std::vector<AxisInterval>(static_cast<std::size_t>(n))}; }
  // [0,1]^{n-1} x [tau, tau+L] on the last axis
  static SlabDomain slab(int n, double tau, double L) {
    auto d = full(n);
    d.axes.back() = {AxisKind::Truncated, tau, L};
    return d;
  }

  int dim() const { return static_cast<int>(axes.size()); }
  double measure() const {
    double m = 1;
    for (auto& a : axes) m *= a.measure();
    return m;
  }
  int truncated_count() const {
    return static_cast<int>(std::count_if(axes.begin(), axes.end(), [](auto& a) { return a.kind == AxisKind::Truncated; }));
  }
  void validate() const {
    require(!axes.empty(), "empty domain");
    for (auto& a : axes)
      if (a.kind == AxisKind::Truncated)
        require(a.length > 0 && a.length <= 1 && std::isfinite(a.start), "truncated length must lie in (0,1]");
  }
};

enum class Method { ExactFFT, MonteCarlo };
enum class ExactBackend { Auto, DenseFFT, SparseConvolution };

struct MomentQuery {
  ExpSum sum;
  double p = 2;
  SlabDomain domain;
  bool normalized = true;
  Method method = Method::ExactFFT;
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  ExactBackend backend = ExactBackend::Auto;
  double memory_cap = kDefaultMemoryCap;
  double quad_tol = 1e-8;  // truncated-axis relative tolerance
  std::size_t max_panels = 1u << 14;

  static MomentQuery exact(const ExpSumSpec& s, double p, SlabDomain d, bool normalized = true) {
    MomentQuery q;
    q.sum = s.materialize();
    q.p = p;
    q.domain = std::move(d);
    q.normalized = normalized;
    return q;
  }
  static MomentQuery monte_carlo(const ExpSumSpec& s, double p, SlabDomain d, std::size_t samples, std::uint64_t seed,
                                 bool normalized = true) {
    MomentQuery q = exact(s, p, std::move(d), normalized);
    q.method = Method::MonteCarlo;
    q.samples = samples;
    q.seed = seed;
    return q;
  }
};

// value is the moment itself (integral or average of |S|^p); norm() is its p-th root.
struct MomentEstimate {
  double value = 0;
  double error_bound = 0;  // exact: quadrature change at the last doubling; MC: 99% CI half-width
  Method method = Method::ExactFFT;
  std::string backend;
  std::uint64_t evaluations = 0;
  double p = 2;
  bool normalized = true;
  std::size_t panels = 0;
  bool converged = true;

  double norm() const { return std::pow(value, 1.0 / p); }
  double norm_error() const {
    if (value <= 0) return 0;
    return error_bound * std::pow(value, 1.0 / p - 1.0) / p;
  }
  // one standard error (MC) from the 99% half-width
  double sigma() const { return error_bound / 2.5758293035489; }
  double norm_sigma() const { return norm_error() / 2.5758293035489; }
};

struct ExponentFit {
  double slope = 0, intercept = 0, r_squared = 0;
  std::vector<std::pair<double, double>> points;  // (log2 N, log2 value)
};

// ---------------- helpers ----------------

namespace detail {

inline long long as_integer_freq(double v) {
  double r = std::round(v);
  require(std::abs(v - r) <= 1e-9 * std::max(1.0, std::abs(v)), "periodic axis carries a non-integer frequency");
  return static_cast<long long>(r);
}

struct ExactLayout {
  std::vector<int> periodic;  // axis ids
  int trunc = -1;
  std::vector<std::array<long long, 3>> k;  // integer coords on periodic axes (shifted so min = 0)
  std::vector<long long> span;              // per periodic axis
  double tspan = 0;
  int s = 1;
};

inline ExactLayout make_layout(const MomentQuery& q) {
  require(q.domain.dim() == q.sum.dim, "domain dimension does not match the sum");
  q.domain.validate();
  if (!is_even_integer(q.p)) throw UnsupportedMode("exact mode needs an even integer p");
  require(q.domain.truncated_count() <= 1, "exact mode allows at most one truncated axis");
  ExactLayout L;
  L.s = static_cast<int>(std::llround(q.p)) / 2;
  for (int a = 0; a < q.sum.dim; ++a) {
    if (q.domain.axes[static_cast<std::size_t>(a)].kind == AxisKind::FullPeriod)
      L.periodic.push_back(a);
    else
      L.trunc = a;
  }
  const std::size_t n = q.sum.size();
  L.k.assign(n, {0, 0, 0});
  L.span.assign(L.periodic.size(), 0);
  for (std::size_t pa = 0; pa < L.periodic.size(); ++pa) {
    long long mn = 0, mx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      long long v = as_integer_freq(q.sum.freqs[j][static_cast<std::size_t>(L.periodic[pa])]);
      L.k[j][pa] = v;
      if (j == 0 || v < mn) mn = v;
      if (j == 0 || v > mx) mx = v;
    }
    for (std::size_t j = 0; j < n; ++j) L.k[j][pa] -= mn;
    L.span[pa] = mx - mn;
  }
  if (L.trunc >= 0) {
    double mn = 1e300, mx = -1e300;
    for (auto& f : q.sum.freqs) {
      mn = std::min(mn, f[static_cast<std::size_t>(L.trunc)]);
      mx = std::max(mx, f[static_cast<std::size_t>(L.trunc)]);
    }
    L.tspan = mx - mn;
  }
  return L;
}

// integral over [tau, tau+L] of e(m x)
inline cplx truncated_kernel(double m, double tau, double L) {
  if (m == 0) return {L, 0};
  double x = std::numbers::pi * m * L;
  double amp = (std::abs(x) < 1e-8) ? L : std::sin(x) / (std::numbers::pi * m);
  return e_turns(frac_product(tau + 0.5 * L, m)) * amp;
}

struct SparseKey {
  std::array<long long, 3> k;
  double t;
  bool operator==(const SparseKey& o) const { return k == o.k && t == o.t; }
};
struct SparseKeyHash {
  std::size_t operator()(const SparseKey& key) const {
    std::uint64_t h = CounterRng::mix(static_cast<std::uint64_t>(key.k[0]));
    h = CounterRng::mix(h ^ static_cast<std::uint64_t>(key.k[1]));
    h = CounterRng::mix(h ^ static_cast<std::uint64_t>(key.k[2]));
    std::uint64_t tb;
    std::memcpy(&tb, &key.t, sizeof tb);
    return static_cast<std::size_t>(CounterRng::mix(h ^ tb));
  }
};

struct SparseTerm {
  SparseKey key;
  cplx c;
};

inline std::size_t estimate_sparse_support(const ExactLayout& L, std::size_t n) {
  // min of lattice box volume and the number of multisets of size s
  double box = 1;
  for (auto sp : L.span) box *= static_cast<double>(L.s) * static_cast<double>(sp) + 1;
  if (L.trunc >= 0) box *= 1e300;  // no lattice bound on a real axis
  double multisets = 1;
  for (int i = 0; i < L.s; ++i) multisets = multisets * static_cast<double>(n + static_cast<std::size_t>(i)) / (i + 1);
  double est = std::min(box, multisets);
  return est > 1e18 ? static_cast<std::size_t>(1e18) : static_cast<std::size_t>(est);
}

// Exact moment via the coefficients of S^s: the periodic integral is sum |c_v|^2,
// and on a truncated axis the cross terms integrate in closed form.
inline MomentEstimate sparse_moment(const MomentQuery& q, const ExactLayout& L) {
  const std::size_t n = q.sum.size();
  const auto cap_terms = static_cast<std::size_t>(q.memory_cap / 96.0);
  std::vector<SparseTerm> base(n);
  for (std::size_t j = 0; j < n; ++j)
    base[j] = {{L.k[j], L.trunc >= 0 ? q.sum.freqs[j][static_cast<std::size_t>(L.trunc)] : 0.0}, q.sum.coeffs[j]};
  std::vector<SparseTerm> cur = base;
  std::uint64_t work = 0;
  for (int step = 1; step < L.s; ++step) {
    std::unordered_map<SparseKey, std::size_t, SparseKeyHash> idx;
    std::vector<SparseTerm> next;
    idx.reserve(cur.size() * 4);
    for (const auto& a : cur) {
      for (const auto& b : base) {
        SparseKey key{{a.key.k[0] + b.key.k[0], a.key.k[1] + b.key.k[1], a.key.k[2] + b.key.k[2]}, a.key.t + b.key.t};
        auto [it, fresh] = idx.try_emplace(key, next.size());
        if (fresh)
          next.push_back({key, a.c * b.c});
        else
          next[it->second].c += a.c * b.c;
        ++work;
      }
      if (next.size() > cap_terms)
        throw CapacityError("sparse support exceeds cap: " + std::to_string(next.size()) + " terms > " +
                            std::to_string(cap_terms));
    }
    cur.swap(next);
  }
  double value = 0;
  if (L.trunc < 0) {
    CompensatedSum<double> acc;
    for (auto& t : cur) acc.add(std::norm(t.c));
    value = acc.value();
  } else {
    const auto& ax = q.domain.axes[static_cast<std::size_t>(L.trunc)];
    std::sort(cur.begin(), cur.end(), [](const SparseTerm& a, const SparseTerm& b) {
      return a.key.k != b.key.k ? a.key.k < b.key.k : a.key.t < b.key.t;
    });
    CompensatedSum<double> acc;
    std::size_t i = 0;
    while (i < cur.size()) {
      std::size_t e = i;
      while (e < cur.size() && cur[e].key.k == cur[i].key.k) ++e;
      for (std::size_t u = i; u < e; ++u) {
        acc.add(std::norm(cur[u].c) * ax.length);
        for (std::size_t v = u + 1; v < e; ++v) {
          cplx kern = truncated_kernel(cur[u].key.t - cur[v].key.t, ax.start, ax.length);
          acc.add(2.0 * (cur[u].c * std::conj(cur[v].c) * kern).real());
          ++work;
        }
      }
      i = e;
    }
    value = acc.value();
  }
  MomentEstimate est;
  est.value = std::max(0.0, value);
  est.backend = "sparse";
  est.evaluations = work;
  return est;
}

// mean of |S|^{2s} over the periodic torus for a fixed truncated coordinate xt
class TorusAverager {
 public:
  TorusAverager(const MomentQuery& q, const ExactLayout& L, const std::vector<int>& dims, bool stream)
      : q_(q), L_(L), dims_(dims), stream_(stream) {
    std::vector<int> gd = dims_;
    if (stream_) gd.pop_back();
    if (gd.empty()) gd.push_back(1);
    grid_ = std::make_unique<FftGrid>(gd);
  }

  double operator()(double xt) {
    const std::size_t n = q_.sum.size();
    std::vector<cplx> b(n);
    for (std::size_t j = 0; j < n; ++j)
      b[j] = L_.trunc >= 0 ? q_.sum.coeffs[j] * e_turns(frac_product(xt, q_.sum.freqs[j][static_cast<std::size_t>(L_.trunc)]))
                           : q_.sum.coeffs[j];
    const std::size_t np = L_.periodic.size();
    double total_points = 1;
    for (int d : dims_) total_points *= d;
    CompensatedSum<double> acc;
    if (!stream_) {
      accumulate(b, acc);
    } else {
      const int ml = dims_.back();
      std::vector<cplx> bb(n);
      for (int m = 0; m < ml; ++m) {
        for (std::size_t j = 0; j < n; ++j)
          bb[j] = b[j] * e_turns(static_cast<double>(L_.k[j][np - 1] % ml) * m / ml);
        accumulate(bb, acc);
      }
    }
    return acc.value() / total_points;
  }

 private:
  void accumulate(const std::vector<cplx>& b, CompensatedSum<double>& acc) {
    grid_->clear();
    cplx* g = grid_->data();
    const std::size_t naxes = grid_->dims().size();
    const bool trivial = L_.periodic.empty() || (stream_ && L_.periodic.size() == 1);
    for (std::size_t j = 0; j < b.size(); ++j) {
      long long kk[3] = {0, 0, 0};
      if (!trivial)
        for (std::size_t a = 0; a < naxes; ++a) kk[a] = L_.k[j][a];
      g[trivial ? 0 : grid_->index(kk)] += b[j];
    }
    if (!trivial) grid_->execute();
    for (std::size_t i = 0; i < grid_->size(); ++i) acc.add(ipow(std::norm(g[i]), L_.s));
  }

  const MomentQuery& q_;
  const ExactLayout& L_;
  std::vector<int> dims_;
  bool stream_;
  std::unique_ptr<FftGrid> grid_;
};

inline MomentEstimate dense_moment(const MomentQuery& q, const ExactLayout& L) {
  std::vector<int> dims;
  double full = 1, others = 1;
  for (std::size_t a = 0; a < L.periodic.size(); ++a) {
    std::size_t m = next_pow2(static_cast<std::size_t>(2 * L.s * L.span[a] + 2));
    if (m > (1u << 30)) throw CapacityError("grid axis too long: " + std::to_string(m));
    dims.push_back(static_cast<int>(m));
    full *= static_cast<double>(m);
    if (a + 1 < L.periodic.size()) others *= static_cast<double>(m);
  }
  const double bytes = 16.0 * full;
  bool stream = false;
  if (bytes > q.memory_cap) {
    if (L.periodic.size() >= 2 && 16.0 * others <= q.memory_cap) {
      stream = true;
    } else {
      throw CapacityError("dense grid needs " + std::to_string(bytes / (1 << 20)) + " MiB (" + std::to_string(full) +
                          " points), cap " + std::to_string(q.memory_cap / (1 << 20)) + " MiB");
    }
  }
  MomentEstimate est;
  est.backend = stream ? "dense-fft-streamed" : "dense-fft";
  if (L.trunc < 0) {
    TorusAverager avg(q, L, dims, stream);
    est.value = avg(0.0);
    est.evaluations = static_cast<std::uint64_t>(full);
    return est;
  }
  const auto& ax = q.domain.axes[static_cast<std::size_t>(L.trunc)];
  // integrand bandwidth ~ s * tspan cycles per unit; start near two panels per cycle... then double
  std::size_t panels = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(L.s * L.tspan * ax.length / 2.0)));
  panels = std::min(panels, q.max_panels);
  const double fit = std::floor(q.memory_cap / std::max(bytes, 1.0));
  const unsigned workers = fit >= default_workers() ? default_workers() : std::max(1u, static_cast<unsigned>(fit));
  auto integrate = [&](std::size_t P) {
    auto nodes = composite_gauss(ax.start, ax.start + ax.length, P);
    const std::size_t block = 64;
    const std::size_t nb = (nodes.size() + block - 1) / block;
    auto parts = parallel_blocks<double>(
        nb,
        [&](std::size_t b) {
          TorusAverager avg(q, L, dims, stream);
          CompensatedSum<double> acc;
          for (std::size_t i = b * block; i < std::min(nodes.size(), (b + 1) * block); ++i)
            acc.add(nodes[i].second * avg(nodes[i].first));
          return acc.value();
        },
        workers);
    CompensatedSum<double> acc;
    for (double v : parts) acc.add(v);
    est.evaluations += static_cast<std::uint64_t>(nodes.size() * full);
    return acc.value();
  };
  double prev = integrate(panels);
  for (;;) {
    if (panels * 2 > q.max_panels) {
      est.converged = false;
      break;
    }
    panels *= 2;
    double cur = integrate(panels);
    double change = std::abs(cur - prev);
    prev = cur;
    est.error_bound = change;
    if (change <= q.quad_tol * std::abs(cur)) break;
  }
  est.value = std::max(0.0, prev);
  est.panels = panels;
  return est;
}

}  // namespace detail

// ---------------- operations ----------------

inline MomentEstimate exact_torus_moment(const MomentQuery& q) {
  require(q.method == Method::ExactFFT, "exact_torus_moment needs an ExactFFT query");
  auto L = detail::make_layout(q);
  MomentEstimate est;
  ExactBackend be = q.backend;
  if (be == ExactBackend::Auto) {
    std::size_t sup = detail::estimate_sparse_support(L, q.sum.size());
    be = (sup <= 4'000'000) ? ExactBackend::SparseConvolution : ExactBackend::DenseFFT;
  }
  est = (be == ExactBackend::SparseConvolution) ? detail::sparse_moment(q, L) : detail::dense_moment(q, L);
  est.method = Method::ExactFFT;
  est.p = q.p;
  est.normalized = q.normalized;
  if (q.normalized) {
    double m = q.domain.measure();
    est.value /= m;
    est.error_bound /= m;
  }
  return est;
}

namespace detail {

struct MomentBlock {
  double sum = 0, sumsq = 0;
};

// sample mean/variance of |S(x)|^p with x = corner + side * U, U uniform in the unit box
inline MomentEstimate mc_over_box(const ExpSum& sum, double p, const std::vector<double>& corner,
                                  const std::vector<double>& side, std::size_t samples, std::uint64_t seed) {
  if (samples < 100) throw InvalidArgument("Monte Carlo needs at least 100 samples");
  require(p >= 2 || p > 0, "p must be positive");
  const int dim = sum.dim;
  const std::size_t block = 4096;
  const std::size_t nb = (samples + block - 1) / block;
  CounterRng rng(seed, 0x5A3B1E);
  auto parts = parallel_blocks<MomentBlock>(nb, [&](std::size_t b) {
    CompensatedSum<double> s1, s2;
    double x[3] = {0, 0, 0};
    for (std::size_t i = b * block; i < std::min(samples, (b + 1) * block); ++i) {
      for (int a = 0; a < dim; ++a)
        x[a] = corner[static_cast<std::size_t>(a)] +
               side[static_cast<std::size_t>(a)] * rng.uniform_at(i * 3 + static_cast<std::size_t>(a));
      double v = std::pow(std::norm(sum.eval(x)), 0.5 * p);
      s1.add(v);
      s2.add(v * v);
    }
    return MomentBlock{s1.value(), s2.value()};
  });
  CompensatedSum<double> t1, t2;
  for (auto& b : parts) {
    t1.add(b.sum);
    t2.add(b.sumsq);
  }
  const double n = static_cast<double>(samples);
  const double mean = t1.value() / n;
  const double var = std::max(0.0, (t2.value() - n * mean * mean) / (n - 1));
  MomentEstimate est;
  est.method = Method::MonteCarlo;
  est.backend = "monte-carlo";
  est.value = mean;
  est.error_bound = 2.5758293035489 * std::sqrt(var / n);
  est.evaluations = samples;
  est.p = p;
  return est;
}

}  // namespace detail

inline MomentEstimate monte_carlo_moment(const MomentQuery& q) {
  require(q.method == Method::MonteCarlo, "monte_carlo_moment needs a MonteCarlo query");
  require(q.p >= 2, "p must be >= 2");
  require(q.domain.dim() == q.sum.dim, "domain dimension does not match the sum");
  q.domain.validate();
  std::vector<double> corner, side;
  for (auto& a : q.domain.axes) {
    corner.push_back(a.kind == AxisKind::FullPeriod ? 0.0 : a.start);
    side.push_back(a.measure());
  }
  auto est = detail::mc_over_box(q.sum, q.p, corner, side, q.samples, q.seed);
  est.normalized = q.normalized;
  if (!q.normalized) {
    double m = q.domain.measure();
    est.value *= m;
    est.error_bound *= m;
  }
  return est;
}

inline MomentEstimate compute_moment(const MomentQuery& q) {
  return q.method == Method::ExactFFT ? exact_torus_moment(q) : monte_carlo_moment(q);
}

inline ExponentFit fit_growth_exponent(const std::vector<std::pair<double, double>>& scan) {
  require(scan.size() >= 3, "exponent fit needs at least 3 points");
  ExponentFit f;
  for (auto [N, v] : scan) {
    require(N > 0, "scan parameter must be positive");
    if (!(v > 0)) throw InvalidArgument("non-positive moment in scan");
    f.points.emplace_back(std::log2(N), std::log2(v));
  }
  const double n = static_cast<double>(f.points.size());
  double mx = 0, my = 0;
  for (auto [x, y] : f.points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (auto [x, y] : f.points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  require(sxx > 0, "scan parameters must not all coincide");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssres = 0;
  for (auto [x, y] : f.points) {
    double r = y - (f.intercept + f.slope * x);
    ssres += r * r;
  }
  f.r_squared = syy > 0 ? std::clamp(1.0 - ssres / syy, 0.0, 1.0) : 1.0;
  return f;
}

inline ExponentFit fit_growth_exponent(const std::vector<std::pair<double, MomentEstimate>>& scan) {
  std::vector<std::pair<double, double>> v;
  for (auto& [N, e] : scan) v.emplace_back(N, e.value);
  return fit_growth_exponent(v);
}

// ---------------- cube averages ----------------

enum class CubeMethod { MonteCarlo, TensorQuadrature };

struct CubeQuery {
  ExpSum sum;
  std::vector<double> corner;
  double side = 1;
  double p = 2;
  CubeMethod method = CubeMethod::MonteCarlo;
  std::size_t samples = 100000;
  std::uint64_t seed = 1;
  bool certify = true;  // tensor: also run with doubled panels and report the change
};

namespace detail {

// smallest P such that every value times P is an integer (within 1e-9), or 0
inline long long lattice_period(const std::vector<double>& vals) {
  std::vector<double> v = vals;
  std::sort(v.begin(), v.end());
  double g = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    double d = v[i] - v[i - 1];
    if (d > 1e-12 && (g == 0 || d < g)) g = d;
  }
  if (g == 0) g = std::abs(v.empty() ? 1.0 : (v[0] == 0 ? 1.0 : v[0]));
  for (long long P : {std::llround(1.0 / g), 1LL}) {
    if (P <= 0 || P > (1LL << 24)) continue;
    bool ok = true;
    for (double x : v)
      if (std::abs(x * static_cast<double>(P) - std::round(x * static_cast<double>(P))) > 1e-9 * std::max(1.0, std::abs(x * P)))
        ok = false;
    if (ok) return P;
  }
  return 0;
}

}  // namespace detail

// Normalized average (1/R^n) * integral over the cube of |S|^p. value is the moment; norm() the L^p_# average.
inline MomentEstimate cube_moment(const CubeQuery& q) {
  require(q.side > 0, "cube side must be positive");
  require(static_cast<int>(q.corner.size()) == q.sum.dim, "corner dimension mismatch");
  require(q.p >= 2, "p must be >= 2");
  if (q.method == CubeMethod::MonteCarlo) {
    std::vector<double> side(q.corner.size(), q.side);
    auto est = detail::mc_over_box(q.sum, q.p, q.corner, side, q.samples, q.seed);
    est.normalized = true;
    return est;
  }
  if (q.sum.dim != 2) throw UnsupportedMode("tensor quadrature is implemented for planar sums");
  const std::size_t n = q.sum.size();
  std::vector<double> f0(n);
  for (std::size_t j = 0; j < n; ++j) f0[j] = q.sum.freqs[j][0];
  long long P = detail::lattice_period(f0);
  if (P == 0) throw UnsupportedMode("tensor quadrature needs first-axis frequencies on a lattice");
  const double periods = q.side / static_cast<double>(P);
  if (std::abs(periods - std::round(periods)) > 1e-9 || periods < 1)
    throw UnsupportedMode("cube side must be a whole number of first-axis periods");
  std::vector<long long> k(n);
  long long kmin = 0, kmax = 0;
  for (std::size_t j = 0; j < n; ++j) {
    k[j] = std::llround(f0[j] * static_cast<double>(P));
    if (j == 0 || k[j] < kmin) kmin = k[j];
    if (j == 0 || k[j] > kmax) kmax = k[j];
  }
  double f1min = 1e300, f1max = -1e300;
  for (auto& f : q.sum.freqs) {
    f1min = std::min(f1min, f[1]);
    f1max = std::max(f1max, f[1]);
  }
  const bool even = is_even_integer(q.p);
  const auto half = static_cast<long long>(std::ceil(q.p / 2));
  const std::size_t M0 = next_pow2(static_cast<std::size_t>(2 * half * (kmax - kmin) + 2)) * (even ? 1 : 4);
  const double bw = static_cast<double>(half) * (f1max - f1min);
  std::size_t panels = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(bw * q.side / 2.0)));
  const double c0 = q.corner[0], c1 = q.corner[1];
  std::vector<cplx> base(n);
  for (std::size_t j = 0; j < n; ++j) base[j] = q.sum.coeffs[j] * e_turns(frac_product(c0, f0[j]));
  MomentEstimate est;
  est.method = Method::ExactFFT;
  est.backend = "tensor-quadrature";
  est.p = q.p;
  auto integrate = [&](std::size_t Pn) {
    auto nodes = composite_gauss(c1, c1 + q.side, Pn);
    const std::size_t block = 256;
    const std::size_t nb = (nodes.size() + block - 1) / block;
    auto parts = parallel_blocks<double>(nb, [&](std::size_t b) {
      FftGrid grid({static_cast<int>(M0)});
      CompensatedSum<double> acc;
      for (std::size_t i = b * block; i < std::min(nodes.size(), (b + 1) * block); ++i) {
        grid.clear();
        cplx* g = grid.data();
        const double x1 = nodes[i].first;
        for (std::size_t j = 0; j < n; ++j) {
          long long kk = k[j] - kmin;
          g[grid.index(&kk)] += base[j] * e_turns(frac_product(x1, q.sum.freqs[j][1]));
        }
        grid.execute();
        CompensatedSum<double> row;
        for (std::size_t m = 0; m < M0; ++m) row.add(std::pow(std::norm(g[m]), 0.5 * q.p));
        acc.add(nodes[i].second * row.value() / static_cast<double>(M0));
      }
      return acc.value();
    });
    CompensatedSum<double> acc;
    for (double v : parts) acc.add(v);
    est.evaluations += nodes.size() * M0;
    return acc.value() / q.side;
  };
  double v = integrate(panels);
  if (q.certify) {
    double v2 = integrate(2 * panels);
    est.error_bound = std::abs(v2 - v);
    v = v2;
    panels *= 2;
  }
  est.value = v;
  est.panels = panels;
  return est;
}

inline MomentEstimate cube_moment(const ExpSumSpec& spec, std::vector<double> corner, double side, double p,
                                  CubeMethod method = CubeMethod::MonteCarlo, std::size_t samples = 100000,
                                  std::uint64_t seed = 1) {
  require(spec.scaling == Scaling::NormalizedFrequencies, "cube_moment expects normalized frequencies");
  CubeQuery q;
  q.sum = spec.materialize();
  q.corner = std::move(corner);
  q.side = side;
  q.p = p;
  q.method = method;
  q.samples = samples;
  q.seed = seed;
  return cube_moment(q);
}

// ---------------- records ----------------

inline nlohmann::json to_json(const SlabDomain& d) {
  nlohmann::json a = nlohmann::json::array();
  for (auto& ax : d.axes) {
    if (ax.kind == AxisKind::FullPeriod)
      a.push_back({{"kind", "FullPeriod"}});
    else
      a.push_back({{"kind", "Truncated"}, {"start", ax.start}, {"length", ax.length}});
  }
  return a;
}

inline nlohmann::json to_json(const MomentEstimate& e) {
  return {{"value", e.value},
          {"error_bound", e.error_bound},
          {"norm", e.norm()},
          {"norm_error", e.norm_error()},
          {"method", e.method == Method::ExactFFT ? "ExactFFT" : "MonteCarlo"},
          {"backend", e.backend},
          {"evaluations", e.evaluations},
          {"p", e.p},
          {"normalized", e.normalized},
          {"converged", e.converged}};
}

inline nlohmann::json to_json(const ExponentFit& f) {
  nlohmann::json pts = nlohmann::json::array();
  for (auto [x, y] : f.points) pts.push_back({x, y});
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}, {"points", pts}};
}

// columnar text: N  moment  stderr
inline void write_moment_dat(std::ostream& os, const std::vector<std::pair<double, MomentEstimate>>& scan) {
  os << "# N moment stderr\n";
  os.precision(17);
  for (auto& [N, e] : scan) os << N << ' ' << e.value << ' ' << e.sigma() << '\n';
}

}  // namespace smallcap
