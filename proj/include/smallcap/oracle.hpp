#pragma once

// Brute-force references. Deliberately slow and single-threaded; nothing here is used by the
// production paths, and nothing here calls the kernels it is meant to check.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <map>
#include <string>
#include <vector>

#include "core.hpp"
#include "expsum.hpp"
#include "geometry.hpp"
#include "incidence.hpp"
#include "moments.hpp"
#include "random.hpp"

namespace smallcap::oracle {

struct OracleReport {
  double primary = 0, oracle = 0;
  std::string instance;
  double relative_gap() const { return std::abs(primary - oracle) / std::max(std::abs(oracle), 1e-300); }
};

inline nlohmann::json to_json(const OracleReport& r) {
  return {{"primary_value", r.primary}, {"oracle_value", r.oracle}, {"relative_gap", r.relative_gap()}, {"instance", r.instance}};
}

// ---------------- dense quadrature ----------------

struct QuadratureResult {
  double value = 0;
  std::vector<std::size_t> nodes_per_axis;
  std::uint64_t evaluations = 0;
  bool extrapolated = false;
};

namespace detail {

inline double midpoint_moment(const ExpSum& s, double p, const SlabDomain& d, const std::vector<std::size_t>& n) {
  const int dim = d.dim();
  std::uint64_t total = 1;
  for (auto k : n) total *= k;
  long double acc = 0;
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (std::uint64_t idx = 0; idx < total; ++idx) {
    std::uint64_t r = idx;
    for (std::size_t a = 0; a < static_cast<std::size_t>(dim); ++a) {
      const auto& ax = d.axes[a];
      double start = ax.kind == AxisKind::FullPeriod ? 0.0 : ax.start;
      x[a] = start + ax.measure() * (static_cast<double>(r % n[a]) + 0.5) / static_cast<double>(n[a]);
      r /= n[a];
    }
    // plain loop over the terms, no shared evaluator
    double re = 0, im = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      double ph = 0;
      for (std::size_t a = 0; a < static_cast<std::size_t>(dim); ++a) {
        double t = s.freqs[j][a] * x[a];
        ph += t - std::floor(t);
      }
      ph *= 2 * std::numbers::pi;
      double c = std::cos(ph), sn = std::sin(ph);
      re += s.coeffs[j].real() * c - s.coeffs[j].imag() * sn;
      im += s.coeffs[j].real() * sn + s.coeffs[j].imag() * c;
    }
    acc += std::pow(re * re + im * im, 0.5 * p);
  }
  return static_cast<double>(acc / static_cast<long double>(total));
}

inline std::uint64_t grid_size(const std::vector<std::size_t>& n) {
  std::uint64_t t = 1;
  for (auto k : n) t *= k;
  return t;
}

}  // namespace detail

// Midpoint rule; the mean of |S|^p over the domain (times the measure if !normalized).
// nodes = 0 picks 4x the Nyquist count on each axis separately; a positive value is used on
// every axis and refused if it is under twice the Nyquist count of some axis.
inline QuadratureResult dense_quadrature_moment(const ExpSum& s, double p, const SlabDomain& d, std::size_t nodes = 0,
                                                bool normalized = true) {
  require(d.dim() == s.dim, "domain dimension does not match the sum");
  d.validate();
  std::vector<std::size_t> nyq(static_cast<std::size_t>(s.dim), 1);
  for (std::size_t a = 0; a < static_cast<std::size_t>(s.dim); ++a) {
    double lo = 1e300, hi = -1e300;
    for (auto& f : s.freqs) lo = std::min(lo, f[a]), hi = std::max(hi, f[a]);
    double span = s.size() ? hi - lo : 0;
    nyq[a] = static_cast<std::size_t>(std::ceil(2 * span * d.axes[a].measure())) + 1;
  }
  std::vector<std::size_t> n(nyq.size());
  for (std::size_t a = 0; a < n.size(); ++a) {
    if (nodes && nodes < 2 * nyq[a])
      throw InvalidArgument("under-resolved grid: " + std::to_string(nodes) + " nodes on axis " + std::to_string(a) +
                            ", need at least " + std::to_string(2 * nyq[a]));
    n[a] = nodes ? nodes : 4 * nyq[a];
  }
  const bool trunc = d.truncated_count() > 0;
  auto fine = n;
  for (std::size_t a = 0; a < n.size(); ++a)
    if (d.axes[a].kind == AxisKind::Truncated) fine[a] *= 2;
  if (static_cast<double>(detail::grid_size(trunc ? fine : n)) > 1e9)
    throw CapacityError("dense quadrature grid exceeds 1e9 nodes");
  QuadratureResult r;
  r.nodes_per_axis = n;
  r.value = detail::midpoint_moment(s, p, d, n);
  r.evaluations = detail::grid_size(n);
  if (trunc) {
    // periodic axes are exact already; truncated axes carry an h^2 error, removed by Richardson
    double b = detail::midpoint_moment(s, p, d, fine);
    r.value = (4 * b - r.value) / 3;
    r.extrapolated = true;
    r.evaluations += detail::grid_size(fine);
  }
  if (!normalized) r.value *= d.measure();
  return r;
}

// ---------------- energy ----------------

inline std::uint64_t naive_energy(const std::vector<Vec3>& pts, double tol = 0) {
  if (pts.size() > 40) throw CapacityError("naive_energy is capped at 40 points");
  std::uint64_t c = 0;
  for (auto& a : pts)
    for (auto& b : pts)
      for (auto& e : pts)
        for (auto& f : pts) {
          bool ok = true;
          for (int k = 0; k < 3; ++k)
            if (std::abs((a[k] + b[k]) - (e[k] + f[k])) > tol) ok = false;
          if (ok) ++c;
        }
  return c;
}

// ---------------- volumes ----------------

struct VolumeEstimate {
  double value = 0, ci = 0;
  bool below_resolution = false;  // no hits: the volume is only known to be < ~ 4.6 |A| / samples
};

// |A ∩ B ∩ region| by rejection sampling inside A
template <std::size_t D>
VolumeEstimate mc_volume(const OrientedBox<D>& a, const OrientedBox<D>& b, std::size_t samples, std::uint64_t seed,
                         const OrientedBox<D>* region = nullptr) {
  require(samples > 0, "need samples");
  CounterRng rng(seed, 0x301A);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    Vec<D> x = a.center;
    for (std::size_t i = 0; i < D; ++i) x = x + rng.uniform(-a.half[i], a.half[i]) * a.axes[i];
    // membership by projection, written out here rather than calling contains()
    auto inside = [&](const OrientedBox<D>& c) {
      for (std::size_t i = 0; i < D; ++i) {
        double t = 0;
        for (std::size_t k = 0; k < D; ++k) t += (x[k] - c.center[k]) * c.axes[i][k];
        if (std::abs(t) > c.half[i]) return false;
      }
      return true;
    };
    if (inside(b) && (!region || inside(*region))) ++hits;
  }
  double va = 1;
  for (double h : a.half) va *= 2 * h;
  double f = static_cast<double>(hits) / static_cast<double>(samples);
  VolumeEstimate v;
  v.value = va * f;
  v.ci = 2.5758293035489 * va * std::sqrt(f * (1 - f) / static_cast<double>(samples));
  v.below_resolution = hits == 0;
  if (v.below_resolution) v.ci = 4.6 * va / static_cast<double>(samples);
  return v;
}

// ---------------- rich cubes ----------------

namespace detail {

// separating axes by projecting every corner; independent of the radius formula in geometry
template <std::size_t D> bool corners_overlap(const OrientedBox<D>& a, const OrientedBox<D>& b) {
  auto ca = a.corners(), cb = b.corners();
  std::vector<Vec<D>> axes;
  for (auto& u : a.axes) axes.push_back(u);
  for (auto& u : b.axes) axes.push_back(u);
  if constexpr (D == 3)
    for (auto& u : a.axes)
      for (auto& v : b.axes) {
        Vec3 c{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
        double n = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        if (n > 1e-9) axes.push_back({c[0] / n, c[1] / n, c[2] / n});
      }
  for (auto& u : axes) {
    double alo = 1e300, ahi = -1e300, blo = 1e300, bhi = -1e300;
    for (auto& p : ca) {
      double t = 0;
      for (std::size_t k = 0; k < D; ++k) t += p[k] * u[k];
      alo = std::min(alo, t), ahi = std::max(ahi, t);
    }
    for (auto& p : cb) {
      double t = 0;
      for (std::size_t k = 0; k < D; ++k) t += p[k] * u[k];
      blo = std::min(blo, t), bhi = std::max(bhi, t);
    }
    // closed boxes, as in the primary
    if (ahi < blo || bhi < alo) return false;
  }
  return true;
}

}  // namespace detail

template <std::size_t D>
RichCubeHistogram naive_rich_cubes(const std::vector<const BoxFamily<D>*>& fams, double side, double inflation = 1.5) {
  require(!fams.empty() && fams.size() <= 3, "1 to 3 families");
  const auto n = static_cast<long long>(std::ceil(1 / side - 1e-9));
  double cubes = std::pow(static_cast<double>(n), static_cast<double>(D));
  std::size_t boxes = 0;
  for (auto* f : fams) boxes += f->boxes.size();
  if (cubes > 1e4 || boxes > 1e3) throw CapacityError("naive_rich_cubes is capped at 1e4 cubes x 1e3 boxes");
  RichCubeHistogram h;
  h.cube_side = side;
  h.families = static_cast<int>(fams.size());
  h.total_cubes = static_cast<std::size_t>(cubes);
  for (long long idx = 0; idx < static_cast<long long>(cubes); ++idx) {
    Vec<D> lo, hi;
    long long r = idx;
    std::array<long long, D> q{};
    for (std::size_t k = D; k-- > 0;) {
      q[k] = r % n;
      r /= n;
    }
    for (std::size_t k = 0; k < D; ++k) {
      double c = (static_cast<double>(q[k]) + 0.5) * side;
      lo[k] = c - 0.5 * inflation * side;
      hi[k] = c + 0.5 * inflation * side;
    }
    auto cube = OrientedBox<D>::axis_aligned(lo, hi);
    std::array<int, 3> rich{0, 0, 0};
    for (std::size_t f = 0; f < fams.size(); ++f)
      for (auto& b : fams[f]->boxes)
        if (detail::corners_overlap(b, cube)) ++rich[f];
    if (rich[0] || rich[1] || rich[2]) ++h.counts[rich];
  }
  return h;
}

}  // namespace smallcap::oracle
