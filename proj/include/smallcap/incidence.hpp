#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "expsum.hpp"
#include "geometry.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace smallcap {

inline constexpr double kComparability = 4.0;  // "almost rectangular" constant

// ---------------- families ----------------

enum class FamilyKind { Unstructured, StructuredTubes, VinogradovPlates };

struct FamilyStructure {
  FamilyKind kind = FamilyKind::Unstructured;
  double alpha = 0;
  double W = 1;          // planar: R^{1-alpha}; plates: delta^{3 alpha - 2}
  double period = 0;     // plates: x-period 1/W; tubes: fat tube width
  int N = 0;             // planar per-fat-tube cap
  double t_max = 0;      // planar |T_max| = N W R^{1/2}
  int directions = 0;    // planar
  std::array<int, 3> M{0, 0, 0};   // plates: intervals per broad family
  std::array<int, 3> Ni{0, 0, 0};  // plates: plates per fat plate
  bool saturated = false;
};

// Boxes plus the declared structure. For plate families `slab` means each plate is
// the full slab truncated by [0,1]^3 (the in-plane half dims are just "large").
template <std::size_t D> struct BoxFamily {
  std::vector<OrientedBox<D>> boxes;
  double delta = 0;
  FamilyStructure structure;
  std::vector<int> broad;  // plates: broad interval index per box (0,1,2)
  bool slab = false;

  std::size_t size() const { return boxes.size(); }
  double total_volume() const {
    double v = 0;
    for (auto& b : boxes) v += b.volume();
    return v;
  }
  // sub-family with a given broad index
  BoxFamily subfamily(int i) const {
    BoxFamily f;
    f.delta = delta;
    f.structure = structure;
    f.slab = slab;
    for (std::size_t k = 0; k < boxes.size(); ++k)
      if (broad[k] == i) {
        f.boxes.push_back(boxes[k]);
        f.broad.push_back(i);
      }
    return f;
  }
};

using TubeFamily = BoxFamily<2>;
using PlateFamily = BoxFamily<3>;

// ---------------- plates and planks ----------------

// delta-interval I = [lo, lo + delta]; plate through `center` with normal t(mid I).
inline Box3 vinogradov_plate(double lo, double delta, const Vec3& center, double in_plane_half = 0.5) {
  require(delta > 0 && delta <= 1, "plate thickness must lie in (0,1]");
  require(lo >= -1e-12 && lo + delta <= 1 + 1e-12, "interval must lie in [0,1]");
  auto fr = frenet_frame(std::clamp(lo + 0.5 * delta, 0.0, 1.0));
  Box3 s;
  s.center = center;
  s.axes = {fr.t_vec, fr.n_vec, fr.b_vec};
  s.half = {0.5 * delta, in_plane_half, in_plane_half};
  s.tag = BoxTag::Plate;
  for (auto& c : s.corners())
    for (double x : c)
      if (x < -1e-12 || x > 1 + 1e-12) s.clipped = true;
  return s;
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  double c = std::abs(dot(a, b)) / (norm(a) * norm(b));
  double s = norm(cross(a, b)) / (norm(a) * norm(b));
  return std::atan2(s, c);
}

struct PlateIntersection {
  double volume = 0;
  double predicted = 0;  // delta^2 / D
  double angle = 0;
};

inline PlateIntersection plate_intersection_volume(const Box3& s1, const Box3& s2) {
  s1.validate();
  s2.validate();
  PlateIntersection r;
  r.angle = angle_between(s1.axes[0], s2.axes[0]);
  const double delta = 2 * std::min(s1.half[0], s2.half[0]);
  r.predicted = r.angle > 0 ? delta * delta / r.angle : s1.volume();
  r.volume = intersection_volume(s1, s2);
  return r;
}

// plank (c delta, c delta / D, c) centred at the origin: short axis t(t0), long axis t(t0) x t(t0+D)
inline Box3 shrunk_plank(double t0, double D, double delta, double c) {
  Vec3 t = curve_tangent(t0);
  Vec3 l = normalized(cross(t, curve_tangent(std::min(1.0, t0 + D))));
  Vec3 m = cross(l, t);
  Box3 p;
  p.center = {0, 0, 0};
  p.axes = {t, m, l};
  p.half = {0.5 * c * delta, 0.5 * c * delta / D, 0.5 * c};
  p.tag = BoxTag::Plank;
  return p;
}

// J = [t0, t0 + D], plate for I = [ilo, ilo + delta] inside J, both centred at the origin
inline bool plank_in_plate_check(double t0, double D, double ilo, double delta, double c) {
  require(D >= delta * (1 - 1e-12), "J must be at least as long as I");
  require(ilo >= t0 - 1e-12 && ilo + delta <= t0 + D + 1e-12, "I must lie inside J");
  require(t0 >= 0 && t0 + D <= 1 + 1e-12, "J must lie in [0,1]");
  Box3 P;
  if (D <= delta * (1 + 1e-12)) {
    // J = I: the long direction degenerates; use the plate's own frame
    auto fr = frenet_frame(t0 + 0.5 * D);
    P.axes = {fr.t_vec, fr.n_vec, fr.b_vec};
    P.half = {0.5 * c * delta, 0.5 * c, 0.5 * c};
  } else {
    P = shrunk_plank(t0, D, delta, c);
  }
  Box3 S = vinogradov_plate(ilo, delta, {0, 0, 0});
  for (auto& x : P.corners())
    if (!S.contains(x, 1e-12)) return false;
  return true;
}

// Box with dims (R s^2, R s, R) along the frame at the middle of J = [a, a + s].
inline Box3 enclosing_box(double a, double sigma, double R) {
  require(R > 1, "R must exceed 1");
  require(sigma >= std::cbrt(1.0 / R) * (1 - 1e-12), "sigma must be at least R^{-1/3}");
  require(a >= 0 && a + sigma <= 1 + 1e-12, "J must lie in [0,1]");
  auto fr = frenet_frame(a + 0.5 * sigma);
  Box3 b;
  b.axes = {fr.t_vec, fr.n_vec, fr.b_vec};
  b.half = {0.5 * R * sigma * sigma, 0.5 * R * sigma, 0.5 * R};
  b.tag = BoxTag::Plank;
  return b;
}

// origin-centred (R^{1/3}, R^{2/3}, R) planks for the R^{-1/3}-intervals tiling J
inline std::vector<Box3> vinogradov_planks(double a, double sigma, double R) {
  const double len = std::cbrt(1.0 / R);
  const auto count = std::max<long long>(1, std::llround(sigma / len));
  std::vector<Box3> out;
  for (long long i = 0; i < count; ++i) {
    auto fr = frenet_frame(std::min(1.0, a + (i + 0.5) * len));
    Box3 p;
    p.axes = {fr.t_vec, fr.n_vec, fr.b_vec};
    p.half = {0.5 * std::cbrt(R), 0.5 * std::cbrt(R) * std::cbrt(R), 0.5 * R};
    p.tag = BoxTag::Plank;
    out.push_back(p);
  }
  return out;
}

// fraction of sampled plank corners inside `factor` times the enclosing box
inline double enclosing_box_coverage(double a, double sigma, double R, double factor, std::size_t samples,
                                     std::uint64_t seed) {
  Box3 box = enclosing_box(a, sigma, R);
  for (auto& h : box.half) h *= factor;
  auto planks = vinogradov_planks(a, sigma, R);
  CounterRng rng(seed, 0xB0C5);
  std::size_t inside = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto& p = planks[rng.below(planks.size())];
    auto cs = p.corners();
    if (box.contains(cs[rng.below(cs.size())], 1e-12)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(samples);
}

// ---------------- L2 overlap ----------------

namespace detail {

inline double direction_angle(const Box2& b) {
  double a = std::atan2(b.axes[1][1], b.axes[1][0]);  // long axis is axes[1]
  if (a < 0) a += std::numbers::pi;
  if (a >= std::numbers::pi) a -= std::numbers::pi;
  return a;
}

inline double region_clipped_volume(const Box3& a, const Box3& b) {
  if (!boxes_overlap(a, b)) return 0;
  auto P = box_polyhedron(a);
  auto clip_by = [&](const Box3& c) {
    for (std::size_t i = 0; i < 3 && P.faces.size() >= 4; ++i) {
      double m = dot(c.axes[i], c.center);
      P = clip_halfspace(P, c.axes[i], m + c.half[i]);
      P = clip_halfspace(P, -1.0 * c.axes[i], -(m - c.half[i]));
    }
  };
  clip_by(b);
  clip_by(Box3::axis_aligned({0, 0, 0}, {1, 1, 1}));
  if (P.faces.size() < 4) return 0;
  return polyhedron_volume(P, a.center);
}

}  // namespace detail

// || sum 1_B ||_2^2 = sum over ordered pairs of |B1 ∩ B2|.
inline double kakeya_l2_overlap(const TubeFamily& fam) {
  require(!fam.boxes.empty(), "empty family");
  const double res = fam.delta > 0 ? fam.delta : 1e-3;
  // angular buckets; within a bucket nearly parallel tubes are pruned by their normal offsets
  std::map<long long, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < fam.boxes.size(); ++i)
    buckets[static_cast<long long>(std::floor(detail::direction_angle(fam.boxes[i]) / res))].push_back(i);
  std::vector<std::size_t> order;
  for (auto& [k, v] : buckets) order.insert(order.end(), v.begin(), v.end());
  std::vector<double> radius(fam.boxes.size());
  for (std::size_t i = 0; i < fam.boxes.size(); ++i) radius[i] = norm(fam.boxes[i].half);
  CompensatedSum<double> acc;
  for (auto& b : fam.boxes) acc.add(b.volume());
  for (std::size_t ii = 0; ii < order.size(); ++ii) {
    const auto& a = fam.boxes[order[ii]];
    for (std::size_t jj = ii + 1; jj < order.size(); ++jj) {
      const auto& b = fam.boxes[order[jj]];
      if (norm(a.center - b.center) > radius[order[ii]] + radius[order[jj]]) continue;
      acc.add(2 * intersection_volume(a, b));
    }
  }
  return acc.value();
}

inline double kakeya_l2_overlap(const PlateFamily& fam) {
  require(!fam.boxes.empty(), "empty family");
  CompensatedSum<double> acc;
  for (std::size_t i = 0; i < fam.boxes.size(); ++i) {
    const auto& a = fam.boxes[i];
    acc.add(fam.slab ? detail::region_clipped_volume(a, a) : a.volume());
    for (std::size_t j = i + 1; j < fam.boxes.size(); ++j) {
      const auto& b = fam.boxes[j];
      if (std::abs(dot(a.axes[0], b.axes[0])) > 1 - 1e-14 &&
          std::abs(dot(b.center - a.center, a.axes[0])) > a.half[0] + b.half[0])
        continue;  // parallel and disjoint
      acc.add(2 * (fam.slab ? detail::region_clipped_volume(a, b) : intersection_volume(a, b)));
    }
  }
  return acc.value();
}

// Pixel-centre rasterization of sum 1_T squared; the independent check for the planar case.
inline double kakeya_l2_raster(const TubeFamily& fam, double pixel) {
  require(pixel > 0, "pixel must be positive");
  Vec<2> lo{1e300, 1e300}, hi{-1e300, -1e300};
  for (auto& b : fam.boxes) {
    Vec<2> l, h;
    b.aabb(l, h);
    for (int k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], l[k]);
      hi[k] = std::max(hi[k], h[k]);
    }
  }
  const auto nx = static_cast<std::size_t>(std::ceil((hi[0] - lo[0]) / pixel));
  const auto ny = static_cast<std::size_t>(std::ceil((hi[1] - lo[1]) / pixel));
  std::vector<std::uint32_t> cnt(nx * ny, 0);
  for (auto& b : fam.boxes) {
    Vec<2> l, h;
    b.aabb(l, h);
    auto i0 = static_cast<std::size_t>(std::max(0.0, std::floor((l[0] - lo[0]) / pixel)));
    auto i1 = std::min(nx, static_cast<std::size_t>(std::ceil((h[0] - lo[0]) / pixel)) + 1);
    auto j0 = static_cast<std::size_t>(std::max(0.0, std::floor((l[1] - lo[1]) / pixel)));
    auto j1 = std::min(ny, static_cast<std::size_t>(std::ceil((h[1] - lo[1]) / pixel)) + 1);
    for (std::size_t i = i0; i < i1; ++i)
      for (std::size_t j = j0; j < j1; ++j) {
        Vec<2> c{lo[0] + (i + 0.5) * pixel, lo[1] + (j + 0.5) * pixel};
        if (b.contains(c, 0)) ++cnt[i * ny + j];
      }
  }
  double s = 0;
  for (auto c : cnt) s += static_cast<double>(c) * c;
  return s * pixel * pixel;
}

// ---------------- generators ----------------

namespace detail {

inline Box2 planar_tube(double theta, double offset, double delta, const Vec<2>& pivot, int group) {
  Vec<2> u{std::cos(theta), std::sin(theta)}, nu{-std::sin(theta), std::cos(theta)};
  Box2 t;
  double c0 = dot(pivot, nu);
  t.center = pivot + (offset - c0) * nu;
  t.axes = {nu, u};
  t.half = {0.5 * delta, 0.5};
  t.tag = BoxTag::Tube2D;
  t.group = group;
  return t;
}

}  // namespace detail

struct TubeOptions {
  double occupancy = 1.0;           // probability a fat tube receives tubes at all
  bool saturate = true;             // occupied fat tubes hold exactly N tubes
  std::vector<Vec<2>> focal_points; // aim tubes through these points where the budget allows
};

// delta = R^{-1/2}; directions j*delta over [0, 1) radians; per direction a window of
// offsets of length 1 around the unit square's centre, cut into W = R^{1-alpha} fat tubes.
inline TubeFamily generate_structured_tubes(double delta, double alpha, int N, std::uint64_t seed,
                                            const TubeOptions& opt = {}) {
  require(delta > 0 && delta <= 0.5, "delta must lie in (0, 1/2]");
  require(alpha >= 0.5 - 1e-12 && alpha <= 1 + 1e-12, "alpha must lie in [1/2, 1]");
  require(N >= 1, "N must be positive");
  const double R = 1 / (delta * delta);
  const double W = std::pow(R, 1 - alpha);
  const double fat = 1 / W;
  const auto slots = static_cast<int>(std::floor(fat / delta + 1e-9));
  const auto nfat = static_cast<int>(std::floor(W + 1e-9));
  if (N > slots)
    throw InvalidArgument("infeasible: N=" + std::to_string(N) + " exceeds " + std::to_string(slots) +
                          " slots per fat tube");
  const auto ndir = static_cast<int>(std::floor(1 / delta + 1e-9));
  TubeFamily fam;
  fam.delta = delta;
  fam.structure.kind = FamilyKind::StructuredTubes;
  fam.structure.alpha = alpha;
  fam.structure.W = W;
  fam.structure.period = fat;
  fam.structure.N = N;
  fam.structure.directions = ndir;
  fam.structure.t_max = N * W * std::sqrt(R);
  fam.structure.saturated = opt.saturate && opt.occupancy >= 1;
  CounterRng rng(seed, 0x7B5);
  const Vec<2> pivot{0.5, 0.5};
  for (int d = 0; d < ndir; ++d) {
    const double theta = d * delta;
    Vec<2> nu{-std::sin(theta), std::cos(theta)};
    const double lo = dot(pivot, nu) - 0.5;
    std::vector<std::vector<int>> chosen(static_cast<std::size_t>(nfat));
    for (auto& p : opt.focal_points) {
      double off = dot(p, nu) - lo;
      auto f = static_cast<int>(std::floor(off / fat));
      if (f < 0 || f >= nfat) continue;
      int s = std::clamp(static_cast<int>(std::floor((off - f * fat) / delta)), 0, slots - 1);
      auto& c = chosen[static_cast<std::size_t>(f)];
      if (static_cast<int>(c.size()) < N && std::find(c.begin(), c.end(), s) == c.end()) c.push_back(s);
    }
    for (int f = 0; f < nfat; ++f) {
      auto& c = chosen[static_cast<std::size_t>(f)];
      bool occupied = !c.empty() || rng.uniform() < opt.occupancy;
      if (!occupied) continue;
      int want = opt.saturate ? N : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(N)));
      while (static_cast<int>(c.size()) < want) {
        int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(slots)));
        if (std::find(c.begin(), c.end(), s) == c.end()) c.push_back(s);
      }
      std::sort(c.begin(), c.end());
      for (int s : c) fam.boxes.push_back(detail::planar_tube(theta, lo + f * fat + (s + 0.5) * delta, delta, pivot, d));
    }
  }
  return fam;
}

// m tubes in each of `ndir` distinct directions (j * delta, j random), parallel tubes disjoint.
inline TubeFamily generate_random_tubes(double delta, int ndir, int m, std::uint64_t seed, double theta_lo = 0,
                                        double theta_range = 1.0, bool allow_copies = false) {
  require(delta > 0 && m >= 1 && ndir >= 1, "bad random tube parameters");
  const auto avail = static_cast<int>(std::floor(theta_range / delta + 1e-9));
  require(ndir <= std::max(1, avail), "not enough separated directions");
  CounterRng rng(seed, 0x3A11);
  std::vector<int> dirs(static_cast<std::size_t>(std::max(1, avail)));
  std::iota(dirs.begin(), dirs.end(), 0);
  for (std::size_t i = dirs.size(); i > 1; --i) std::swap(dirs[i - 1], dirs[rng.below(i)]);
  dirs.resize(static_cast<std::size_t>(ndir));
  std::sort(dirs.begin(), dirs.end());
  TubeFamily fam;
  fam.delta = delta;
  const auto nslots = static_cast<int>(std::floor(0.5 / delta));
  for (int d : dirs) {
    double theta = theta_lo + d * delta;
    Vec<2> pivot{0.5, 0.5};
    Vec<2> nu{-std::sin(theta), std::cos(theta)};
    std::set<int> used;
    for (int k = 0; k < m; ++k) {
      int s;
      do {
        s = static_cast<int>(rng.below(static_cast<std::uint64_t>(nslots)));
      } while (!allow_copies && used.count(s) && static_cast<int>(used.size()) < nslots);
      used.insert(s);
      double off = dot(pivot, nu) - 0.25 + (s + 0.5) * delta;
      fam.boxes.push_back(detail::planar_tube(theta, off, delta, pivot, d));
    }
  }
  return fam;
}

inline const std::array<std::pair<double, double>, 3>& broad_intervals() {
  static const std::array<std::pair<double, double>, 3> b{{{0.0, 1.0 / 6}, {1.0 / 3, 0.5}, {2.0 / 3, 1.0}}};
  return b;
}

// delta-intervals [m delta, (m+1) delta] inside a broad interval
inline std::vector<int> intervals_inside(double delta, double a, double b) {
  std::vector<int> out;
  const auto n = static_cast<int>(std::llround(1 / delta));
  for (int m = 0; m < n; ++m)
    if (m * delta >= a - 1e-12 && (m + 1) * delta <= b + 1e-12) out.push_back(m);
  return out;
}

// x-coordinate where the plate's mid-plane meets the line y = z = 1/2
inline double plate_anchor(const Box3& s) {
  const Vec3& n = s.axes[0];
  return (dot(n, s.center) - 0.5 * n[1] - 0.5 * n[2]) / n[0];
}

// Plates for interval I: anchors x_c = (m + (slot + 1/2) / slots) / W for m = 0.. while x_c < 1,
// i.e. the same N slots in every x-period of length 1/W.
inline PlateFamily generate_vinogradov_family(double delta, double alpha, std::array<int, 3> M, std::array<int, 3> Ni,
                                              std::uint64_t seed) {
  require(delta > 0 && delta <= 0.25, "delta must lie in (0, 1/4]");
  require(alpha > 1.0 / 3 && alpha <= 2.0 / 3 + 1e-12, "alpha must lie in (1/3, 2/3]");
  const double W = std::pow(delta, 3 * alpha - 2);
  const double period = 1 / W;
  PlateFamily fam;
  fam.delta = delta;
  fam.slab = true;
  fam.structure.kind = FamilyKind::VinogradovPlates;
  fam.structure.alpha = alpha;
  fam.structure.W = W;
  fam.structure.period = period;
  fam.structure.M = M;
  fam.structure.Ni = Ni;
  CounterRng rng(seed, 0x91A7E);
  for (int i = 0; i < 3; ++i) {
    auto [a, b] = broad_intervals()[static_cast<std::size_t>(i)];
    auto cand = intervals_inside(delta, a, b);
    if (M[static_cast<std::size_t>(i)] < 1 || M[static_cast<std::size_t>(i)] > static_cast<int>(cand.size()))
      throw InvalidArgument("infeasible: M^(" + std::to_string(i + 1) + ")=" + std::to_string(M[static_cast<std::size_t>(i)]) +
                            " but only " + std::to_string(cand.size()) + " intervals available");
    for (std::size_t k = cand.size(); k > 1; --k) std::swap(cand[k - 1], cand[rng.below(k)]);
    cand.resize(static_cast<std::size_t>(M[static_cast<std::size_t>(i)]));
    std::sort(cand.begin(), cand.end());
    for (int m : cand) {
      const Vec3 n = curve_tangent(m * delta + 0.5 * delta);
      // slots of thickness delta along the normal inside one x-period
      const auto slots = static_cast<int>(std::floor(n[0] * period / delta + 1e-9));
      const int want = Ni[static_cast<std::size_t>(i)];
      if (want < 1 || want > slots)
        throw InvalidArgument("infeasible: N^(" + std::to_string(i + 1) + ")=" + std::to_string(want) + " but interval " +
                              std::to_string(m) + " has " + std::to_string(slots) + " slots per period");
      std::vector<int> pick;
      while (static_cast<int>(pick.size()) < want) {
        int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(slots)));
        if (std::find(pick.begin(), pick.end(), s) == pick.end()) pick.push_back(s);
      }
      std::sort(pick.begin(), pick.end());
      for (int rep = 0;; ++rep) {
        bool any = false;
        for (int s : pick) {
          double xc = (rep + (s + 0.5) / slots) * period;
          if (xc >= 1) continue;
          any = true;
          Box3 pl = vinogradov_plate(m * delta, delta, {xc, 0.5, 0.5}, 2.0);
          pl.clipped = false;  // slab semantics: truncation by the cube is intended
          pl.group = m;
          fam.boxes.push_back(pl);
          fam.broad.push_back(i);
        }
        if (!any) break;
      }
    }
  }
  return fam;
}

// ---------------- audit ----------------

struct AuditReport {
  bool pass = true;
  std::vector<std::string> failures;  // e.g. "uniformity", "periodicity"
  std::vector<std::size_t> violating;
  std::string detail;

  void fail(const std::string& kind, std::size_t id, const std::string& why) {
    pass = false;
    if (std::find(failures.begin(), failures.end(), kind) == failures.end()) failures.push_back(kind);
    violating.push_back(id);
    if (detail.size() < 2000) detail += kind + ": box " + std::to_string(id) + " " + why + "\n";
  }
  bool has(const std::string& kind) const { return std::find(failures.begin(), failures.end(), kind) != failures.end(); }
};

inline AuditReport audit_structure(const TubeFamily& fam) {
  AuditReport rep;
  const double delta = fam.delta;
  // directions: one per group, groups delta-separated
  std::map<int, double> dir;
  for (std::size_t i = 0; i < fam.boxes.size(); ++i) {
    double a = detail::direction_angle(fam.boxes[i]);
    auto [it, fresh] = dir.try_emplace(fam.boxes[i].group, a);
    if (!fresh && std::abs(it->second - a) > 1e-12) rep.fail("direction", i, "differs from its group direction");
  }
  std::vector<double> angles;
  for (auto& [g, a] : dir) angles.push_back(a);
  std::sort(angles.begin(), angles.end());
  for (std::size_t k = 1; k < angles.size(); ++k)
    if (angles[k] - angles[k - 1] < delta * (1 - 1e-9)) rep.fail("separation", k, "directions closer than delta");
  // parallel tubes disjoint and at most N per fat tube
  std::map<int, std::vector<std::size_t>> by_dir;
  for (std::size_t i = 0; i < fam.boxes.size(); ++i) by_dir[fam.boxes[i].group].push_back(i);
  const auto& st = fam.structure;
  const Vec<2> pivot{0.5, 0.5};
  for (auto& [g, ids] : by_dir) {
    const auto& ref = fam.boxes[ids.front()];
    const Vec<2> nu = ref.axes[0];
    std::vector<std::pair<double, std::size_t>> offs;
    for (auto i : ids) offs.emplace_back(dot(fam.boxes[i].center, nu), i);
    std::sort(offs.begin(), offs.end());
    for (std::size_t k = 1; k < offs.size(); ++k)
      if (offs[k].first - offs[k - 1].first < delta * (1 - 1e-9)) rep.fail("disjointness", offs[k].second, "overlaps a parallel tube");
    if (st.kind != FamilyKind::StructuredTubes) continue;
    const double lo = dot(pivot, nu) - 0.5;
    std::map<long long, std::vector<std::size_t>> per_fat;
    for (auto [o, i] : offs) per_fat[static_cast<long long>(std::floor((o - lo) / st.period + 1e-12))].push_back(i);
    for (auto& [f, v] : per_fat) {
      if (static_cast<int>(v.size()) > st.N)
        for (auto i : v) rep.fail("uniformity", i, "fat tube holds " + std::to_string(v.size()) + " > N");
      if (st.saturated && static_cast<int>(v.size()) != st.N)
        for (auto i : v) rep.fail("uniformity", i, "saturated family has an underfull fat tube");
    }
  }
  return rep;
}

inline AuditReport audit_structure(const PlateFamily& fam) {
  AuditReport rep;
  const auto& st = fam.structure;
  if (st.kind != FamilyKind::VinogradovPlates) return rep;
  const double delta = fam.delta;
  const double period = st.period;
  std::array<std::set<int>, 3> seen;
  std::map<int, std::vector<std::size_t>> by_interval;
  for (std::size_t i = 0; i < fam.boxes.size(); ++i) {
    const auto& s = fam.boxes[i];
    int b = fam.broad[i];
    int m = s.group;
    auto [lo, hi] = broad_intervals()[static_cast<std::size_t>(b)];
    if (!(m * delta >= lo - 1e-12 && (m + 1) * delta <= hi + 1e-12)) rep.fail("broad", i, "interval outside its broad interval");
    Vec3 n = curve_tangent(m * delta + 0.5 * delta);
    if (norm(n - s.axes[0]) > 1e-12) rep.fail("broad", i, "normal is not t(I)");
    seen[static_cast<std::size_t>(b)].insert(m);
    by_interval[m].push_back(i);
  }
  for (int b = 0; b < 3; ++b)
    if (static_cast<int>(seen[static_cast<std::size_t>(b)].size()) != st.M[static_cast<std::size_t>(b)])
      rep.fail("broad", 0, "family " + std::to_string(b + 1) + " uses " + std::to_string(seen[static_cast<std::size_t>(b)].size()) +
                               " intervals, declared " + std::to_string(st.M[static_cast<std::size_t>(b)]));
  for (auto& [m, ids] : by_interval) {
    std::vector<double> xs;
    for (auto i : ids) xs.push_back(plate_anchor(fam.boxes[i]));
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    auto present = [&](double x) {
      auto it = std::lower_bound(sorted.begin(), sorted.end(), x - 1e-9);
      return it != sorted.end() && std::abs(*it - x) <= 1e-9;
    };
    const int N = st.Ni[static_cast<std::size_t>(fam.broad[ids.front()])];
    std::map<long long, int> per_cell;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      double x = xs[k];
      if (x + period < 1 - 1e-9 && !present(x + period)) rep.fail("periodicity", ids[k], "translate by +1/W missing");
      if (x - period >= -1e-9 && !present(x - period)) rep.fail("periodicity", ids[k], "translate by -1/W missing");
      per_cell[static_cast<long long>(std::floor(x / period + 1e-12))]++;
    }
    for (auto& [c, cnt] : per_cell) {
      bool full_cell = (c + 1) * period <= 1 + 1e-9;
      if (cnt > N || (full_cell && cnt != N))
        for (std::size_t k = 0; k < ids.size(); ++k)
          if (static_cast<long long>(std::floor(xs[k] / period + 1e-12)) == c)
            rep.fail("uniformity", ids[k], "fat plate holds " + std::to_string(cnt) + ", declared " + std::to_string(N));
    }
  }
  return rep;
}

// ---------------- rich cubes ----------------

struct RichCubeHistogram {
  double cube_side = 0;
  std::size_t total_cubes = 0;
  int families = 1;
  std::map<std::array<int, 3>, std::uint64_t> counts;  // exact richness tuple -> cubes (zero tuple omitted)

  std::uint64_t at_least(std::array<int, 3> r) const {
    std::uint64_t s = 0;
    for (auto& [k, c] : counts) {
      bool ok = true;
      for (int i = 0; i < families; ++i)
        if (k[static_cast<std::size_t>(i)] < r[static_cast<std::size_t>(i)]) ok = false;
      if (ok) s += c;
    }
    return s;
  }
  std::uint64_t at_least(int r) const { return at_least({r, families > 1 ? r : 0, families > 2 ? r : 0}); }
  int max_richness(int f) const {
    int m = 0;
    for (auto& [k, c] : counts) m = std::max(m, k[static_cast<std::size_t>(f)]);
    return m;
  }
  bool operator==(const RichCubeHistogram& o) const {
    return total_cubes == o.total_cubes && families == o.families && counts == o.counts;
  }
  // dyadic view: floor(log2 r_i) per family
  std::map<std::array<int, 3>, std::uint64_t> dyadic() const {
    std::map<std::array<int, 3>, std::uint64_t> out;
    for (auto& [k, c] : counts) {
      std::array<int, 3> d{0, 0, 0};
      for (int i = 0; i < 3; ++i) d[static_cast<std::size_t>(i)] = k[static_cast<std::size_t>(i)] > 0 ? 1 << static_cast<int>(std::floor(std::log2(k[static_cast<std::size_t>(i)]))) : 0;
      out[d] += c;
    }
    return out;
  }
};

inline void write_histogram_dat(std::ostream& os, const RichCubeHistogram& h) {
  os << "#";
  for (int i = 0; i < h.families; ++i) os << " r" << (i + 1);
  os << " count\n";
  for (auto& [k, c] : h.counts) {
    for (int i = 0; i < h.families; ++i) os << k[static_cast<std::size_t>(i)] << ' ';
    os << c << '\n';
  }
}

template <std::size_t D> struct RichOptions {
  double inflation = 1.5;
  int hash_factor = 4;  // hash cell = hash_factor cubes per axis
};

// Cubes of side s tile [0,1]^D; a cube's richness for family i is the number of its boxes
// meeting the cube inflated about its centre by 1.5.
template <std::size_t D>
RichCubeHistogram count_rich_cubes(const std::vector<const BoxFamily<D>*>& fams, double side, RichOptions<D> opt = {}) {
  require(!fams.empty() && fams.size() <= 3, "1 to 3 families");
  require(side > 0 && side <= 1, "cube side must lie in (0,1]");
  const auto n = static_cast<long long>(std::ceil(1 / side - 1e-9));
  const long long hf = opt.hash_factor;
  const long long nh = (n + hf - 1) / hf;
  const double hs = side * static_cast<double>(hf);
  const double margin = 0.5 * (opt.inflation - 1) * side;
  RichCubeHistogram hist;
  hist.cube_side = side;
  hist.families = static_cast<int>(fams.size());
  hist.total_cubes = 1;
  for (std::size_t k = 0; k < D; ++k) hist.total_cubes *= static_cast<std::size_t>(n);
  // broad phase: hash cell -> (family, box) of boxes that truly meet the margin-inflated cell
  std::size_t ncell = 1;
  for (std::size_t k = 0; k < D; ++k) ncell *= static_cast<std::size_t>(nh);
  std::vector<std::vector<std::pair<int, std::uint32_t>>> cells(ncell);
  for (std::size_t f = 0; f < fams.size(); ++f) {
    const auto& boxes = fams[f]->boxes;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      Vec<D> lo, hi;
      boxes[b].aabb(lo, hi);
      std::array<long long, D> a{}, z{};
      bool empty = false;
      for (std::size_t k = 0; k < D; ++k) {
        a[k] = std::max(0LL, static_cast<long long>(std::floor((lo[k] - margin) / hs)));
        z[k] = std::min(nh - 1, static_cast<long long>(std::floor((hi[k] + margin) / hs)));
        if (a[k] > z[k]) empty = true;
      }
      if (empty) continue;
      std::array<long long, D> c = a;
      for (;;) {
        Vec<D> clo, chi;
        for (std::size_t k = 0; k < D; ++k) {
          clo[k] = c[k] * hs - margin - 1e-12;
          chi[k] = (c[k] + 1) * hs + margin + 1e-12;
        }
        if (boxes_overlap(boxes[b], OrientedBox<D>::axis_aligned(clo, chi))) {
          std::size_t idx = 0;
          for (std::size_t k = 0; k < D; ++k) idx = idx * static_cast<std::size_t>(nh) + static_cast<std::size_t>(c[k]);
          cells[idx].emplace_back(static_cast<int>(f), static_cast<std::uint32_t>(b));
        }
        std::size_t k = D;
        while (k-- > 0) {
          if (++c[k] <= z[k]) break;
          c[k] = a[k];
          if (k == 0) goto done;
        }
      }
    done:;
    }
  }
  // narrow phase, one slab of hash cells along axis 0 per block
  using Hist = std::map<std::array<int, 3>, std::uint64_t>;
  auto parts = parallel_blocks<Hist>(static_cast<std::size_t>(nh), [&](std::size_t slab) {
    Hist h;
    const std::size_t per_slab = ncell / static_cast<std::size_t>(nh);
    for (std::size_t ci = slab * per_slab; ci < (slab + 1) * per_slab; ++ci) {
      const auto& cand = cells[ci];
      if (cand.empty()) continue;
      std::array<long long, D> hc{};
      std::size_t rem = ci;
      for (std::size_t k = D; k-- > 0;) {
        hc[k] = static_cast<long long>(rem % static_cast<std::size_t>(nh));
        rem /= static_cast<std::size_t>(nh);
      }
      std::array<long long, D> q{}, q0{}, q1{};
      for (std::size_t k = 0; k < D; ++k) {
        q0[k] = hc[k] * hf;
        q1[k] = std::min(n - 1, q0[k] + hf - 1);
        q[k] = q0[k];
      }
      for (;;) {
        Vec<D> lo, hi;
        for (std::size_t k = 0; k < D; ++k) {
          double c = (q[k] + 0.5) * side;
          lo[k] = c - 0.5 * opt.inflation * side;
          hi[k] = c + 0.5 * opt.inflation * side;
        }
        auto cube = OrientedBox<D>::axis_aligned(lo, hi);
        std::array<int, 3> r{0, 0, 0};
        for (auto [f, b] : cand)
          if (boxes_overlap(fams[static_cast<std::size_t>(f)]->boxes[b], cube)) ++r[static_cast<std::size_t>(f)];
        if (r[0] || r[1] || r[2]) ++h[r];
        std::size_t k = D;
        bool fin = false;
        while (k-- > 0) {
          if (++q[k] <= q1[k]) break;
          q[k] = q0[k];
          if (k == 0) fin = true;
        }
        if (fin) break;
      }
    }
    return h;
  });
  for (auto& h : parts)
    for (auto& [k, c] : h) hist.counts[k] += c;
  return hist;
}

// ---------------- JSON ----------------

template <std::size_t D> nlohmann::json to_json(const BoxFamily<D>& f) {
  nlohmann::json j;
  j["delta"] = f.delta;
  j["slab"] = f.slab;
  const auto& s = f.structure;
  j["structure"] = {{"kind", s.kind == FamilyKind::StructuredTubes ? "StructuredTubes"
                             : s.kind == FamilyKind::VinogradovPlates ? "VinogradovPlates"
                                                                       : "Unstructured"},
                    {"alpha", s.alpha}, {"W", s.W}, {"period", s.period}, {"N", s.N}, {"t_max", s.t_max},
                    {"directions", s.directions}, {"M", s.M}, {"Ni", s.Ni}, {"saturated", s.saturated}};
  j["broad"] = f.broad;
  nlohmann::json boxes = nlohmann::json::array();
  for (auto& b : f.boxes) boxes.push_back(to_json(b));
  j["boxes"] = boxes;
  return j;
}

template <std::size_t D> BoxFamily<D> family_from_json(const nlohmann::json& j) {
  BoxFamily<D> f;
  f.delta = j.at("delta").get<double>();
  f.slab = j.value("slab", false);
  const auto& s = j.at("structure");
  std::string kind = s.at("kind").get<std::string>();
  f.structure.kind = kind == "StructuredTubes" ? FamilyKind::StructuredTubes
                     : kind == "VinogradovPlates" ? FamilyKind::VinogradovPlates
                                                  : FamilyKind::Unstructured;
  f.structure.alpha = s.at("alpha").get<double>();
  f.structure.W = s.at("W").get<double>();
  f.structure.period = s.at("period").get<double>();
  f.structure.N = s.at("N").get<int>();
  f.structure.t_max = s.at("t_max").get<double>();
  f.structure.directions = s.at("directions").get<int>();
  f.structure.M = s.at("M").get<std::array<int, 3>>();
  f.structure.Ni = s.at("Ni").get<std::array<int, 3>>();
  f.structure.saturated = s.at("saturated").get<bool>();
  f.broad = j.at("broad").get<std::vector<int>>();
  for (auto& b : j.at("boxes")) f.boxes.push_back(box_from_json<D>(b));
  return f;
}

}  // namespace smallcap
