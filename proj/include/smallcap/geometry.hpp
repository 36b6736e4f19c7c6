#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"

namespace smallcap {

enum class BoxTag { Tube2D, Plate, Plank, Cube, CapBox, Generic };

inline const char* to_string(BoxTag t) {
  switch (t) {
    case BoxTag::Tube2D: return "Tube2D";
    case BoxTag::Plate: return "Plate";
    case BoxTag::Plank: return "Plank";
    case BoxTag::Cube: return "Cube";
    case BoxTag::CapBox: return "CapBox";
    case BoxTag::Generic: return "Generic";
  }
  return "?";
}

inline BoxTag box_tag_from_string(const std::string& s) {
  for (BoxTag t : {BoxTag::Tube2D, BoxTag::Plate, BoxTag::Plank, BoxTag::Cube, BoxTag::CapBox, BoxTag::Generic})
    if (s == to_string(t)) return t;
  throw InvalidArgument("unknown box tag '" + s + "'");
}

// Tubes, plates, planks and caps: center, orthonormal axes, half side lengths.
template <std::size_t D> struct OrientedBox {
  Vec<D> center{};
  std::array<Vec<D>, D> axes{};
  Vec<D> half{};
  BoxTag tag = BoxTag::Generic;
  int group = -1;        // direction / interval index inside a family
  bool clipped = false;  // box sticks out of its intended region

  static OrientedBox axis_aligned(const Vec<D>& lo, const Vec<D>& hi) {
    OrientedBox b;
    for (std::size_t i = 0; i < D; ++i) {
      b.center[i] = 0.5 * (lo[i] + hi[i]);
      b.half[i] = 0.5 * (hi[i] - lo[i]);
      b.axes[i] = Vec<D>{};
      b.axes[i][i] = 1;
    }
    return b;
  }

  double volume() const {
    double v = 1;
    for (double h : half) v *= 2 * h;
    return v;
  }

  Vec<D> local(const Vec<D>& x) const {
    Vec<D> d = x - center, out{};
    for (std::size_t i = 0; i < D; ++i) out[i] = dot(d, axes[i]);
    return out;
  }

  bool contains(const Vec<D>& x, double rel_tol = 1e-12) const {
    auto l = local(x);
    for (std::size_t i = 0; i < D; ++i)
      if (std::abs(l[i]) > half[i] * (1 + rel_tol) + 1e-15) return false;
    return true;
  }

  std::vector<Vec<D>> corners() const {
    std::vector<Vec<D>> out;
    for (unsigned m = 0; m < (1u << D); ++m) {
      Vec<D> p = center;
      for (std::size_t i = 0; i < D; ++i) p = p + ((m >> i) & 1 ? half[i] : -half[i]) * axes[i];
      out.push_back(p);
    }
    return out;
  }

  // half extent of the projection onto a unit direction
  double radius_along(const Vec<D>& u) const {
    double r = 0;
    for (std::size_t i = 0; i < D; ++i) r += half[i] * std::abs(dot(axes[i], u));
    return r;
  }

  void aabb(Vec<D>& lo, Vec<D>& hi) const {
    for (std::size_t k = 0; k < D; ++k) {
      double r = 0;
      for (std::size_t i = 0; i < D; ++i) r += half[i] * std::abs(axes[i][k]);
      lo[k] = center[k] - r;
      hi[k] = center[k] + r;
    }
  }

  void validate() const {
    for (std::size_t i = 0; i < D; ++i) {
      require(half[i] > 0, "box half-dimensions must be positive");
      for (std::size_t j = 0; j < D; ++j) {
        double d = dot(axes[i], axes[j]) - (i == j ? 1.0 : 0.0);
        require(std::abs(d) < 1e-10, "box axes must be orthonormal");
      }
    }
  }
};

using Box2 = OrientedBox<2>;
using Box3 = OrientedBox<3>;

// Separating-axis test for closed boxes.
template <std::size_t D> bool boxes_overlap(const OrientedBox<D>& a, const OrientedBox<D>& b, double slack = 0) {
  const Vec<D> d = b.center - a.center;
  auto separated = [&](const Vec<D>& u) {
    double n2 = dot(u, u);
    if (n2 < 1e-24) return false;
    double dist = std::abs(dot(d, u));
    return dist > a.radius_along(u) + b.radius_along(u) + slack * std::sqrt(n2);
  };
  for (std::size_t i = 0; i < D; ++i)
    if (separated(a.axes[i]) || separated(b.axes[i])) return false;
  if constexpr (D == 3) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        Vec3 c = cross(a.axes[i], b.axes[j]);
        double n = norm(c);
        if (n < 1e-9) continue;
        if (separated((1.0 / n) * c)) return false;
      }
  }
  return true;
}

namespace detail {

using Poly2 = std::vector<Vec<2>>;

// keep the part of a convex polygon with dot(u, x) <= h
inline Poly2 clip_halfplane(const Poly2& poly, const Vec<2>& u, double h) {
  Poly2 out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    double fp = dot(u, p) - h, fq = dot(u, q) - h;
    if (fp <= 0) out.push_back(p);
    if ((fp < 0 && fq > 0) || (fp > 0 && fq < 0)) {
      double t = fp / (fp - fq);
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

inline double polygon_area(const Poly2& p) {
  double a = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % p.size()];
    a += u[0] * v[1] - u[1] * v[0];
  }
  return 0.5 * std::abs(a);
}

struct Polyhedron {
  std::vector<std::vector<Vec3>> faces;  // outward counter-clockwise
};

inline Polyhedron box_polyhedron(const Box3& b) {
  auto c = b.corners();  // index bits: 0 -> axis0, 1 -> axis1, 2 -> axis2
  // faces with outward orientation (right-handed axes assumed; fixed up below otherwise)
  Polyhedron P;
  P.faces = {{c[0], c[4], c[6], c[2]}, {c[1], c[3], c[7], c[5]}, {c[0], c[1], c[5], c[4]},
             {c[2], c[6], c[7], c[3]}, {c[0], c[2], c[3], c[1]}, {c[4], c[5], c[7], c[6]}};
  if (dot(cross(b.axes[0], b.axes[1]), b.axes[2]) < 0)
    for (auto& f : P.faces) std::reverse(f.begin(), f.end());
  return P;
}

// keep the part with dot(n, x) <= h; n unit
inline Polyhedron clip_halfspace(const Polyhedron& P, const Vec3& n, double h) {
  Polyhedron out;
  std::vector<Vec3> cut;
  const double tol = 1e-13 * (1 + std::abs(h));
  auto side = [&](const Vec3& x) {
    double f = dot(n, x) - h;
    return std::abs(f) <= tol ? 0.0 : f;
  };
  for (const auto& f : P.faces) {
    // a face lying in the plane is rebuilt as the cap below
    if (std::all_of(f.begin(), f.end(), [&](const Vec3& x) { return side(x) == 0; })) continue;
    std::vector<Vec3> nf;
    const std::size_t m = f.size();
    for (std::size_t i = 0; i < m; ++i) {
      const auto& p = f[i];
      const auto& q = f[(i + 1) % m];
      double fp = side(p), fq = side(q);
      if (fp <= 0) nf.push_back(p);
      if (fp == 0) cut.push_back(p);
      if ((fp < 0 && fq > 0) || (fp > 0 && fq < 0)) {
        double t = fp / (fp - fq);
        Vec3 x = p + t * (q - p);
        nf.push_back(x);
        cut.push_back(x);
      }
    }
    if (nf.size() >= 3) out.faces.push_back(std::move(nf));
  }
  if (cut.size() >= 3) {
    Vec3 c{0, 0, 0};
    for (auto& v : cut) c = c + v;
    c = (1.0 / static_cast<double>(cut.size())) * c;
    Vec3 e1 = std::abs(n[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    e1 = normalized(e1 - dot(e1, n) * n);
    Vec3 e2 = cross(n, e1);
    std::sort(cut.begin(), cut.end(), [&](const Vec3& a, const Vec3& b) {
      return std::atan2(dot(a - c, e2), dot(a - c, e1)) < std::atan2(dot(b - c, e2), dot(b - c, e1));
    });
    std::vector<Vec3> cap;
    for (auto& v : cut)
      if (cap.empty() || norm(v - cap.back()) > 1e-15) cap.push_back(v);
    if (cap.size() >= 3 && norm(cap.front() - cap.back()) <= 1e-15) cap.pop_back();
    if (cap.size() >= 3) out.faces.push_back(std::move(cap));
  }
  return out;
}

inline double polyhedron_volume(const Polyhedron& P, const Vec3& ref) {
  double v = 0;
  for (const auto& f : P.faces)
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
      Vec3 a = f[0] - ref, b = f[i] - ref, c = f[i + 1] - ref;
      v += dot(a, cross(b, c));
    }
  return std::abs(v) / 6.0;
}

}  // namespace detail

inline double intersection_volume(const Box2& a, const Box2& b) {
  if (!boxes_overlap(a, b)) return 0;
  auto c = a.corners();
  detail::Poly2 poly{c[0], c[1], c[3], c[2]};
  for (std::size_t i = 0; i < 2; ++i) {
    double m = dot(b.axes[i], b.center);
    poly = detail::clip_halfplane(poly, b.axes[i], m + b.half[i]);
    poly = detail::clip_halfplane(poly, -1.0 * b.axes[i], -(m - b.half[i]));
    if (poly.size() < 3) return 0;
  }
  return detail::polygon_area(poly);
}

inline double intersection_volume(const Box3& a, const Box3& b) {
  if (!boxes_overlap(a, b)) return 0;
  auto P = detail::box_polyhedron(a);
  for (std::size_t i = 0; i < 3; ++i) {
    double m = dot(b.axes[i], b.center);
    P = detail::clip_halfspace(P, b.axes[i], m + b.half[i]);
    P = detail::clip_halfspace(P, -1.0 * b.axes[i], -(m - b.half[i]));
    if (P.faces.size() < 4) return 0;
  }
  return detail::polyhedron_volume(P, a.center);
}

template <std::size_t D> nlohmann::json to_json(const OrientedBox<D>& b) {
  nlohmann::json j;
  j["center"] = b.center;
  j["axes"] = b.axes;
  j["half"] = b.half;
  j["tag"] = to_string(b.tag);
  j["group"] = b.group;
  j["clipped"] = b.clipped;
  return j;
}

template <std::size_t D> OrientedBox<D> box_from_json(const nlohmann::json& j) {
  OrientedBox<D> b;
  b.center = j.at("center").get<Vec<D>>();
  b.axes = j.at("axes").get<std::array<Vec<D>, D>>();
  b.half = j.at("half").get<Vec<D>>();
  b.tag = box_tag_from_string(j.value("tag", std::string("Generic")));
  b.group = j.value("group", -1);
  b.clipped = j.value("clipped", false);
  return b;
}

}  // namespace smallcap
