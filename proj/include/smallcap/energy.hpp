#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "expsum.hpp"
#include "moments.hpp"
#include "parallel.hpp"

namespace smallcap {

struct EnergyCount {
  std::uint64_t count = 0;  // ordered quadruples
  std::size_t set_size = 0;
  double tolerance = 0;
  std::uint64_t near_tolerance = 0;  // ordered pair-sum matches with distance in (tol/2, 2 tol]
  std::size_t chunks = 1;
};

struct EnergyOptions {
  double tolerance = 1e-9;
  double memory_cap = kDefaultMemoryCap;
  unsigned workers = 0;  // 0: default_workers()
};

namespace detail {

// unordered pair i <= j; weight 2 off the diagonal
struct PairSum {
  double s[3];
  std::uint32_t w;
};

struct CellKey {
  long long c[3];
  bool operator<(const CellKey& o) const {
    return c[0] != o.c[0] ? c[0] < o.c[0] : c[1] != o.c[1] ? c[1] < o.c[1] : c[2] < o.c[2];
  }
  bool operator==(const CellKey& o) const { return c[0] == o.c[0] && c[1] == o.c[1] && c[2] == o.c[2]; }
};

inline long long cell_of(double v, double tol) { return static_cast<long long>(std::floor(v / tol)); }

inline CellKey key_of(const PairSum& p, double tol) {
  return {{cell_of(p.s[0], tol), cell_of(p.s[1], tol), cell_of(p.s[2], tol)}};
}

// pairs (i, j), i <= j, whose first sum coordinate falls in [xlo, xhi)
inline std::vector<PairSum> pair_sums(const std::vector<Vec3>& pts, double xlo, double xhi, unsigned workers) {
  const std::size_t n = pts.size();
  const std::size_t rows_per = 64;
  const std::size_t blocks = (n + rows_per - 1) / rows_per;
  auto parts = parallel_blocks<std::vector<PairSum>>(
      blocks,
      [&](std::size_t b) {
        std::vector<PairSum> out;
        for (std::size_t i = b * rows_per; i < std::min(n, (b + 1) * rows_per); ++i)
          for (std::size_t j = i; j < n; ++j) {
            PairSum p{{pts[i][0] + pts[j][0], pts[i][1] + pts[j][1], pts[i][2] + pts[j][2]}, i == j ? 1u : 2u};
            if (p.s[0] >= xlo && p.s[0] < xhi) out.push_back(p);
          }
        return out;
      },
      workers);
  std::vector<PairSum> all;
  std::size_t tot = 0;
  for (auto& p : parts) tot += p.size();
  all.reserve(tot);
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

// exact equality of sums
inline std::uint64_t count_exact(std::vector<PairSum>& v) {
  std::sort(v.begin(), v.end(), [](const PairSum& a, const PairSum& b) {
    return a.s[0] != b.s[0] ? a.s[0] < b.s[0] : a.s[1] != b.s[1] ? a.s[1] < b.s[1] : a.s[2] < b.s[2];
  });
  std::uint64_t total = 0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t e = i;
    std::uint64_t r = 0;
    while (e < v.size() && v[e].s[0] == v[i].s[0] && v[e].s[1] == v[i].s[1] && v[e].s[2] == v[i].s[2]) r += v[e++].w;
    total += r * r;
    i = e;
  }
  return total;
}

// Sorted by cell key. For each pair P in [begin, end) scan the 27 neighbouring cells; the nine
// (dx, dy) columns are contiguous in sorted order and their start moves monotonically with P.
inline std::pair<std::uint64_t, std::uint64_t> count_neighbours(const std::vector<PairSum>& v,
                                                                const std::vector<CellKey>& keys, std::size_t begin,
                                                                std::size_t end, double tol) {
  std::uint64_t total = 0, near = 0;
  std::array<std::size_t, 9> ptr{};
  bool init = false;
  for (std::size_t a = begin; a < end; ++a) {
    const auto& ka = keys[a];
    int slot = 0;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy, ++slot) {
        CellKey lo{{ka.c[0] + dx, ka.c[1] + dy, ka.c[2] - 1}};
        CellKey hi{{ka.c[0] + dx, ka.c[1] + dy, ka.c[2] + 1}};
        auto& p = ptr[static_cast<std::size_t>(slot)];
        if (!init)
          p = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), lo) - keys.begin());
        else
          while (p < keys.size() && keys[p] < lo) ++p;
        for (std::size_t b = p; b < keys.size() && !(hi < keys[b]); ++b) {
          double d = std::max({std::abs(v[a].s[0] - v[b].s[0]), std::abs(v[a].s[1] - v[b].s[1]), std::abs(v[a].s[2] - v[b].s[2])});
          if (d <= tol) total += static_cast<std::uint64_t>(v[a].w) * v[b].w;
          if (d > 0.5 * tol && d <= 2 * tol) near += static_cast<std::uint64_t>(v[a].w) * v[b].w;
        }
      }
    init = true;
  }
  return {total, near};
}

}  // namespace detail

// Ordered quadruples with ||(l1 + l2) - (l3 + l4)||_inf <= tolerance. Pair sums are streamed in
// slabs of the first coordinate when all |L|^2 / 2 of them would not fit under the memory cap.
inline EnergyCount additive_energy(const std::vector<Vec3>& pts, const EnergyOptions& opt = {}) {
  require(!pts.empty(), "empty point set");
  require(opt.tolerance >= 0 && std::isfinite(opt.tolerance), "tolerance must be finite and >= 0");
  {
    auto s = pts;
    std::sort(s.begin(), s.end());
    require(std::adjacent_find(s.begin(), s.end()) == s.end(), "points must be pairwise distinct");
  }
  const unsigned workers = opt.workers ? opt.workers : default_workers();
  const double tol = opt.tolerance;
  const std::size_t n = pts.size();
  const double npairs = 0.5 * static_cast<double>(n) * static_cast<double>(n + 1);
  const double per_pair = sizeof(detail::PairSum) + (tol > 0 ? sizeof(detail::CellKey) : 0);
  const auto capacity = static_cast<std::size_t>(std::max(1.0, opt.memory_cap / per_pair / 2));
  EnergyCount res;
  res.set_size = n;
  res.tolerance = tol;

  double xmin = 1e300, xmax = -1e300;
  for (auto& p : pts) xmin = std::min(xmin, p[0]), xmax = std::max(xmax, p[0]);
  // slab boundaries on the pair-sum x axis, aligned to cell edges when tol > 0
  std::vector<double> edges{-INFINITY, INFINITY};
  if (npairs > static_cast<double>(capacity)) {
    const int bins = 4096;
    const double lo = 2 * xmin, hi = 2 * xmax + 1e-12;
    std::vector<std::uint64_t> hist(bins, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        auto b = static_cast<long long>((pts[i][0] + pts[j][0] - lo) / (hi - lo) * bins);
        ++hist[static_cast<std::size_t>(std::clamp(b, 0LL, static_cast<long long>(bins - 1)))];
      }
    edges = {-INFINITY};
    std::uint64_t acc = 0;
    for (int b = 0; b < bins; ++b) {
      if (hist[static_cast<std::size_t>(b)] > capacity)
        throw CapacityError("a single pair-sum slab exceeds the memory cap");
      if (acc + hist[static_cast<std::size_t>(b)] > capacity) {
        double e = lo + (hi - lo) * b / bins;
        if (tol > 0) e = std::floor(e / tol) * tol;
        edges.push_back(e);
        acc = 0;
      }
      acc += hist[static_cast<std::size_t>(b)];
    }
    edges.push_back(INFINITY);
  }
  res.chunks = edges.size() - 1;
  for (std::size_t c = 0; c + 1 < edges.size(); ++c) {
    if (tol == 0) {
      auto v = detail::pair_sums(pts, edges[c], edges[c + 1], workers);
      res.count += detail::count_exact(v);
      continue;
    }
    // owned slab plus one cell of margin on each side
    auto v = detail::pair_sums(pts, edges[c] - 1.5 * tol, edges[c + 1] + 1.5 * tol, workers);
    std::sort(v.begin(), v.end(), [&](const detail::PairSum& a, const detail::PairSum& b) {
      auto ka = detail::key_of(a, tol), kb = detail::key_of(b, tol);
      if (ka == kb) return a.s[0] != b.s[0] ? a.s[0] < b.s[0] : a.s[1] != b.s[1] ? a.s[1] < b.s[1] : a.s[2] < b.s[2];
      return ka < kb;
    });
    std::vector<detail::CellKey> keys(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) keys[i] = detail::key_of(v[i], tol);
    // owned range: pairs with x in [edge_c, edge_{c+1})
    std::vector<std::size_t> owned;
    const std::size_t blocks = std::max<std::size_t>(1, std::min<std::size_t>(64, v.size() / 4096 + 1));
    const std::size_t per = (v.size() + blocks - 1) / blocks;
    auto parts = parallel_blocks<std::pair<std::uint64_t, std::uint64_t>>(
        blocks,
        [&](std::size_t b) {
          std::pair<std::uint64_t, std::uint64_t> r{0, 0};
          const std::size_t b0 = b * per, b1 = std::min(v.size(), b0 + per);
          // count one owned run at a time so the monotone pointers stay valid
          std::size_t a = b0;
          while (a < b1) {
            while (a < b1 && !(v[a].s[0] >= edges[c] && v[a].s[0] < edges[c + 1])) ++a;
            std::size_t e = a;
            while (e < b1 && v[e].s[0] >= edges[c] && v[e].s[0] < edges[c + 1]) ++e;
            if (e > a) {
              auto [t, nr] = detail::count_neighbours(v, keys, a, e, tol);
              r.first += t;
              r.second += nr;
            }
            a = e;
          }
          return r;
        },
        workers);
    for (auto& [t, nr] : parts) {
      res.count += t;
      res.near_tolerance += nr;
    }
  }
  return res;
}

inline EnergyCount additive_energy(const std::vector<Vec3>& pts, double tolerance) {
  EnergyOptions o;
  o.tolerance = tolerance;
  return additive_energy(pts, o);
}

struct EnergyScanPoint {
  double delta = 0;
  std::size_t size = 0;
  std::uint64_t energy = 0;
  std::uint64_t near_tolerance = 0;
};

struct EnergyScan {
  std::vector<EnergyScanPoint> points;
  ExponentFit fit;
};

inline EnergyScan energy_exponent_scan(const std::vector<double>& deltas, const EnergyOptions& opt = {}) {
  require(deltas.size() >= 3, "scan needs at least 3 deltas");
  EnergyScan out;
  std::vector<std::pair<double, double>> xy;
  for (double d : deltas) {
    auto pts = cone_points(d);
    auto e = additive_energy(pts, opt);
    out.points.push_back({d, pts.size(), e.count, e.near_tolerance});
    xy.emplace_back(static_cast<double>(pts.size()), static_cast<double>(e.count));
  }
  out.fit = fit_growth_exponent(xy);
  return out;
}

// equally spaced points on the circle |x| = 1 in the plane z = 1, spacing >= delta
inline std::vector<Vec3> circle_points(double delta) {
  require(delta > 0 && delta <= 0.5, "delta must lie in (0, 1/2]");
  const auto m = static_cast<std::size_t>(std::floor(std::numbers::pi / std::asin(delta / 2)));
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < m; ++i) {
    double a = kTwoPi * static_cast<double>(i) / static_cast<double>(m);
    out.push_back({std::cos(a), std::sin(a), 1.0});
  }
  return out;
}

// one point per line, 1 to 3 whitespace separated columns, '#' comments
inline std::vector<Vec3> read_points(std::istream& in) {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0, cols = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto h = line.find('#');
    if (h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    Vec3 p{0, 0, 0};
    std::size_t k = 0;
    double v;
    while (ss >> v) {
      if (k >= 3) throw InvalidArgument("line " + std::to_string(lineno) + ": more than 3 columns");
      p[k++] = v;
    }
    if (!ss.eof()) throw InvalidArgument("line " + std::to_string(lineno) + ": not a number");
    if (k == 0) continue;
    if (cols == 0) cols = k;
    if (k != cols) throw InvalidArgument("line " + std::to_string(lineno) + ": column count changed");
    pts.push_back(p);
  }
  return pts;
}

inline nlohmann::json to_json(const EnergyCount& e) {
  return {{"count", e.count},
          {"set_size", e.set_size},
          {"tolerance", e.tolerance},
          {"near_tolerance", e.near_tolerance},
          {"chunks", e.chunks}};
}

inline nlohmann::json to_json(const EnergyScan& s) {
  nlohmann::json pts = nlohmann::json::array();
  for (auto& p : s.points)
    pts.push_back({{"delta", p.delta}, {"size", p.size}, {"energy", p.energy}, {"near_tolerance", p.near_tolerance}});
  return {{"points", pts}, {"fit", to_json(s.fit)}};
}

}  // namespace smallcap
