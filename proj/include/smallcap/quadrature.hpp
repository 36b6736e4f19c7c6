#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "core.hpp"

namespace smallcap {

struct GaussRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

inline GaussRule compute_gauss_legendre(int q) {
  GaussRule r;
  r.nodes.resize(q);
  r.weights.resize(q);
  for (int i = 0; i < (q + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= q; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = q * (x * p1 - p0) / (x * x - 1);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double w = 2 / ((1 - x * x) * dp * dp);
    r.nodes[i] = -x;
    r.nodes[q - 1 - i] = x;
    r.weights[i] = r.weights[q - 1 - i] = w;
  }
  return r;
}

inline const GaussRule& gauss_legendre(int q) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard lk(mu);
  auto it = cache.find(q);
  if (it == cache.end()) it = cache.emplace(q, compute_gauss_legendre(q)).first;
  return it->second;
}

// Nodes/weights for a composite rule with `panels` equal panels of order q on [a, b].
inline std::vector<std::pair<double, double>> composite_gauss(double a, double b, std::size_t panels, int q = 16) {
  const auto& g = gauss_legendre(q);
  std::vector<std::pair<double, double>> out;
  out.reserve(panels * q);
  double h = (b - a) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    double lo = a + h * static_cast<double>(p);
    for (int i = 0; i < q; ++i) out.emplace_back(lo + 0.5 * h * (g.nodes[i] + 1), 0.5 * h * g.weights[i]);
  }
  return out;
}

}  // namespace smallcap
