#include <gtest/gtest.h>
#include <quadmath.h>

#include <smallcap/expsum.hpp>

using namespace smallcap;

namespace {

// independent reference: 128-bit phases and accumulation
std::complex<double> quad_moment_curve_sum(int n, long long N, const std::vector<double>& x) {
  __float128 re = 0, im = 0;
  const __float128 twopi = 2 * M_PIq;
  for (long long j = 1; j <= N; ++j) {
    __float128 ph = 0, pw = 1;
    for (int i = 0; i < n; ++i) {
      pw *= j;
      ph += pw * static_cast<__float128>(x[i]);
    }
    ph = ph - floorq(ph);
    re += cosq(twopi * ph);
    im += sinq(twopi * ph);
  }
  return {static_cast<double>(re), static_cast<double>(im)};
}

}  // namespace

TEST(EvalSum, OriginGivesN) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 5);
  auto v = eval_sum(s, {0, 0, 0});
  EXPECT_EQ(v.real(), 5.0);
  EXPECT_EQ(v.imag(), 0.0);
}

TEST(EvalSum, AlternatingSignsCancel) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 4);
  auto v = eval_sum(s, {0.5, 0});
  EXPECT_NEAR(std::abs(v), 0.0, 1e-14);
}

TEST(EvalSum, MatchesQuadPrecisionReference) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 8);
  std::vector<double> x{0.1, 0.2, 0.3};
  auto v = eval_sum(s, x);
  auto ref = quad_moment_curve_sum(3, 8, x);
  EXPECT_NEAR(v.real(), ref.real(), 1e-13);
  EXPECT_NEAR(v.imag(), ref.imag(), 1e-13);
}

TEST(EvalSum, LargeFrequenciesStayAccurate) {
  // k^3 up to 1e12: naive x*k^3 in double loses the fractional part
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 10000);
  std::vector<double> x{0.123456789, 0.000731, 0.3183098861};
  auto v = eval_sum(s, x);
  auto ref = quad_moment_curve_sum(3, 10000, x);
  EXPECT_NEAR(v.real(), ref.real(), 1e-9);
  EXPECT_NEAR(v.imag(), ref.imag(), 1e-9);
}

TEST(EvalSum, HigherMomentCurves) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(5), 12);
  std::vector<double> x{0.3, 0.01, 0.7, 0.25, 0.011};
  auto ref = quad_moment_curve_sum(5, 12, x);
  auto v = eval_sum(s, x);
  EXPECT_NEAR(std::abs(v - ref), 0.0, 1e-12);
}

TEST(EvalSum, ConjugateSymmetryForRealCoefficients) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 17);
  s.coefficients[3] = -1.0;
  s.coefficients[9] = -1.0;
  CounterRng rng(7);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<double> mx{-x[0], -x[1], -x[2]};
    auto a = eval_sum(s, x), b = eval_sum(s, mx);
    EXPECT_NEAR(std::abs(a - std::conj(b)), 0.0, 1e-12);
  }
}

TEST(EvalSum, PeriodicInEachCoordinate) {
  auto s = ExpSumSpec::random_phases(CurveSpec::moment(3), 20, 3);
  CounterRng rng(11);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> x{rng.uniform(), rng.uniform(), rng.uniform()};
    auto base = eval_sum(s, x);
    for (int i = 0; i < 3; ++i) {
      auto y = x;
      y[i] += 1.0;
      // rounding x + 1 alone moves each phase by up to 2 pi 20^3 ulp
      EXPECT_NEAR(std::abs(eval_sum(s, y) - base), 0.0, 20 * 2 * std::numbers::pi * 8000 * 2.3e-16);
    }
  }
}

TEST(ExpSumSpec, RejectsNonUnimodular) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(2), 3);
  s.coefficients[1] = 1.01;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s.coefficients.pop_back();
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(ExpSumSpec, CurveInvariants) {
  EXPECT_THROW(CurveSpec::moment(7), InvalidArgument);
  EXPECT_THROW(CurveSpec::moment(1), InvalidArgument);
  EXPECT_THROW(cone_omega(3, 3), InvalidArgument);
  EXPECT_NEAR(cone_omega(5, 2), (std::pow(7.0, 1.5) - std::pow(3.0, 1.5)) / 3, 1e-12);
}

TEST(ExpSumSpec, ConeFrequencies) {
  auto s = ExpSumSpec::ones(CurveSpec::cone(8, 2), 0);
  auto pairs = s.curve.cone_pairs();
  EXPECT_EQ(s.N, 16);
  auto m = s.materialize();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto [k, l] = pairs[i];
    EXPECT_EQ(m.freqs[i][0], l);
    EXPECT_EQ(m.freqs[i][1], k * l);
  }
}

TEST(ExpSumSpec, NormalizedFrequencies) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 4);
  s.scaling = Scaling::NormalizedFrequencies;
  s.R = 16;
  s.alpha = 0.5;
  auto m = s.materialize();
  EXPECT_DOUBLE_EQ(m.freqs[3][0], 1.0);
  EXPECT_DOUBLE_EQ(m.freqs[1][1], 0.25);
}

TEST(ExpSumSpec, JsonRoundTrip) {
  auto s = ExpSumSpec::random_phases(CurveSpec::moment(3), 9, 5);
  auto j = to_json(s);
  auto back = expsum_from_json(j);
  ASSERT_EQ(back.N, 9);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(std::abs(back.coefficients[i] - s.coefficients[i]), 0, 1e-14);
  auto c = ExpSumSpec::ones(CurveSpec::custom({0, 0, 0, 1}), 6);
  c.scaling = Scaling::NormalizedFrequencies;
  c.R = 64;
  auto c2 = expsum_from_json(to_json(c));
  EXPECT_EQ(c2.curve.poly, c.curve.poly);
  EXPECT_EQ(c2.scaling, Scaling::NormalizedFrequencies);
}

TEST(ExpSumSpec, CustomCubicMatchesMomentCurve) {
  // phi(u) = u^3 reproduces k^3
  auto c = ExpSumSpec::ones(CurveSpec::custom({0, 0, 0, 1}), 7);
  auto m = ExpSumSpec::ones(CurveSpec::moment(3), 7);
  std::vector<double> x{0.31, 0.77, 0.123};
  EXPECT_NEAR(std::abs(eval_sum(c, x) - eval_sum(m, x)), 0, 1e-12);
}

TEST(FrenetFrame, Endpoints) {
  auto f = frenet_frame(0);
  EXPECT_NEAR(f.t_vec[0], 1, 1e-15);
  EXPECT_NEAR(f.n_vec[1], 1, 1e-15);
  EXPECT_NEAR(f.b_vec[2], 1, 1e-15);
  auto g = frenet_frame(1);
  const double r = std::sqrt(14.0);
  EXPECT_NEAR(g.t_vec[0], 1 / r, 1e-15);
  EXPECT_NEAR(g.t_vec[1], 2 / r, 1e-15);
  EXPECT_NEAR(g.t_vec[2], 3 / r, 1e-15);
  EXPECT_THROW(frenet_frame(1.5), InvalidArgument);
}

TEST(FrenetFrame, OrthonormalAndPositivelyOriented) {
  CounterRng rng(2024);
  std::vector<double> ts{0.37};
  for (int i = 0; i < 1000; ++i) ts.push_back(rng.uniform());
  for (double t : ts) {
    auto f = frenet_frame(t);
    EXPECT_LT(std::abs(dot(f.t_vec, f.n_vec)), 1e-12);
    EXPECT_LT(std::abs(dot(f.t_vec, f.b_vec)), 1e-12);
    EXPECT_LT(std::abs(dot(f.n_vec, f.b_vec)), 1e-12);
    EXPECT_LT(std::abs(norm(f.t_vec) - 1), 1e-12);
    EXPECT_LT(std::abs(norm(f.n_vec) - 1), 1e-12);
    EXPECT_LT(std::abs(norm(f.b_vec) - 1), 1e-12);
    EXPECT_LT(std::abs(dot(f.t_vec, cross(f.n_vec, f.b_vec)) - 1), 1e-12);
  }
}

TEST(ConePoints, CoarseCount) {
  auto pts = cone_points(0.5);
  EXPECT_GE(pts.size(), 4u);
  EXPECT_LE(pts.size(), 40u);
  EXPECT_THROW(cone_points(0.0), InvalidArgument);
  EXPECT_THROW(cone_points(0.7), InvalidArgument);
}

TEST(ConePoints, OnTheCone) {
  for (double d : {0.25, 1.0 / 16}) {
    for (auto& p : cone_points(d)) {
      double r2 = p[0] * p[0] + p[1] * p[1];
      EXPECT_LE(std::abs(p[2] * p[2] - r2), 4e-16 * r2);
      EXPECT_GE(r2, 1 - 1e-12);
      EXPECT_LE(r2, 2 + 1e-12);
    }
  }
}

TEST(ConePoints, DeltaSeparated) {
  const double d = 1.0 / 16;
  auto pts = cone_points(d);
  double mind = 1e9;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) mind = std::min(mind, norm(pts[i] - pts[j]));
  EXPECT_GE(mind, d * (1 - 1e-12));  // the stricter convention; implies >= d/2
}

TEST(ConePoints, CountGrowsLikeDeltaMinusTwo) {
  std::vector<double> xs, ys;
  for (int k = 3; k <= 6; ++k) {
    double d = std::ldexp(1.0, -k);
    xs.push_back(std::log(1 / d));
    ys.push_back(std::log(static_cast<double>(cone_points(d).size())));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= 4, my /= 4;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
  double slope = sxy / sxx;
  EXPECT_GE(slope, 1.7);
  EXPECT_LE(slope, 2.3);
}
