#include <gtest/gtest.h>

#include <smallcap/moments.hpp>

#include <map>

using namespace smallcap;

namespace {

// ordered quadruples with k1 + k2 = k3 + k4 and k1^2 + k2^2 = k3^2 + k4^2, counted directly
long long parabola_quadruples(long long N) {
  std::map<std::pair<long long, long long>, long long> r;
  for (long long a = 1; a <= N; ++a)
    for (long long b = 1; b <= N; ++b) ++r[{a + b, a * a + b * b}];
  long long c = 0;
  for (auto& [k, v] : r) c += v * v;
  return c;
}

MomentEstimate exact(const ExpSumSpec& s, double p, SlabDomain d, bool normalized = true,
                     ExactBackend be = ExactBackend::Auto) {
  auto q = MomentQuery::exact(s, p, std::move(d), normalized);
  q.backend = be;
  return exact_torus_moment(q);
}

}  // namespace

TEST(ExactMoment, ParsevalAcrossDimensions) {
  for (int n : {2, 3})
    for (long long N : {4, 7, 16, 33, 64}) {
      auto s = ExpSumSpec::random_phases(CurveSpec::moment(n), N, 40 + N);
      auto e = exact(s, 2, SlabDomain::full(n));
      EXPECT_NEAR(e.value / N, 1.0, 1e-9) << "n=" << n << " N=" << N;
    }
}

TEST(ExactMoment, ParabolaFourthMomentCountsQuadruples) {
  for (long long N : {4, 5, 8, 13, 32}) {
    auto e = exact(ExpSumSpec::ones(CurveSpec::parabola(), N), 4, SlabDomain::full(2));
    const long long c = parabola_quadruples(N);
    EXPECT_EQ(c, 2 * N * N - N);
    EXPECT_NEAR(e.value / static_cast<double>(c), 1.0, 1e-9) << N;
  }
}

TEST(ExactMoment, SparseAndDenseBackendsAgree) {
  for (auto [n, N, p] : {std::tuple{2, 12LL, 6.0}, std::tuple{3, 6LL, 4.0}, std::tuple{2, 9LL, 8.0}}) {
    auto s = ExpSumSpec::random_phases(CurveSpec::moment(n), N, 5);
    auto a = exact(s, p, SlabDomain::full(n), true, ExactBackend::SparseConvolution);
    auto b = exact(s, p, SlabDomain::full(n), true, ExactBackend::DenseFFT);
    EXPECT_NEAR(a.value / b.value, 1.0, 1e-9);
    auto t1 = exact(s, p, SlabDomain::slab(n, 0.3, 0.4), true, ExactBackend::SparseConvolution);
    auto t2 = exact(s, p, SlabDomain::slab(n, 0.3, 0.4), true, ExactBackend::DenseFFT);
    EXPECT_NEAR(t1.value / t2.value, 1.0, 1e-8);
  }
}

TEST(ExactMoment, MomentCurveSlabMatchesQuadratureValue) {
  // dense midpoint grid at 4x Nyquist with Richardson on the short axis gave 259144.432355...
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 8);
  auto e = exact(s, 10, SlabDomain::slab(3, 0, 1.0 / 8), false);
  EXPECT_NEAR(e.value, 259144.43235578, 1e-9 * 259144.43235578);
  EXPECT_LT(e.error_bound, 1e-8 * e.value);
}

TEST(ExactMoment, SlabOfFullLengthIsTheTorus) {
  auto s = ExpSumSpec::random_phases(CurveSpec::moment(3), 6, 3);
  auto a = exact(s, 6, SlabDomain::full(3));
  auto b = exact(s, 6, SlabDomain::slab(3, 0.37, 1.0));
  EXPECT_NEAR(a.value / b.value, 1.0, 1e-8);
}

TEST(ExactMoment, CommonPhaseDoesNotMatter) {
  auto s = ExpSumSpec::random_phases(CurveSpec::moment(3), 10, 8);
  auto t = s;
  for (auto& c : t.coefficients) c *= e_turns(0.2137);
  for (auto d : {SlabDomain::full(3), SlabDomain::slab(3, 0.1, 0.25)}) {
    auto a = exact(s, 6, d), b = exact(t, 6, d);
    EXPECT_NEAR(a.value / b.value, 1.0, 1e-12);
  }
}

TEST(ExactMoment, TruncationNeedsConvergence) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 16);
  auto e = exact(s, 8, SlabDomain::slab(3, 0.617, 1.0 / 16));
  EXPECT_TRUE(e.converged);
  EXPECT_LT(e.error_bound, 1e-8 * e.value);
}

TEST(ExactMoment, Refusals) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 8);
  EXPECT_THROW(exact(s, 5, SlabDomain::full(3)), UnsupportedMode);
  SlabDomain two = SlabDomain::full(3);
  two.axes[0] = {AxisKind::Truncated, 0, 0.5};
  two.axes[2] = {AxisKind::Truncated, 0, 0.5};
  EXPECT_THROW(exact(s, 4, two), InvalidArgument);
  EXPECT_THROW(exact(s, 4, SlabDomain::slab(3, 0, 1.5)), InvalidArgument);
  auto q = MomentQuery::exact(ExpSumSpec::ones(CurveSpec::moment(3), 64), 12, SlabDomain::full(3));
  q.backend = ExactBackend::DenseFFT;
  q.memory_cap = 1 << 20;
  try {
    exact_torus_moment(q);
    FAIL() << "expected a capacity error";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("MiB"), std::string::npos);
  }
}

TEST(ExactMoment, HolderMonotoneInP) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = ExpSumSpec::random_phases(CurveSpec::parabola(), 5 + static_cast<long long>(seed), seed);
    double prev = 0;
    for (double p : {2.0, 4.0, 6.0, 8.0}) {
      double v = exact(s, p, SlabDomain::slab(2, 0.1 * seed, 0.5)).norm();
      EXPECT_GE(v, prev * (1 - 1e-12));
      prev = v;
    }
  }
}

TEST(MonteCarlo, ConstantSumIsExact) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 1);
  auto e = monte_carlo_moment(MomentQuery::monte_carlo(s, 7.3, SlabDomain::slab(3, 0.2, 0.3), 1000, 4));
  EXPECT_NEAR(e.value, 1.0, 1e-12);
  EXPECT_NEAR(e.error_bound, 0.0, 1e-12);
}

TEST(MonteCarlo, ParsevalWithinThreeSigma) {
  auto s = ExpSumSpec::ones(CurveSpec::moment(3), 16);
  auto e = monte_carlo_moment(MomentQuery::monte_carlo(s, 2, SlabDomain::full(3), 100000, 9));
  EXPECT_GT(e.error_bound, 0);
  EXPECT_LE(std::abs(e.value - 16), 3 * e.sigma());
}

TEST(MonteCarlo, AgreesWithExactParabola) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 32);
  auto ex = exact(s, 6, SlabDomain::full(2));
  auto mc = monte_carlo_moment(MomentQuery::monte_carlo(s, 6, SlabDomain::full(2), 1000000, 2));
  EXPECT_LE(std::abs(mc.value - ex.value), 3 * mc.sigma());
}

TEST(MonteCarlo, TranslatedIntegerCubeMatchesTorus) {
  // a full-period average does not see where the unit cube sits
  auto s = ExpSumSpec::random_phases(CurveSpec::parabola(), 6, 12);
  auto ex = exact(s, 4, SlabDomain::full(2));
  SlabDomain moved = SlabDomain::full(2);
  moved.axes[0] = {AxisKind::Truncated, 3.25, 1.0};
  moved.axes[1] = {AxisKind::Truncated, -7.5, 1.0};
  auto mc = monte_carlo_moment(MomentQuery::monte_carlo(s, 4, moved, 400000, 5));
  EXPECT_LE(std::abs(mc.value - ex.value), 3 * mc.sigma());
}

TEST(MonteCarlo, RefusesTooFewSamples) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 4);
  EXPECT_THROW(monte_carlo_moment(MomentQuery::monte_carlo(s, 4, SlabDomain::full(2), 99, 1)), InvalidArgument);
}

TEST(MonteCarlo, SameSeedAnyWorkerCount) {
  auto s = ExpSumSpec::random_phases(CurveSpec::moment(3), 20, 1);
  auto q = MomentQuery::monte_carlo(s, 5.5, SlabDomain::slab(3, 0.2, 0.1), 50000, 77);
  unsigned saved = default_workers();
  set_default_workers(1);
  auto a = monte_carlo_moment(q);
  set_default_workers(4);
  auto b = monte_carlo_moment(q);
  set_default_workers(saved);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.error_bound, b.error_bound);
}

TEST(Fit, ExactPowerLaws) {
  auto f = fit_growth_exponent(std::vector<std::pair<double, double>>{{8, 64}, {16, 256}, {32, 1024}});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  auto g = fit_growth_exponent(std::vector<std::pair<double, double>>{{8, 8}, {16, 16}, {32, 32}, {64, 64}});
  EXPECT_NEAR(g.slope, 1.0, 1e-12);
}

TEST(Fit, ParsevalScanHasSlopeOne) {
  std::vector<std::pair<double, MomentEstimate>> scan;
  for (long long N : {8, 16, 32, 64})
    scan.emplace_back(static_cast<double>(N), exact(ExpSumSpec::ones(CurveSpec::moment(3), N), 2, SlabDomain::full(3)));
  EXPECT_NEAR(fit_growth_exponent(scan).slope, 1.0, 1e-9);
}

TEST(Fit, Rejections) {
  EXPECT_THROW(fit_growth_exponent(std::vector<std::pair<double, double>>{{8, 1}, {16, 0}, {32, 2}}), InvalidArgument);
  EXPECT_THROW(fit_growth_exponent(std::vector<std::pair<double, double>>{{8, 1}, {16, 2}}), InvalidArgument);
}

TEST(CubeMoment, SingleFrequencyIsOne) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 1);
  s.scaling = Scaling::NormalizedFrequencies;
  s.R = 16;
  s.alpha = 0.5;
  for (auto m : {CubeMethod::MonteCarlo, CubeMethod::TensorQuadrature}) {
    auto e = cube_moment(s, {3.5, -2}, 16, 4.5, m);
    EXPECT_NEAR(e.value, 1.0, 1e-12);
  }
}

TEST(CubeMoment, FullSeparationNearParseval) {
  auto s = ExpSumSpec::ones(CurveSpec::parabola(), 4);
  s.scaling = Scaling::NormalizedFrequencies;
  s.R = 4;
  s.alpha = 1;
  auto t = cube_moment(s, {0, 0}, 4, 2, CubeMethod::TensorQuadrature);
  auto mc = cube_moment(s, {0, 0}, 4, 2, CubeMethod::MonteCarlo, 400000, 3);
  EXPECT_LE(std::abs(mc.value - t.value), 3 * mc.sigma() + 1e-9);
  // close to orthogonal at this separation: the L^2 average is near sqrt(N) = 2
  EXPECT_NEAR(t.norm(), 2.0, 0.25);
}

TEST(CubeMoment, TranslationDoesNotChangeTheScale) {
  auto s = ExpSumSpec::random_phases(CurveSpec::parabola(), 8, 4);
  s.scaling = Scaling::NormalizedFrequencies;
  s.R = 64;
  s.alpha = 0.5;
  auto a = cube_moment(s, {0, 0}, 64, 4, CubeMethod::TensorQuadrature);
  auto b = cube_moment(s, {1000, -333}, 64, 4, CubeMethod::TensorQuadrature);
  EXPECT_LT(a.error_bound, 1e-6 * a.value);
  EXPECT_NEAR(std::log(a.value / b.value), 0.0, 1.0);
}

TEST(CubeMoment, SmallCapBoundHoldsWithSlack) {
  auto s = ExpSumSpec::random_phases(CurveSpec::parabola(), 64, 21);
  s.scaling = Scaling::NormalizedFrequencies;
  s.R = 256;
  s.alpha = 0.75;
  const double p = 2 + 2 / 0.75;
  auto e = cube_moment(s, {0, 0}, 256, p, CubeMethod::MonteCarlo, 200000, 6);
  EXPECT_LE(e.norm(), 4 * std::pow(256.0, 0.375));
}
