#include <gtest/gtest.h>

#include <smallcap/incidence.hpp>
#include <smallcap/oracle.hpp>

#include <cmath>
#include <sstream>

using namespace smallcap;

TEST(KakeyaL2, ParallelDisjointTubesAddVolumes) {
  auto fam = generate_random_tubes(1.0 / 64, 1, 8, 4);
  ASSERT_EQ(fam.size(), 8u);
  EXPECT_NEAR(kakeya_l2_overlap(fam), fam.total_volume(), 1e-14);
  EXPECT_NEAR(fam.total_volume(), 8.0 / 64, 1e-14);
}

TEST(KakeyaL2, CopiesSquareTheMultiplicity) {
  const double delta = 1.0 / 32;
  auto one = generate_random_tubes(delta, 1, 1, 0);
  for (int m : {1, 2, 5}) {
    TubeFamily f = one;
    f.boxes.assign(static_cast<std::size_t>(m), one.boxes.front());
    EXPECT_NEAR(kakeya_l2_overlap(f), m * m * one.boxes.front().volume(), 1e-13) << m;
  }
}

TEST(KakeyaL2, RasterAgrees) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto fam = generate_random_tubes(1.0 / 32, 16, 2, s);
    const double exact = kakeya_l2_overlap(fam);
    const double raster = kakeya_l2_raster(fam, fam.delta / 16);
    EXPECT_NEAR(raster / exact, 1.0, 0.05) << s;
  }
}

TEST(KakeyaL2, PlateSlabSelfTermIsClippedVolume) {
  const double delta = 1.0 / 16;
  auto fam = generate_vinogradov_family(delta, 2.0 / 3, {1, 1, 1}, {1, 1, 1}, 1);
  double self = 0;
  for (auto& b : fam.boxes) self += detail::region_clipped_volume(b, b);
  EXPECT_GT(self, 0);
  EXPECT_GE(kakeya_l2_overlap(fam), self - 1e-14);
  auto cube = Box3::axis_aligned({0, 0, 0}, {1, 1, 1});
  for (auto& b : fam.boxes) {
    auto mc = oracle::mc_volume(b, b, 200000, 3, &cube);
    EXPECT_LE(std::abs(detail::region_clipped_volume(b, b) - mc.value), mc.ci + 1e-12);
  }
}

TEST(KakeyaL2, SlabClippingMatchesSampling) {
  auto fam = generate_vinogradov_family(1.0 / 16, 0.5, {1, 1, 1}, {1, 1, 1}, 2);
  auto cube = Box3::axis_aligned({0, 0, 0}, {1, 1, 1});
  for (std::size_t i = 0; i + 1 < fam.size(); i += 3) {
    const auto& a = fam.boxes[i];
    const auto& b = fam.boxes[i + 1];
    auto mc = oracle::mc_volume(a, b, 400000, 7 + i, &cube);
    EXPECT_LE(std::abs(detail::region_clipped_volume(a, b) - mc.value), mc.ci + 1e-12) << i;
  }
}

TEST(StructuredTubes, CountsAndAudit) {
  const double delta = 1.0 / 32, alpha = 0.75;
  for (int N : {1, 2}) {
    auto fam = generate_structured_tubes(delta, alpha, N, 11);
    const double R = 1 / (delta * delta);
    const double W = std::pow(R, 1 - alpha);
    EXPECT_NEAR(fam.structure.W, W, 1e-9);
    EXPECT_EQ(fam.structure.directions, 32);
    EXPECT_EQ(fam.size(), static_cast<std::size_t>(32 * N * std::floor(W + 1e-9)));
    EXPECT_LE(static_cast<double>(fam.size()), N * W * std::sqrt(R) + 1e-9);
    auto rep = audit_structure(fam);
    EXPECT_TRUE(rep.pass) << rep.detail;
  }
}

TEST(StructuredTubes, InfeasibleNRefused) {
  // alpha = 1/2: fat tubes are delta-thin, one slot each
  EXPECT_THROW(generate_structured_tubes(1.0 / 16, 0.5, 2, 0), InvalidArgument);
  EXPECT_NO_THROW(generate_structured_tubes(1.0 / 16, 0.5, 1, 0));
}

TEST(StructuredTubes, AuditCatchesViolations) {
  auto fam = generate_structured_tubes(1.0 / 32, 0.75, 2, 5);
  auto dup = fam;
  dup.boxes.push_back(fam.boxes.front());
  auto r = audit_structure(dup);
  EXPECT_TRUE(r.has("disjointness"));
  EXPECT_TRUE(r.has("uniformity"));
  auto bent = fam;
  bent.boxes.back().axes = fam.boxes.front().axes;
  bent.boxes.back().group = fam.boxes.back().group;
  if (fam.boxes.back().group != fam.boxes.front().group) {
    EXPECT_TRUE(audit_structure(bent).has("direction"));
  }
  auto under = fam;
  under.boxes.pop_back();
  EXPECT_TRUE(audit_structure(under).has("uniformity"));
}

TEST(StructuredTubes, FocalPointsAreHit) {
  TubeOptions opt;
  opt.focal_points = {{0.5, 0.5}};
  auto fam = generate_structured_tubes(1.0 / 32, 0.75, 2, 0, opt);
  std::set<int> hit;
  for (auto& b : fam.boxes)
    if (b.contains({0.5, 0.5})) hit.insert(b.group);
  EXPECT_EQ(hit.size(), 32u);
  EXPECT_TRUE(audit_structure(fam).pass);
}

TEST(VinogradovFamily, TwoThirdsHasUnitW) {
  auto fam = generate_vinogradov_family(1.0 / 32, 2.0 / 3, {2, 2, 2}, {3, 1, 2}, 0);
  EXPECT_NEAR(fam.structure.W, 1.0, 1e-12);
  std::map<int, int> per_interval;
  for (auto& b : fam.boxes) per_interval[b.group]++;
  EXPECT_EQ(per_interval.size(), 6u);
  for (std::size_t i = 0; i < fam.size(); ++i)
    EXPECT_EQ(per_interval[fam.boxes[i].group], fam.structure.Ni[static_cast<std::size_t>(fam.broad[i])]);
}

TEST(VinogradovFamily, PlatesPerIntervalIsNTimesW) {
  const double delta = 1.0 / 64, alpha = 0.5;
  auto fam = generate_vinogradov_family(delta, alpha, {1, 1, 1}, {2, 2, 2}, 3);
  const double W = std::pow(delta, 3 * alpha - 2);
  EXPECT_NEAR(W, 8, 1e-12);
  std::map<int, int> per_interval;
  for (auto& b : fam.boxes) per_interval[b.group]++;
  for (auto& [m, c] : per_interval) {
    EXPECT_GE(c, 2 * 8 - 2) << m;
    EXPECT_LE(c, 2 * 8) << m;
  }
}

TEST(VinogradovFamily, AuditPassesAcrossSeeds) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto fam = generate_vinogradov_family(1.0 / 32, 0.5, {2, 1, 3}, {1, 2, 1}, s);
    auto rep = audit_structure(fam);
    EXPECT_TRUE(rep.pass) << s << "\n" << rep.detail;
  }
}

TEST(VinogradovFamily, DeletedPlateBreaksPeriodicity) {
  auto fam = generate_vinogradov_family(1.0 / 32, 0.5, {1, 1, 1}, {1, 1, 1}, 4);
  ASSERT_TRUE(audit_structure(fam).pass);
  // drop an interior plate of the first interval
  std::size_t victim = 1;
  fam.boxes.erase(fam.boxes.begin() + static_cast<long>(victim));
  fam.broad.erase(fam.broad.begin() + static_cast<long>(victim));
  auto rep = audit_structure(fam);
  EXPECT_TRUE(rep.has("periodicity"));
}

TEST(VinogradovFamily, ExtraPlateBreaksUniformity) {
  auto fam = generate_vinogradov_family(1.0 / 32, 2.0 / 3, {1, 1, 1}, {1, 1, 1}, 4);
  ASSERT_TRUE(audit_structure(fam).pass);
  auto extra = fam.boxes.front();
  extra.center = extra.center + 2 * fam.delta * extra.axes[0];
  fam.boxes.push_back(extra);
  fam.broad.push_back(fam.broad.front());
  EXPECT_TRUE(audit_structure(fam).has("uniformity"));
}

TEST(VinogradovFamily, InfeasibleRequestsRefused) {
  EXPECT_THROW(generate_vinogradov_family(1.0 / 16, 0.5, {100, 1, 1}, {1, 1, 1}, 0), InvalidArgument);
  EXPECT_THROW(generate_vinogradov_family(1.0 / 16, 0.5, {1, 1, 1}, {1000, 1, 1}, 0), InvalidArgument);
  EXPECT_THROW(generate_vinogradov_family(1.0 / 16, 0.2, {1, 1, 1}, {1, 1, 1}, 0), InvalidArgument);
}

TEST(RichCubes, SingleAxisBox) {
  TubeFamily f;
  f.delta = 0.1;
  f.boxes.push_back(Box2::axis_aligned({0.1, 0.1}, {0.3, 0.3}));
  auto h = count_rich_cubes<2>({&f}, 0.1);
  EXPECT_EQ(h.total_cubes, 100u);
  // inflated cubes meet the box for centres within 0.075 of it: a 4 x 4 block
  EXPECT_EQ(h.at_least(1), 16u);
  EXPECT_EQ(h.max_richness(0), 1);
  EXPECT_EQ(h, oracle::naive_rich_cubes<2>({&f}, 0.1));
}

TEST(RichCubes, TwoOrthogonalTubes) {
  TubeFamily a, b;
  a.delta = b.delta = 1.0 / 16;
  a.boxes.push_back(Box2::axis_aligned({0, 0.5}, {1, 0.5 + 1.0 / 16}));
  b.boxes.push_back(Box2::axis_aligned({0.5, 0}, {0.5 + 1.0 / 16, 1}));
  auto h = count_rich_cubes<2>({&a, &b}, 1.0 / 16);
  const auto both = h.at_least(std::array<int, 3>{1, 1, 0});
  EXPECT_GE(both, 1u);
  EXPECT_LE(both, 9u);
  EXPECT_EQ(h, oracle::naive_rich_cubes<2>({&a, &b}, 1.0 / 16));
}

TEST(RichCubes, TrivialBoundHolds) {
  // #{r-rich cubes} * r <= sum over boxes of cubes met
  auto fam = generate_random_tubes(1.0 / 32, 16, 2, 8);
  auto h = count_rich_cubes<2>({&fam}, 1.0 / 32);
  std::uint64_t incidences = 0;
  for (auto& [k, c] : h.counts) incidences += static_cast<std::uint64_t>(k[0]) * c;
  for (int r = 1; r <= h.max_richness(0); ++r) EXPECT_LE(h.at_least(r) * static_cast<std::uint64_t>(r), incidences);
}

TEST(RichCubes, MatchesNaiveOnRandomFamilies) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto a = generate_random_tubes(1.0 / 32, 8, 2, s);
    auto b = generate_random_tubes(1.0 / 32, 8, 2, s + 100, 1.2, 0.4);
    EXPECT_EQ(count_rich_cubes<2>({&a, &b}, 1.0 / 32), oracle::naive_rich_cubes<2>({&a, &b}, 1.0 / 32)) << s;
  }
  auto p = generate_vinogradov_family(1.0 / 16, 2.0 / 3, {1, 1, 1}, {1, 1, 1}, 0);
  auto s0 = p.subfamily(0), s1 = p.subfamily(1), s2 = p.subfamily(2);
  EXPECT_EQ(count_rich_cubes<3>({&s0, &s1, &s2}, 1.0 / 16), oracle::naive_rich_cubes<3>({&s0, &s1, &s2}, 1.0 / 16));
}

TEST(RichCubes, IndependentOfWorkers) {
  auto fam = generate_structured_tubes(1.0 / 32, 0.75, 2, 1);
  const unsigned saved = default_workers();
  set_default_workers(1);
  auto h1 = count_rich_cubes<2>({&fam}, 1.0 / 32);
  set_default_workers(3);
  auto h3 = count_rich_cubes<2>({&fam}, 1.0 / 32);
  set_default_workers(saved);
  EXPECT_EQ(h1, h3);
}

TEST(RichCubes, HistogramDat) {
  TubeFamily f;
  f.delta = 0.25;
  f.boxes.push_back(Box2::axis_aligned({0, 0}, {0.25, 1}));
  std::ostringstream os;
  write_histogram_dat(os, count_rich_cubes<2>({&f}, 0.25));
  EXPECT_EQ(os.str().substr(0, 11), "# r1 count\n");
}

TEST(FamilyJson, RoundTrip) {
  auto fam = generate_vinogradov_family(1.0 / 16, 0.5, {1, 2, 1}, {1, 1, 1}, 6);
  auto back = family_from_json<3>(to_json(fam));
  EXPECT_EQ(back.size(), fam.size());
  EXPECT_EQ(back.broad, fam.broad);
  EXPECT_EQ(back.structure.M, fam.structure.M);
  EXPECT_TRUE(back.slab);
  EXPECT_EQ(kakeya_l2_overlap(back), kakeya_l2_overlap(fam));
  EXPECT_TRUE(audit_structure(back).pass);
}
