#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "plantscan/junctions.hpp"
#include "plantscan/synthscan.hpp"
#include "oracles.hpp"

using namespace plantscan;
using plantscan::testing::brute_dbscan;
using plantscan::testing::median_nn;

namespace {

// Dip values computed offline by a linear-programming oracle that minimises
// the sup-distance to a unimodal CDF over every candidate mode location
// (tests/oracles/dip_lp_oracle.py).
struct FrozenDip {
    const char* name;
    std::vector<double> sample;
    double dip;
};

std::vector<FrozenDip> frozen_dips() {
    std::vector<double> grid(100);
    for (int i = 0; i < 100; ++i) grid[static_cast<std::size_t>(i)] = i;
    std::vector<double> masses(50, 0.0);
    masses.insert(masses.end(), 50, 10.0);
    return {
        {"grid100", grid, 0.005},
        {"two_masses", masses, 0.25},
        {"small_a", {0, 1, 2, 10, 11, 12}, 0.2},
        {"small_b", {0.1, 0.4, 0.45, 0.5, 2.0, 2.2, 2.3, 5.0}, 0.15625},
        {"ties", {1, 1, 2, 3, 3, 3, 7, 8, 8}, 0.133333333333},
        {"skewed", {0, 0.01, 0.02, 0.05, 0.1, 0.3, 0.9, 2.7, 8.1, 24.3}, 0.05},
        {"bimodal_0",
         {-0.326967, -0.974315, 0.494588, 0.42499, -0.441219, -0.099676, -1.803692, -0.88238, 0.216588, 0.595547,
          -0.008975, -0.82275, 4.64489, 5.525316, 3.633293, 6.204773, 4.771401, 4.19497, 3.96054, 3.870835, 5.762975},
         0.116049089737},
        {"bimodal_1",
         {-1.354787, -0.842512, 0.101941, -1.212925, -1.155378, 1.687827, -0.144852, -0.373649, 2.148789, 0.996506,
          0.576432, 0.867758, 5.567718, 5.131064, 2.662241, 5.650078, 4.860918, 6.521885, 5.997745, 6.357931, 4.59759},
         0.099263981538},
        {"bimodal_2",
         {0.455671, 1.313982, -0.997075, -0.134987, -0.541246, 0.198885, -0.08134, -0.348862, 0.832479, 0.516678,
          0.826547, 0.658776, 3.684572, 5.17519, 4.298055, 6.563574, 4.922344, 6.117312, 5.667169, 5.123732, 3.653821},
         0.095511055226},
        {"bimodal_3",
         {-0.280178, 0.39547, 0.954701, 1.74284, 0.472304, 2.090307, -0.36615, 0.303593, -0.350869, -0.691936,
          -1.698398, -1.893771, 6.370595, 3.394562, 4.141701, 3.70135, 5.00377, 3.565642, 3.636661, 5.377171, 5.150249},
         0.084610987996},
        {"bimodal_4",
         {-0.407022, 1.191921, 1.391574, 0.379852, -0.747827, 0.667184, 0.436136, 2.239778, 0.40384, 0.8682, -0.088821,
          2.301027, 4.989801, 6.796017, 7.457135, 4.182643, 3.786263, 4.102772, 4.052568, 4.824486, 3.462262},
         0.076030588655},
        {"bimodal_5",
         {0.675574, 0.331243, -1.109468, -0.354803, 2.199026, 0.096523, 0.313666, 0.383769, -1.571469, 0.919817,
          1.25376, -1.963868, 5.638244, 4.036625, 5.012489, 4.473826, 4.692701, 2.557428, 3.474195, 5.100991, 3.881468},
         0.076056265873},
    };
}

// Samples along a segment; with `jitter_seed` each sample is shifted by up
// to a fifth of the spacing so no two neighbour distances tie.
PointCloud segment(const Vec3& a, const Vec3& b, double spacing, std::uint32_t jitter_seed = 0) {
    PointCloud c;
    std::mt19937 rng(jitter_seed);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    const double len = (b - a).norm();
    const auto n = static_cast<int>(std::floor(len / spacing + 1e-9));
    for (int i = 0; i <= n; ++i) {
        const double s = std::clamp((i + (jitter_seed ? u(rng) : 0.0)) * spacing, 0.0, len);
        c.push_back(a + (b - a) * (s / len));
    }
    return c;
}

PointCloud join(std::initializer_list<PointCloud> parts) {
    PointCloud out;
    for (const auto& p : parts) out.points.insert(out.points.end(), p.points.begin(), p.points.end());
    return out;
}

std::vector<Vec3> random_features(std::size_t n, double spread, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-spread, spread);
    std::vector<Vec3> out;
    while (out.size() < n) {
        const Vec3 p(u(rng), u(rng), u(rng));
        // Keep features well separated.
        if (std::all_of(out.begin(), out.end(), [&](const Vec3& q) { return (q - p).norm() > 6.0; })) out.push_back(p);
    }
    return out;
}

}  // namespace

// --- dip ------------------------------------------------------------------

TEST(Dip, MatchesLinearProgrammingOracle) {
    for (const auto& f : frozen_dips()) {
        EXPECT_NEAR(dip_of(f.sample), f.dip, 1e-9) << f.name;
    }
}

TEST(Dip, UniformGridIsNearlyUnimodal) {
    std::vector<double> grid(100);
    std::iota(grid.begin(), grid.end(), 0.0);
    EXPECT_LE(dip_of(grid), 0.03);
}

TEST(Dip, TwoPointMassesGiveTheMaximum) {
    std::vector<double> s(50, 0.0);
    s.insert(s.end(), 50, 10.0);
    EXPECT_DOUBLE_EQ(dip_of(s), 0.25);
}

TEST(Dip, ConstantSampleHasZeroDip) { EXPECT_EQ(dip_of(std::vector<double>(20, 3.5)), 0.0); }

TEST(Dip, RejectsShortOrUnsortedSamples) {
    EXPECT_THROW(dip_of({1.0, 2.0, 3.0}), PreconditionError);
    const std::vector<double> unsorted{3, 1, 2, 4, 5};
    EXPECT_THROW(dip_statistic(unsorted), PreconditionError);
}

TEST(Dip, BoundsAndAffineInvariance) {
    std::mt19937 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 4 + static_cast<std::size_t>(trial) * 3;
        std::vector<double> s(n);
        for (auto& v : s) v = g(rng) + (trial % 2 ? 4.0 * (g(rng) > 0) : 0.0);
        const double d = dip_of(s);
        EXPECT_GE(d, 1.0 / (2.0 * static_cast<double>(n)) - 1e-12);
        EXPECT_LE(d, 0.25);
        std::vector<double> moved = s, flipped = s;
        for (auto& v : moved) v = 3.7 * v - 12.0;
        for (auto& v : flipped) v = -v;
        EXPECT_NEAR(dip_of(moved), d, 1e-12);
        EXPECT_NEAR(dip_of(flipped), d, 1e-12);
    }
}

// --- detection ------------------------------------------------------------

TEST(Junctions, BranchOffAStraightSegmentGivesOneCandidate) {
    const Vec3 q(1.0, 2.0, 3.0);
    const Vec3 up = Vec3::UnitZ(), side = Vec3(1, 0, 1).normalized();
    const auto cloud = join({segment(q - 10 * up, q + 10 * up, 0.25), segment(q + 0.25 * side, q + 10 * side, 0.25)});
    const auto c = detect_junctions(cloud);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_LT((c[0].position - q).norm(), 1.0);
    EXPECT_GT(c[0].dip_value, 0.0);
    EXPECT_LE(c[0].dip_value, 0.25);
}

TEST(Junctions, VShapeGivesOneCandidate) {
    const Vec3 q(0, 0, 0);
    const Vec3 a = Vec3(1, 0, 2).normalized(), b = Vec3(-1, 0.3, 2).normalized();
    const auto cloud = join({segment(q, q + 12 * a, 0.25), segment(q + 0.25 * b, q + 12 * b, 0.25)});
    const auto c = detect_junctions(cloud);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_LT((c[0].position - q).norm(), 1.0);
}

TEST(Junctions, StraightSegmentHasNoCandidates) {
    const auto cloud = segment(Vec3(0, 0, 0), Vec3(5, 5, 20), 0.25);
    EXPECT_TRUE(detect_junctions(cloud).empty());
}

TEST(Junctions, RigidMotionMovesCandidates) {
    const Vec3 q(0, 0, 0);
    const auto cloud = join({segment(q - 8 * Vec3::UnitZ(), q + 8 * Vec3::UnitZ(), 0.25, 17),
                             segment(q + 0.25 * Vec3(1, 1, 1).normalized(), q + 9 * Vec3(1, 1, 1).normalized(), 0.25, 18)});
    RigidTransform t = RigidTransform::about_z(37.0, Vec3(4, -2, 0));
    t.translation += Vec3(0.3, 0.1, 5.0);
    const auto before = detect_junctions(cloud);
    const auto after = detect_junctions(t.apply(cloud));
    ASSERT_EQ(before.size(), after.size());
    ASSERT_FALSE(before.empty());
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_LT((t(before[i].position) - after[i].position).norm(), 1e-6);
}

TEST(Junctions, RequiresEnoughPoints) {
    const auto tiny = segment(Vec3::Zero(), Vec3(1, 0, 0), 0.25);
    EXPECT_THROW(detect_junctions(tiny), PreconditionError);
}

TEST(Junctions, NmsKeepsHighestDip) {
    std::vector<JunctionCandidate> c{{Vec3(0, 0, 0), 0.1, 1, 0}, {Vec3(1, 0, 0), 0.2, 1, 1}, {Vec3(10, 0, 0), 0.05, 1, 2}};
    const auto kept = non_max_suppression(c, 4.0);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].source_point, 1u);
    EXPECT_EQ(kept[1].source_point, 2u);
}

TEST(Junctions, RecoversPlantJunctionsAcrossViews) {
    const auto plant = rosette_plant();
    ASSERT_EQ(plant.junctions.size(), 5u);
    const auto views = views_in_world(scan_session(plant, ScannerModel{}, 12));
    std::size_t found_nms = 0, found_clusters = 0, total = 0;
    for (const auto& v : views) {
        const auto det = detect_junctions_full(v);
        const auto clusters = extract_true_junctions(det.raw);
        for (const auto& j : plant.junctions) {
            ++total;
            found_nms += std::any_of(det.nms.begin(), det.nms.end(), [&](const auto& c) { return (c.position - j).norm() < 2.0; });
            found_clusters +=
                std::any_of(clusters.begin(), clusters.end(), [&](const auto& c) { return (c.centroid - j).norm() < 2.0; });
        }
    }
    EXPECT_GE(static_cast<double>(found_nms) / static_cast<double>(total), 0.8);
    EXPECT_GE(static_cast<double>(found_clusters) / static_cast<double>(total), 0.8);
}

// --- clustering -----------------------------------------------------------

TEST(Dbscan, TwoSeparatedBlobs) {
    std::mt19937 rng(1);
    std::normal_distribution<double> g(0.0, 0.5);
    std::vector<Vec3> pts;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 10; ++i) pts.emplace_back(100.0 * b + g(rng), g(rng), g(rng));
    const auto r = dbscan(pts, {5.0, 4});
    EXPECT_EQ(r.cluster_count, 2u);
    EXPECT_TRUE(r.outliers().empty());
}

TEST(Dbscan, IsolatedPointsAreOutliers) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 12; ++i) pts.emplace_back(0.1 * i, 0, 0);
    pts.emplace_back(50, 0, 0);
    pts.emplace_back(0, 50, 0);
    pts.emplace_back(0, 0, 50);
    const auto r = dbscan(pts, {2.0, 4});
    EXPECT_EQ(r.cluster_count, 1u);
    EXPECT_EQ(r.outliers(), (std::vector<std::size_t>{12, 13, 14}));
}

TEST(Dbscan, MatchesBruteForceOracle) {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 200;
        const double box = 5.0 + static_cast<double>(rng() % 30);
        std::uniform_real_distribution<double> u(0.0, box);
        std::vector<Vec3> pts(n);
        for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
        // Some exact duplicates and boundary-distance pairs.
        if (n > 4) {
            pts[1] = pts[0];
            pts[3] = pts[2] + Vec3(2.0, 0, 0);
        }
        const DbscanConfig cfg{1.0 + static_cast<double>(rng() % 4), 2 + rng() % 6};
        EXPECT_EQ(dbscan(pts, cfg).labels, brute_dbscan(pts, cfg.eps, cfg.min_pts)) << "trial " << trial;
    }
}

TEST(Dbscan, CoreSetAndCorePartitionIgnorePointOrder) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 15.0);
    std::vector<Vec3> pts(150);
    for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec3> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    const auto a = dbscan(pts, {2.0, 4}), b = dbscan(shuffled, {2.0, 4});
    ASSERT_EQ(a.cluster_count, b.cluster_count);
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(a.core[perm[k]], b.core[k]);
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < perm.size(); ++j)
            if (b.core[i] && b.core[j]) {
                EXPECT_EQ(a.labels[perm[i]] == a.labels[perm[j]], b.labels[i] == b.labels[j]);
            }
}

TEST(Dbscan, RejectsInvalidConfig) {
    const std::vector<Vec3> pts{Vec3::Zero()};
    EXPECT_THROW(dbscan(pts, {0.0, 4}), PreconditionError);
    EXPECT_THROW(dbscan(pts, {1.0, 1}), PreconditionError);
}

TEST(TrueJunctions, DenseGroupBecomesOneFeature) {
    const Vec3 q(3, 4, 5);
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<JunctionCandidate> c;
    for (std::size_t i = 0; i < 8; ++i) c.push_back({q + Vec3(u(rng), u(rng), u(rng)), 0.1, 1.0, i});
    c.push_back({q + Vec3(20, 0, 0), 0.1, 1.0, 8});
    c.push_back({q + Vec3(0, -20, 0), 0.1, 1.0, 9});
    c.push_back({q + Vec3(0, 0, 25), 0.1, 1.0, 10});
    const auto clusters = extract_true_junctions(c, {2.0, 4});
    ASSERT_EQ(clusters.size(), 1u);
    EXPECT_EQ(clusters[0].members.size(), 8u);
    EXPECT_LT((clusters[0].centroid - q).norm(), 1.0);
    Vec3 mean = Vec3::Zero();
    for (const auto& m : clusters[0].members) mean += m.position / 8.0;
    EXPECT_LT((mean - clusters[0].centroid).norm(), 1e-12);
}

TEST(TrueJunctions, NoCandidatesNoFeatures) { EXPECT_TRUE(extract_true_junctions({}).empty()); }

// --- matching -------------------------------------------------------------

TEST(RigidTransform, ConstructionAndAlgebra) {
    const auto r = RigidTransform::about_z(30.0, Vec3(1, 2, 3));
    EXPECT_TRUE(r.is_valid());
    EXPECT_NEAR(r.angle_degrees(), 30.0, 1e-9);
    EXPECT_LT((r(Vec3(1, 2, 7)) - Vec3(1, 2, 7)).norm(), 1e-12);
    const auto id = r * r.inverse();
    EXPECT_LT((id.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(id.translation.norm(), 1e-12);
}

TEST(RigidTransform, KabschRecoversKnownMotion) {
    const auto pts = random_features(10, 20.0, 4);
    RigidTransform truth;
    truth.rotation = Eigen::AngleAxisd(0.7, Vec3(1, 2, -1).normalized()).toRotationMatrix();
    truth.translation = Vec3(5, -3, 2);
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(truth(p));
    const auto est = fit_rigid(pts, moved);
    EXPECT_TRUE(est.is_valid());
    EXPECT_LT((est.rotation - truth.rotation).norm(), 1e-9);
    EXPECT_LT((est.translation - truth.translation).norm(), 1e-9);
}

TEST(MatchFeatures, RecoversThirtyDegreeRotation) {
    const auto a = random_features(7, 20.0, 11);
    auto truth = RigidTransform::about_z(30.0);
    truth.translation += Vec3(4, -2, 1);
    std::vector<Vec3> b;
    for (const auto& p : a) b.push_back(truth(p));
    const auto m = match_features(a, b);
    EXPECT_EQ(m.pairs.size(), a.size());
    EXPECT_LT((m.transform.inverse() * truth).angle_degrees(), 0.5);
    EXPECT_LT((m.transform.translation - truth.translation).norm(), 0.5);
    EXPECT_TRUE(m.transform.is_valid());
}

TEST(MatchFeatures, IdenticalSetsMatchThemselves) {
    const auto a = random_features(6, 15.0, 2);
    const auto m = match_features(a, a);
    ASSERT_EQ(m.pairs.size(), a.size());
    for (const auto& [i, j] : m.pairs) EXPECT_EQ(i, j);
    EXPECT_LT((m.transform.rotation - Mat3::Identity()).norm(), 1e-9);
    EXPECT_LT(m.transform.translation.norm(), 1e-9);
}

TEST(MatchFeatures, OutliersDoNotDegradeTheFit) {
    const auto core = random_features(9, 25.0, 21);
    const std::vector<Vec3> a(core.begin(), core.begin() + 5);
    const auto truth = RigidTransform::about_z(45.0, Vec3(2, 2, 0));
    std::mt19937 rng(6);
    std::normal_distribution<double> g(0.0, 0.2);
    std::vector<Vec3> b;
    for (const auto& p : a) b.push_back(truth(p) + Vec3(g(rng), g(rng), g(rng)));
    auto error = [&](const FeatureMatch& m) {
        double s = 0;
        for (const auto& p : a) s = std::max(s, (m.transform(p) - truth(p)).norm());
        return s;
    };
    const double clean = error(match_features(a, b));
    auto a_out = a, b_out = b;
    a_out.push_back(core[5]);
    a_out.push_back(core[6]);
    b_out.push_back(truth(core[7]) + Vec3(0, 0, 9));
    b_out.push_back(truth(core[8]) + Vec3(7, 0, 0));
    const auto noisy = match_features(a_out, b_out);
    EXPECT_LE(error(noisy), 2.0 * clean + 1e-9);
}

TEST(MatchFeatures, ConsensusIsRigidInvariant) {
    auto a = random_features(6, 20.0, 31);
    auto b = a;
    const auto shift = RigidTransform::about_z(-20.0, Vec3(3, 3, 3));
    for (auto& p : b) p = shift(p);
    b.pop_back();
    b.push_back(Vec3(60, 60, 60));
    const auto m1 = match_features(a, b);
    const auto move = RigidTransform::about_z(111.0, Vec3(-5, 1, 0));
    for (auto& p : a) p = move(p);
    for (auto& p : b) p = move(p);
    EXPECT_EQ(match_features(a, b).pairs.size(), m1.pairs.size());
}

TEST(MatchFeatures, TooFewFeaturesRaiseNoAlignment) {
    const std::vector<Vec3> two{Vec3::Zero(), Vec3(5, 0, 0)};
    const auto many = random_features(5, 10.0, 1);
    EXPECT_THROW(match_features(two, many), NoAlignmentError);
    // Mutually inconsistent geometry.
    const std::vector<Vec3> a{Vec3(0, 0, 0), Vec3(10, 0, 0), Vec3(0, 10, 0)};
    const std::vector<Vec3> b{Vec3(0, 0, 0), Vec3(30, 0, 0), Vec3(0, 50, 0)};
    EXPECT_THROW(match_features(a, b), NoAlignmentError);
}

// --- rough alignment ------------------------------------------------------

class RoughAlign : public ::testing::TestWithParam<int> {};

TEST_P(RoughAlign, ViewsLandOnEachOther) {
    const auto plant = rosette_plant();
    const auto views = scan_session(plant, ScannerModel{}, 12);
    const int step = GetParam() / 30;
    const auto& a = views[0];
    const auto& b = views[static_cast<std::size_t>(step)];
    const auto t = rough_align(a.cloud, b.cloud);
    EXPECT_TRUE(t.is_valid());
    EXPECT_LT(median_nn(t.apply(b.cloud), a.cloud), GetParam() == 30 ? 2.0 : 3.0);
}

INSTANTIATE_TEST_SUITE_P(Angles, RoughAlign, ::testing::Values(30, 60, 90));

TEST(RoughAlignInverse, ForwardAndBackwardCompose) {
    const auto views = scan_session(rosette_plant(), ScannerModel{}, 12);
    const auto ab = rough_align(views[0].cloud, views[1].cloud);
    const auto ba = rough_align(views[1].cloud, views[0].cloud);
    EXPECT_LT((ab * ba).angle_degrees(), 5.0);
}
