#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "occludere/occlusion.hpp"
#include "occludere/synth.hpp"
#include "occludere/toyface.hpp"

using namespace occludere;
using namespace occludere::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("occludere_test_occlusion_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DepthFrame plane(std::size_t w, std::size_t h, std::uint16_t mm) { return DepthFrame(w, h, mm); }

std::vector<Point3> random_points(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 20.0);
    std::vector<Point3> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng) * 0.3};
    return pts;
}

} // namespace

TEST(Dbscan, DenseBlobIsOneCluster) {
    std::vector<Point3> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({0.1 * i, 0.0, 0.0});
    const auto labels = dbscan(pts, 3.0, 8);
    for (int l : labels) EXPECT_EQ(l, 0);
}

TEST(Dbscan, IsolatedPointIsNoise) {
    std::vector<Point3> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({0.1 * i, 0.0, 0.0});
    pts.push_back({50.0, 50.0, 50.0});
    const auto labels = dbscan(pts, 3.0, 8);
    EXPECT_EQ(labels.back(), kNoise);
}

TEST(Dbscan, EmptyInput) { EXPECT_TRUE(dbscan({}, 1.0, 3).empty()); }

TEST(Dbscan, RejectsBadParameters) {
    EXPECT_THROW(Dbscan(0.0, 3), Error);
    EXPECT_THROW(Dbscan(1.0, 0), Error);
}

TEST(Dbscan, MatchesBruteForceOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const auto pts = random_points(rng, 50 + rng() % 150);
        const double eps = 1.0 + (rng() % 20) / 10.0;
        const std::size_t min_pts = 2 + rng() % 6;
        const auto got = dbscan(pts, eps, min_pts);
        const auto want = dbscan_oracle(pts, eps, min_pts);
        std::string why;
        EXPECT_TRUE(equivalent_labelings(pts, got, want, eps, min_pts, &why)) << why;
    }
}

TEST(Dbscan, ClusterIdsFollowFirstCorePoint) {
    std::vector<Point3> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({100.0 + 0.1 * i, 0, 0});
    for (int i = 0; i < 5; ++i) pts.push_back({0.1 * i, 0, 0});
    const auto labels = dbscan(pts, 1.0, 3);
    EXPECT_EQ(labels.front(), 0);
    EXPECT_EQ(labels.back(), 1);
}

TEST(Dbscan, PermutationInvariantUpToRelabelling) {
    std::mt19937_64 rng(5);
    auto pts = random_points(rng, 150);
    const auto base = dbscan(pts, 1.6, 4);
    std::vector<std::size_t> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Point3> shuffled;
    for (auto i : perm) shuffled.push_back(pts[i]);
    const auto moved = dbscan(shuffled, 1.6, 4);
    std::vector<int> back(pts.size());
    for (std::size_t k = 0; k < perm.size(); ++k) back[perm[k]] = moved[k];
    std::string why;
    EXPECT_TRUE(equivalent_labelings(pts, base, back, 1.6, 4, &why)) << why;
}

TEST(Threshold, ConstantPlane) {
    EXPECT_EQ(compute_threshold(plane(32, 32, 800), {4, 4, 20, 20}), 800);
}

TEST(Threshold, IgnoresIsolatedOutlier) {
    auto d = plane(32, 32, 800);
    d.at(10, 10) = 100;
    EXPECT_EQ(compute_threshold(d, {4, 4, 20, 20}), 800);
}

TEST(Threshold, AllInvalidIsEmptyFace) {
    try {
        compute_threshold(plane(16, 16, 0), {0, 0, 8, 8});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::empty_face);
    }
}

TEST(Threshold, AllNoiseIsDegenerate) {
    DepthFrame d(16, 16, 0);
    d.at(2, 2) = 800;
    d.at(12, 12) = 900;
    try {
        compute_threshold(d, {0, 0, 16, 16});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_cluster);
    }
}

TEST(Extract, NothingCloserGivesEmptyAsset) {
    const RgbImage rgb(16, 16, 7);
    EXPECT_TRUE(extract_occlusion(rgb, plane(16, 16, 800), {0, 0, 16, 16}, 800, 0).empty());
}

TEST(Extract, VerticalBarMaskIsExactlyTheBar) {
    RgbImage rgb(20, 20, 9);
    auto d = plane(20, 20, 800);
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 6; x < 9; ++x) {
            d.at(x, y) = 500;
            rgb.at(x, y, 0) = 200;
        }
    const Box box{2, 2, 16, 16};
    const auto a = extract_occlusion(rgb, d, box, 800, 0);
    EXPECT_EQ(a.bounds, (Box{6, 2, 3, 16}));
    EXPECT_EQ(asset_frame_mask(a, 20, 20), mask_oracle(d, box, 800, 0));
    for (std::size_t i = 0; i < a.mask.size(); ++i) EXPECT_EQ(a.patch.pixels[4 * i + 3], a.mask[i] ? 255 : 0);
    EXPECT_EQ(a.patch.at(0, 0, 0), 200);
}

TEST(Extract, UniformOccluderCoversWholeBox) {
    const RgbImage rgb(16, 16, 1);
    const Box box{3, 2, 10, 9};
    const auto a = extract_occlusion(rgb, plane(16, 16, 500), box, 800, 20);
    EXPECT_EQ(a.bounds, box);
    EXPECT_EQ(std::count(a.mask.begin(), a.mask.end(), 1), box.area());
}

TEST(Extract, RandomFramesMatchPredicate) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 30; ++i) {
        const auto f = random_frame(rng);
        const long threshold = 600 + static_cast<long>(rng() % 300), margin = static_cast<long>(rng() % 40);
        const auto a = extract_occlusion(f.rgb, f.depth, f.box, static_cast<std::uint16_t>(threshold),
                                         static_cast<std::uint16_t>(margin));
        EXPECT_EQ(asset_frame_mask(a, f.depth.width, f.depth.height), mask_oracle(f.depth, f.box, threshold, margin));
    }
}

TEST(Extract, DespeckleDropsIsolatedPixels) {
    RgbImage rgb(40, 40, 0);
    auto d = plane(40, 40, 800);
    for (std::size_t y = 10; y < 20; ++y)
        for (std::size_t x = 10; x < 20; ++x) d.at(x, y) = 500;
    d.at(35, 35) = 300;
    const Box box{0, 0, 40, 40};
    const auto raw = extract_occlusion(rgb, d, box, 800, 20);
    EXPECT_EQ(raw.bounds, (Box{10, 10, 26, 26}));
    const auto clean = despeckle(raw, d);
    EXPECT_EQ(clean.bounds, (Box{10, 10, 10, 10}));
    EXPECT_EQ(std::count(clean.mask.begin(), clean.mask.end(), 1), 100);
}

TEST(Composite, TransparentAssetLeavesImage) {
    RgbImage face(16, 16, 100);
    OcclusionAsset a;
    a.patch = RgbaImage(4, 4, 0);
    a.mask.assign(16, 0);
    EXPECT_EQ(composite(face, a, 1.0, 8, 8).image, face);
}

TEST(Composite, OpaquePatchReplacesRegion) {
    RgbImage face(16, 16, 100);
    OcclusionAsset a;
    a.patch = RgbaImage(4, 4, 255);
    for (std::size_t i = 0; i < 16; ++i) a.patch.pixels[4 * i] = 10;
    a.mask.assign(16, 1);
    const auto r = composite(face, a, 1.0, 8, 8);
    EXPECT_EQ(r.placed, (Box{6, 6, 4, 4}));
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const bool in = r.placed.contains(static_cast<long>(x), static_cast<long>(y));
            EXPECT_EQ(r.image.at(x, y, 0), in ? 10 : 100);
            EXPECT_EQ(r.image.at(x, y, 1), in ? 255 : 100);
        }
}

TEST(Composite, HalfAlphaMatchesBlendOracle) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> byte(0, 255);
    RgbImage face(12, 12);
    for (auto& p : face.pixels) p = static_cast<std::uint8_t>(byte(rng));
    OcclusionAsset a;
    a.patch = RgbaImage(5, 5);
    for (std::size_t i = 0; i < 25; ++i) {
        for (std::size_t c = 0; c < 3; ++c) a.patch.pixels[4 * i + c] = static_cast<std::uint8_t>(byte(rng));
        a.patch.pixels[4 * i + 3] = 255;
    }
    a.mask.assign(25, 1);
    const auto r = composite(face, a, 1.0, 6, 6, 0.5);
    EXPECT_EQ(r.image, blend_oracle(face, a.patch, 4, 4, 0.5));
    for (std::size_t y = 4; y < 9; ++y)
        for (std::size_t x = 4; x < 9; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                EXPECT_EQ(r.image.at(x, y, c),
                          static_cast<int>(std::floor(0.5 * face.at(x, y, c) + 0.5 * a.patch.at(x - 4, y - 4, c) + 0.5)));
}

TEST(Composite, RandomScaledPatchesMatchOracle) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int t = 0; t < 25; ++t) {
        RgbImage face(32, 24);
        for (auto& p : face.pixels) p = static_cast<std::uint8_t>(byte(rng));
        OcclusionAsset a;
        a.patch = RgbaImage(3 + rng() % 10, 3 + rng() % 10);
        for (auto& p : a.patch.pixels) p = static_cast<std::uint8_t>(byte(rng));
        a.mask.assign(a.patch.width * a.patch.height, 1);
        const double scale = 0.5 + (rng() % 30) / 10.0;
        const long ax = static_cast<long>(rng() % 40) - 4, ay = static_cast<long>(rng() % 30) - 3;
        const auto r = composite(face, a, scale, ax, ay);
        const auto scaled = rescale_nearest(a.patch, scale);
        EXPECT_EQ(r.image, blend_oracle(face, scaled, ax - static_cast<long>(scaled.width / 2),
                                        ay - static_cast<long>(scaled.height / 2)));
    }
}

TEST(Composite, OutsideImageIsNoOp) {
    RgbImage face(8, 8, 50);
    OcclusionAsset a;
    a.patch = RgbaImage(2, 2, 255);
    a.mask.assign(4, 1);
    const auto r = composite(face, a, 1.0, 100, 100);
    EXPECT_FALSE(r.intersects);
    EXPECT_EQ(r.image, face);
}

TEST(OcclusionPercentage, EmptyAndFull) {
    std::vector<std::uint8_t> none(64, 0), all(64, 1);
    EXPECT_EQ(occlusion_percentage(none, 8, 8, {0, 0, 8, 8}), 0.0);
    EXPECT_EQ(occlusion_percentage(all, 8, 8, {0, 0, 8, 8}), 100.0);
    EXPECT_THROW(occlusion_percentage(all, 8, 8, {0, 0, 0, 8}), Error);
}

TEST(OcclusionPercentage, CountingOracleAndMonotoneUnderUnion) {
    std::mt19937_64 rng(4);
    std::vector<std::uint8_t> a(64 * 64), b(64 * 64);
    std::size_t count = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng() % 3 == 0;
        b[i] = a[i] || rng() % 5 == 0;
        count += a[i];
    }
    const Box region{0, 0, 64, 64};
    EXPECT_EQ(occlusion_percentage(a, 64, 64, region), 100.0 * static_cast<double>(count) / 4096.0);
    EXPECT_LE(occlusion_percentage(a, 64, 64, region), occlusion_percentage(b, 64, 64, region));
}

TEST(Severity, ScalesStrictlyIncrease) {
    for (int l = 2; l <= 6; ++l) EXPECT_GT(severity_level(l).scale, severity_level(l - 1).scale);
    EXPECT_THROW(severity_level(0), Error);
    EXPECT_THROW(severity_level(7), Error);
}

class SeverityDataset : public ::testing::Test {
protected:
    void SetUp() override {
        dir = scratch("severity");
        faces = generate_dataset(12, PoseRanges{}, RenderSpec{}, 3, dir / "faces");
        generate_rgbd_sequence(dir / "rgbd", RgbdSpec{}, 9);
        ExtractOptions opt;
        opt.despeckle = true;
        assets = extract_sequence(dir / "rgbd", read_boxes(dir / "rgbd" / "boxes.csv"), opt).assets;
    }
    fs::path dir;
    DatasetManifest faces;
    std::vector<OcclusionAsset> assets;
};

TEST_F(SeverityDataset, MeanPercentageIncreasesWithLevel) {
    double previous = 0.0;
    for (int l = 1; l <= 6; ++l) {
        const auto r = apply_severity(faces, assets, l, 21, dir / ("L" + std::to_string(l)));
        const double pct = mean_occlusion_percentage(r.manifest);
        EXPECT_GT(pct, previous) << "level " << l;
        previous = pct;
    }
}

TEST_F(SeverityDataset, SameSeedGivesIdenticalManifest) {
    apply_severity(faces, assets, 3, 5, dir / "a");
    apply_severity(faces, assets, 3, 5, dir / "b");
    std::ifstream a(dir / "a" / "manifest.csv"), b(dir / "b" / "manifest.csv");
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_FALSE(sa.empty());
    EXPECT_EQ(sa, sb);
}

TEST_F(SeverityDataset, RecordsKeepSourceIdsAndMetadata) {
    const auto r = apply_severity(faces, assets, 2, 1, dir / "meta");
    ASSERT_EQ(r.manifest.size(), faces.size());
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto& rec = r.manifest.records[i];
        EXPECT_EQ(rec.source_id, faces.records[i].id);
        EXPECT_EQ(rec.id, faces.records[i].id + "@L2");
        ASSERT_TRUE(rec.occlusion.has_value());
        EXPECT_TRUE(rec.box.contains(rec.occlusion->anchor_x, rec.occlusion->anchor_y));
    }
    const auto loaded = load_manifest(dir / "meta" / "manifest.csv", BinSpec{});
    EXPECT_EQ(loaded.records, r.manifest.records);
}

TEST_F(SeverityDataset, SequenceExtractionFindsOneAssetPerOccludedFrame) {
    EXPECT_EQ(assets.size(), RgbdSpec{}.frames - 1);
    for (const auto& a : assets) {
        EXPECT_FALSE(a.empty());
        EXPECT_GT(std::count(a.mask.begin(), a.mask.end(), 1), 50);
    }
}

TEST_F(SeverityDataset, AssetArchiveRoundTrip) {
    write_asset_archive(dir / "archive", assets);
    const auto back = read_asset_archive(dir / "archive");
    ASSERT_EQ(back.size(), assets.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].id, assets[i].id);
        EXPECT_EQ(back[i].patch, assets[i].patch);
        EXPECT_EQ(back[i].mask, assets[i].mask);
        EXPECT_EQ(back[i].bounds, assets[i].bounds);
        EXPECT_EQ(back[i].source_box, assets[i].source_box);
        EXPECT_EQ(back[i].threshold_mm, assets[i].threshold_mm);
    }
}

TEST(Netpbm, DepthRoundTripIsLossless) {
    const auto dir = scratch("pgm");
    DepthFrame d(7, 5);
    for (std::size_t i = 0; i < d.depth.size(); ++i) d.depth[i] = static_cast<std::uint16_t>(i * 1877);
    write_pgm16(dir / "d.pgm", d);
    EXPECT_EQ(read_pgm16(dir / "d.pgm"), d);
}

TEST(Netpbm, TruncatedFileIsFormatError) {
    const auto dir = scratch("trunc");
    std::ofstream(dir / "bad.ppm") << "P6\n4 4\n255\nabc";
    try {
        read_ppm(dir / "bad.ppm");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
    }
}
