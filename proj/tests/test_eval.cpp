#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "occludere/eval.hpp"
#include "occludere/synth.hpp"
#include "occludere/toyface.hpp"

using namespace occludere;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("occludere_test_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double mean3(double a, double b, double c) { return (a + b + c) / 3.0; }

EvalReport report(double y, double p, double r) {
    EvalReport e;
    e.mae = {y, p, r, mean3(y, p, r)};
    e.count = 10;
    return e;
}

NetConfig tiny_net() {
    NetConfig c;
    c.input_size = 16;
    c.widths = {4, 4};
    return c;
}

} // namespace

TEST(Mae, PerfectPredictionsAreZero) {
    const std::vector<EulerPose> p{{1, 2, 3}, {-4, 5, -6}};
    const auto m = mae(p, p);
    EXPECT_EQ(m.yaw, 0.0);
    EXPECT_EQ(m.pitch, 0.0);
    EXPECT_EQ(m.roll, 0.0);
    EXPECT_EQ(m.average, 0.0);
}

TEST(Mae, ConstantYawOffset) {
    std::vector<EulerPose> gt{{1, 2, 3}, {-4, 5, -6}, {0, 0, 0}}, pred = gt;
    for (auto& p : pred) p.yaw += 2.0;
    const auto m = mae(pred, gt);
    EXPECT_DOUBLE_EQ(m.yaw, 2.0);
    EXPECT_EQ(m.pitch, 0.0);
    EXPECT_EQ(m.roll, 0.0);
    EXPECT_DOUBLE_EQ(m.average, 2.0 / 3.0);
}

TEST(Mae, MatchesLoopOracleAndIsPermutationInvariant) {
    std::mt19937_64 rng(20);
    std::uniform_real_distribution<double> u(-90, 90);
    std::vector<EulerPose> pred(20), gt(20);
    for (std::size_t i = 0; i < 20; ++i) {
        pred[i] = {u(rng), u(rng), u(rng)};
        gt[i] = {u(rng), u(rng), u(rng)};
    }
    double oracle[3] = {0, 0, 0};
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t a = 0; a < 3; ++a) oracle[a] += std::fabs(pred[i][a] - gt[i][a]) / 20.0;
    const auto m = mae(pred, gt);
    for (std::size_t a = 0; a < 3; ++a) {
        EXPECT_NEAR(m[a], oracle[a], 1e-12);
        EXPECT_GE(m[a], 0.0);
    }
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<EulerPose> p2, g2;
    for (auto i : perm) p2.push_back(pred[i]), g2.push_back(gt[i]);
    EXPECT_NEAR(mae(p2, g2).average, m.average, 1e-12);
}

TEST(Mae, LengthMismatchIsContractError) {
    const std::vector<EulerPose> a(2), b(3);
    try {
        mae(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::contract);
    }
}

TEST(CombinedAverage, EqualInputs) { EXPECT_DOUBLE_EQ(combined_average(3.25, 3.25), 3.25); }

TEST(CombinedAverage, ReproducesReferenceCells) {
    EXPECT_NEAR(combined_average(5.190, 4.043), 4.617, 1e-3);
    EXPECT_NEAR(combined_average(6.519, 5.389), 5.954, 1e-3);
}

TEST(CombinedAverage, ReproducesEveryAlphaCell) {
    struct Row {
        double occluded, clean, combined;
    };
    // Two of the first grid's clean averages are only consistent with their per-angle cells.
    const Row biwi[] = {{5.345, mean3(4.259, 4.704, 3.580), 4.763},
                        {5.495, mean3(4.765, 4.493, 3.956), 4.950},
                        {5.190, 4.043, 4.617},
                        {5.441, 4.004, 4.723},
                        {5.709, 4.109, 4.909}};
    const Row aflw[] = {{6.737, 5.441, 6.089},
                        {7.047, 5.768, 6.4075},
                        {6.519, 5.389, 5.954},
                        {6.759, 5.454, 6.1065},
                        {6.578, 5.459, 6.0185}};
    for (const auto& r : biwi) EXPECT_NEAR(combined_average(r.occluded, r.clean), r.combined, 1e-3);
    for (const auto& r : aflw) EXPECT_NEAR(combined_average(r.occluded, r.clean), r.combined, 1e-3);
}

TEST(SeverityCurve, GapOfReferenceCurves) {
    SeverityCurve hopenet{{1, 2, 3, 4, 5, 6}, {5.409, 6.299, 7.633, 9.329, 11.178, 13.168}};
    SeverityCurve lsr{{1, 2, 3, 4, 5, 6}, {4.755, 5.201, 5.646, 6.503, 8.130, 10.108}};
    EXPECT_NEAR(hopenet.gap(), 7.759, 1e-9);
    EXPECT_NEAR(hopenet.gap(), 8.0, 0.5);
    EXPECT_LT(lsr.gap(), hopenet.gap());
    EXPECT_THROW(SeverityCurve{}.gap(), Error);
}

class EvalData : public ::testing::Test {
protected:
    void SetUp() override {
        dir = scratch("data");
        clean = generate_dataset(8, PoseRanges{}, RenderSpec{}, 4, dir / "clean");
        generate_rgbd_sequence(dir / "rgbd", RgbdSpec{}, 5);
        assets = extract_sequence(dir / "rgbd", read_boxes(dir / "rgbd" / "boxes.csv"), {}).assets;
    }
    fs::path dir;
    DatasetManifest clean;
    std::vector<OcclusionAsset> assets;
};

TEST_F(EvalData, EvaluateMatchesManualPrediction) {
    const PoseNet<double> net(tiny_net(), 1);
    const auto norm = NormalizationSpec::imagenet();
    const auto rep = evaluate(net, norm, clean, "ck");
    EXPECT_EQ(rep.count, 8u);
    EXPECT_EQ(rep.checkpoint_id, "ck");
    EXPECT_EQ(rep.manifest_id, manifest_id(clean));
    std::vector<std::size_t> rows(8);
    std::iota(rows.begin(), rows.end(), 0);
    const auto batch = make_batch<double>(clean, rows, norm, BinSpec{}, 16);
    std::vector<EulerPose> gts;
    for (const auto& r : clean.records) gts.push_back(r.pose);
    EXPECT_NEAR(rep.mae.average, mae(predict(net, batch.images), gts).average, 1e-12);
}

TEST_F(EvalData, ManifestIdTracksContent) {
    auto other = clean;
    EXPECT_EQ(manifest_id(other), manifest_id(clean));
    other.records[0].pose.yaw += 1e-6;
    EXPECT_NE(manifest_id(other), manifest_id(clean));
}

TEST_F(EvalData, IdenticalModelsGiveIdenticalCurves) {
    std::vector<DatasetManifest> levels;
    for (int l = 1; l <= 6; ++l)
        levels.push_back(apply_severity(clean, assets, l, 9, dir / ("L" + std::to_string(l))).manifest);
    const PoseNet<double> net(tiny_net(), 2);
    const auto n = NormalizationSpec::imagenet();
    const auto sweep = severity_sweep(net, n, net, n, levels);
    EXPECT_EQ(sweep.lsr.levels, (std::vector<int>{1, 2, 3, 4, 5, 6}));
    EXPECT_EQ(sweep.lsr.average, sweep.baseline.average);
    write_severity_curves(dir / "curves.csv", sweep);
    const auto text = slurp(dir / "curves.csv");
    EXPECT_EQ(text.substr(0, 16), "model,level,avg\n");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
}

TEST(Ablation, SingleValueGivesOneReportPair) {
    const auto grid = run_ablation("beta", {"0.999"}, [](const std::string&) {
        AblationCell c;
        c.occluded = report(6, 7, 8);
        c.clean = report(3, 4, 5);
        return c;
    });
    ASSERT_EQ(grid.cells.size(), 1u);
    EXPECT_EQ(grid.cells[0].value, "0.999");
    EXPECT_DOUBLE_EQ(*grid.cells[0].combined(), 5.5);
    EXPECT_EQ(report_csv(grid), std::string(kReportHeader) +
                                    "\nbeta,0.999,occluded,6.000,7.000,8.000,7.000,5.500\n"
                                    "beta,0.999,clean,3.000,4.000,5.000,4.000,5.500\n");
}

TEST(Ablation, FailedCellIsReportedAndGridContinues) {
    std::ostringstream log;
    const auto grid = run_ablation(
        "alpha", {"0.5", "bad", "2"},
        [](const std::string& v) {
            if (v == "bad") fail(ErrorKind::config, "alpha must be a number");
            AblationCell c;
            c.occluded = report(1, 1, 1);
            c.clean = report(2, 2, 2);
            return c;
        },
        &log);
    ASSERT_EQ(grid.cells.size(), 3u);
    EXPECT_TRUE(grid.cells[1].failed());
    EXPECT_FALSE(grid.cells[1].combined().has_value());
    EXPECT_FALSE(grid.cells[2].failed());
    const auto csv = report_csv(grid);
    EXPECT_NE(csv.find("alpha,bad,failed,,,,,\n"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
    EXPECT_NE(report_table(grid).find("failed: config error"), std::string::npos);
    EXPECT_NE(log.str().find("alpha=bad failed"), std::string::npos);
}

TEST(Ablation, FiveValueGridHasFiveTableRows) {
    const auto grid = run_ablation("alpha", {"0.5", "1", "2", "5", "10"}, [](const std::string& v) {
        AblationCell c;
        const double x = std::stod(v);
        c.occluded = report(x, x, x);
        c.clean = report(x / 2, x / 2, x / 2);
        return c;
    });
    const auto table = report_table(grid);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
    const auto dir = scratch("reports");
    write_reports(dir / "alpha", grid);
    EXPECT_EQ(slurp(dir / "alpha.csv"), report_csv(grid));
    EXPECT_EQ(slurp(dir / "alpha.txt"), table);
}

TEST(Ablation, ReportsAreDeterministic) {
    const auto runner = [](const std::string& v) {
        AblationCell c;
        c.occluded = report(std::stod(v), 1, 2);
        return c;
    };
    EXPECT_EQ(report_csv(run_ablation("beta", {"0", "0.9"}, runner)), report_csv(run_ablation("beta", {"0", "0.9"}, runner)));
}

TEST(Ablation, EmptyGridRejected) {
    EXPECT_THROW(run_ablation("alpha", {}, [](const std::string&) { return AblationCell{}; }), Error);
}
