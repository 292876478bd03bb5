#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "occludere/binio.hpp"
#include "occludere/dataset.hpp"
#include "occludere/net.hpp"

namespace occludere {

struct MaeResult {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
    double average = 0.0;

    double operator[](std::size_t a) const { return a == 0 ? yaw : a == 1 ? pitch : roll; }
};

/// Per-angle mean absolute error in degrees, without wrap-around.
inline MaeResult mae(std::span<const EulerPose> preds, std::span<const EulerPose> gts) {
    require(preds.size() == gts.size(), ErrorKind::contract,
            "mae: " + std::to_string(preds.size()) + " predictions for " + std::to_string(gts.size()) + " labels");
    require(!preds.empty(), ErrorKind::contract, "mae: no predictions");
    std::array<double, 3> sum{0, 0, 0};
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t a = 0; a < 3; ++a) sum[a] += std::abs(preds[i][a] - gts[i][a]);
    const double n = static_cast<double>(preds.size());
    MaeResult r{sum[0] / n, sum[1] / n, sum[2] / n, 0.0};
    r.average = (r.yaw + r.pitch + r.roll) / 3.0;
    return r;
}

inline double combined_average(double occluded_average, double clean_average) {
    require(std::isfinite(occluded_average) && std::isfinite(clean_average), ErrorKind::numeric,
            "combined_average: non-finite input");
    return (occluded_average + clean_average) / 2.0;
}

struct EvalReport {
    MaeResult mae;
    std::size_t count = 0;
    std::string manifest_id;
    std::string checkpoint_id;
};

/// Identifies a manifest by its record ids, poses and paths.
inline std::string manifest_id(const DatasetManifest& m) {
    Fnv1a h;
    for (const auto& r : m.records) {
        h.update(r.id);
        h.update(",");
        h.update(r.path);
        for (std::size_t a = 0; a < 3; ++a) h.update("," + format_number(r.pose[a]));
        h.update("\n");
    }
    return h.hex();
}

template <class T>
std::vector<EulerPose> predict_manifest(const PoseNet<T>& net, const NormalizationSpec& norm,
                                        const DatasetManifest& manifest, std::size_t batch_size = 64) {
    const FaceCache cache(manifest, net.config().input_size);
    std::vector<EulerPose> out;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < manifest.size(); start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(manifest.size(), start + batch_size); ++i) rows.push_back(i);
        const auto batch = make_batch<T>(manifest, cache, rows, norm, net.config().bins);
        const auto poses = predict(net, batch.images);
        out.insert(out.end(), poses.begin(), poses.end());
    }
    return out;
}

template <class T>
EvalReport evaluate(const PoseNet<T>& net, const NormalizationSpec& norm, const DatasetManifest& manifest,
                    const std::string& checkpoint_id = {}) {
    require(!manifest.empty(), ErrorKind::contract, "evaluation manifest is empty");
    const auto preds = predict_manifest(net, norm, manifest);
    std::vector<EulerPose> gts;
    for (const auto& r : manifest.records) gts.push_back(r.pose);
    return {mae(preds, gts), manifest.size(), manifest_id(manifest), checkpoint_id};
}

/// Summary as `key=value` lines.
inline std::string format_eval_report(const EvalReport& r) {
    return "checkpoint=" + r.checkpoint_id + "\nmanifest=" + r.manifest_id + "\nrecords=" + std::to_string(r.count) +
           "\nyaw=" + format_fixed(r.mae.yaw, 3) + "\npitch=" + format_fixed(r.mae.pitch, 3) +
           "\nroll=" + format_fixed(r.mae.roll, 3) + "\navg=" + format_fixed(r.mae.average, 3) + "\n";
}

/// Writes dir/report.txt and dir/predictions.csv (one row per record).
inline void write_eval_report(const std::filesystem::path& dir, const EvalReport& report,
                              const DatasetManifest& manifest, std::span<const EulerPose> preds) {
    require(preds.size() == manifest.size(), ErrorKind::contract, "one prediction per manifest record expected");
    std::filesystem::create_directories(dir);
    std::ofstream summary(dir / "report.txt", std::ios::trunc);
    require(summary.good(), ErrorKind::io, "cannot write " + (dir / "report.txt").string());
    summary << format_eval_report(report);
    std::ofstream rows(dir / "predictions.csv", std::ios::trunc);
    require(rows.good(), ErrorKind::io, "cannot write " + (dir / "predictions.csv").string());
    rows << "id,yaw,pitch,roll,pred_yaw,pred_pitch,pred_roll\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& r = manifest.records[i];
        rows << r.id;
        for (std::size_t a = 0; a < 3; ++a) rows << ',' << format_number(r.pose[a]);
        for (std::size_t a = 0; a < 3; ++a) rows << ',' << format_fixed(preds[i][a], 6);
        rows << "\n";
    }
}

// ---------------------------------------------------------------------------
// Severity sweep

struct SeverityCurve {
    std::vector<int> levels;
    std::vector<double> average;

    /// Average MAE at the last level minus the first.
    double gap() const {
        require(!average.empty(), ErrorKind::contract, "empty severity curve");
        return average.back() - average.front();
    }
};

struct SeveritySweep {
    SeverityCurve lsr;
    SeverityCurve baseline;
};

template <class T>
SeveritySweep severity_sweep(const PoseNet<T>& lsr, const NormalizationSpec& lsr_norm, const PoseNet<T>& baseline,
                             const NormalizationSpec& baseline_norm, std::span<const DatasetManifest> levels) {
    require(!levels.empty(), ErrorKind::contract, "severity sweep needs level manifests");
    SeveritySweep sweep;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const int level = static_cast<int>(i) + 1;
        sweep.lsr.levels.push_back(level);
        sweep.baseline.levels.push_back(level);
        sweep.lsr.average.push_back(evaluate(lsr, lsr_norm, levels[i]).mae.average);
        sweep.baseline.average.push_back(evaluate(baseline, baseline_norm, levels[i]).mae.average);
    }
    return sweep;
}

inline void write_severity_curves(const std::filesystem::path& path, const SeveritySweep& sweep) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write " + path.string());
    out << "model,level,avg\n";
    for (const auto* c : {&sweep.lsr, &sweep.baseline})
        for (std::size_t i = 0; i < c->levels.size(); ++i)
            out << (c == &sweep.lsr ? "lsr" : "baseline") << ',' << c->levels[i] << ',' << format_fixed(c->average[i], 3)
                << "\n";
}

// ---------------------------------------------------------------------------
// Ablation grids and report files

struct AblationCell {
    std::string value;
    std::optional<EvalReport> occluded;
    std::optional<EvalReport> clean;
    std::string error;  // non-empty when the cell failed

    bool failed() const { return !error.empty(); }
    std::optional<double> combined() const {
        if (failed() || !occluded || !clean) return std::nullopt;
        return combined_average(occluded->mae.average, clean->mae.average);
    }
};

struct AblationGrid {
    std::string parameter;
    std::vector<AblationCell> cells;
};

/// Evaluates each value through `runner`, which trains and evaluates one cell.
/// A throwing cell is recorded as failed and the grid continues.
inline AblationGrid run_ablation(const std::string& parameter, const std::vector<std::string>& values,
                                 const std::function<AblationCell(const std::string&)>& runner,
                                 std::ostream* log = nullptr) {
    require(!values.empty(), ErrorKind::contract, "ablation grid is empty");
    AblationGrid grid{parameter, {}};
    for (const auto& v : values) {
        AblationCell cell;
        try {
            cell = runner(v);
        } catch (const std::exception& e) {
            cell = AblationCell{};
            cell.error = e.what();
            if (log) *log << "cell " << parameter << "=" << v << " failed: " << e.what() << "\n";
        }
        cell.value = v;
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

namespace detail {

inline std::string mae_field(double v) { return format_fixed(v, 3); }

} // namespace detail

inline constexpr const char* kReportHeader = "parameter,value,split,yaw,pitch,roll,avg,combined";

/// Machine-readable report: one row per cell and split.
inline std::string report_csv(const AblationGrid& grid) {
    std::ostringstream out;
    out << kReportHeader << "\n";
    for (const auto& c : grid.cells) {
        const auto combined = c.combined();
        const std::string comb = combined ? detail::mae_field(*combined) : "";
        if (c.failed()) {
            out << grid.parameter << ',' << c.value << ",failed,,,,,\n";
            continue;
        }
        for (const auto& [split, rep] : {std::pair{"occluded", &c.occluded}, std::pair{"clean", &c.clean}}) {
            if (!*rep) continue;
            const auto& m = (*rep)->mae;
            out << grid.parameter << ',' << c.value << ',' << split << ',' << detail::mae_field(m.yaw) << ','
                << detail::mae_field(m.pitch) << ',' << detail::mae_field(m.roll) << ',' << detail::mae_field(m.average)
                << ',' << comb << "\n";
        }
    }
    return out.str();
}

/// Aligned text table: one row per value with occluded and clean averages side by side.
inline std::string report_table(const AblationGrid& grid) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({grid.parameter, "occ yaw", "occ pitch", "occ roll", "occ avg", "clean yaw", "clean pitch",
                    "clean roll", "clean avg", "combined"});
    for (const auto& c : grid.cells) {
        std::vector<std::string> row{c.value};
        if (c.failed()) {
            row.push_back("failed: " + c.error);
            rows.push_back(row);
            continue;
        }
        for (const auto* rep : {&c.occluded, &c.clean})
            for (std::size_t k = 0; k < 4; ++k)
                row.push_back(*rep ? detail::mae_field(k < 3 ? (**rep).mae[k] : (**rep).mae.average) : "-");
        const auto comb = c.combined();
        row.push_back(comb ? detail::mae_field(*comb) : "-");
        rows.push_back(row);
    }
    std::vector<std::size_t> width(rows.front().size(), 0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i)
            if (!(r.size() == 2 && i == 1)) width[i] = std::max(width[i], r[i].size());
    std::ostringstream out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out << "  ";
            out << r[i];
            if (i + 1 < r.size() && i < width.size()) out << std::string(width[i] - r[i].size(), ' ');
        }
        out << "\n";
    }
    return out.str();
}

inline void write_reports(const std::filesystem::path& stem, const AblationGrid& grid) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    for (const auto& [ext, body] : {std::pair{".csv", report_csv(grid)}, std::pair{".txt", report_table(grid)}}) {
        std::filesystem::path p = stem;
        p += ext;
        std::ofstream out(p, std::ios::trunc);
        require(out.good(), ErrorKind::io, "cannot write report " + p.string());
        out << body;
    }
}

} // namespace occludere
