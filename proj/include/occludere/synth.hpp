#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "occludere/manifest.hpp"
#include "occludere/occlusion.hpp"

namespace occludere {

struct SeverityOptions {
    std::array<double, 6> scales = default_severity_scales();
    double opacity = 1.0;
    std::string split = "occluded";
};

struct SeverityResult {
    DatasetManifest manifest;
    std::size_t missed = 0;  // records whose placed patch fell outside the image
};

/// Occludes every record of `manifest` with one seeded asset draw. Each record
/// picks a level from `levels`, an asset, and an anchor inside its face box.
/// The patch scale is the level factor times the ratio of target to source
/// face-box widths, so a level means the same relative size on any dataset.
/// Images go to out_dir/images, the manifest to out_dir/manifest.csv.
inline SeverityResult apply_occlusions(const DatasetManifest& manifest, const std::vector<OcclusionAsset>& assets,
                                       std::span<const int> levels, std::uint64_t seed,
                                       const std::filesystem::path& out_dir, const SeverityOptions& options = {}) {
    require(!assets.empty(), ErrorKind::contract, "apply_severity needs at least one occlusion asset");
    require(!levels.empty(), ErrorKind::contract, "apply_severity needs at least one level");
    for (const auto& a : assets)
        require(!a.empty() && a.source_box.width > 0, ErrorKind::contract, "asset " + a.id + " is empty");
    std::vector<SeverityLevel> resolved;
    for (int level : levels) resolved.push_back(severity_level(level, options.scales));

    std::mt19937_64 rng(seed);
    SeverityResult result;
    result.manifest.base_dir = out_dir;
    for (const auto& r : manifest.records) {
        const SeverityLevel level = resolved[rng() % resolved.size()];
        const OcclusionAsset& asset = assets[rng() % assets.size()];
        const long ax = r.box.left + static_cast<long>(rng() % static_cast<std::uint64_t>(r.box.width));
        const long ay = r.box.top + static_cast<long>(rng() % static_cast<std::uint64_t>(r.box.height));
        const double scale = level.scale * static_cast<double>(r.box.width) / static_cast<double>(asset.source_box.width);

        RgbImage face;
        try {
            face = read_ppm(manifest.resolve(r));
        } catch (const Error& e) {
            fail(ErrorKind::io, "image " + r.id + ": " + e.what());
        }
        const auto placed = composite(face, asset, scale, ax, ay, options.opacity);
        if (!placed.intersects) ++result.missed;

        ManifestRecord out = r;
        out.id = r.source_id + "@L" + std::to_string(level.level);
        out.path = "images/" + out.id + ".ppm";
        out.split = options.split;
        out.occlusion = OcclusionInfo{asset.id, scale, ax, ay,
                                      occlusion_percentage(placed.coverage, face.width, face.height, r.box)};
        write_ppm(out_dir / out.path, placed.image);
        result.manifest.records.push_back(std::move(out));
    }
    save_manifest(out_dir / "manifest.csv", result.manifest);
    return result;
}

/// Single-level form.
inline SeverityResult apply_severity(const DatasetManifest& manifest, const std::vector<OcclusionAsset>& assets,
                                     int level, std::uint64_t seed, const std::filesystem::path& out_dir,
                                     const SeverityOptions& options = {}) {
    const int levels[1] = {level};
    return apply_occlusions(manifest, assets, levels, seed, out_dir, options);
}

inline double mean_occlusion_percentage(const DatasetManifest& manifest) {
    require(!manifest.empty(), ErrorKind::contract, "mean occlusion of an empty manifest");
    double total = 0.0;
    for (const auto& r : manifest.records) total += r.occlusion ? r.occlusion->percent : 0.0;
    return total / static_cast<double>(manifest.size());
}

} // namespace occludere
