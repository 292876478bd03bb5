#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "occludere/dbscan.hpp"
#include "occludere/image.hpp"

namespace occludere {

/// DBSCAN parameters for depth outlier removal. Points are (x px, y px,
/// depth / depth_scale_mm) so that depth differences dominate neighbourhoods.
struct ClusterParams {
    double eps = 3.0;
    std::size_t min_points = 8;
    double depth_scale_mm = 10.0;
};

struct OcclusionAsset {
    std::string id;
    RgbaImage patch;                    // alpha 255 under the mask, 0 elsewhere
    std::vector<std::uint8_t> mask;     // patch-sized, 1 = occluder pixel
    std::string source_frame;
    std::uint16_t threshold_mm = 0;
    Box bounds;                         // mask bounding box in source-frame pixels
    Box source_box;                     // face box the occluder was cut from

    bool empty() const { return patch.empty(); }
};

namespace detail {

inline void check_box(const Box& box, std::size_t w, std::size_t h, const char* what) {
    require(box.inside(w, h), ErrorKind::contract,
            std::string(what) + ": face box must lie inside the frame with positive extents");
}

} // namespace detail

/// Depth points of the box as DBSCAN features, row-major, skipping invalid zeros.
inline std::vector<Point3> box_depth_points(const DepthFrame& depth, const Box& box,
                                            const ClusterParams& params,
                                            std::vector<std::uint16_t>* raw = nullptr) {
    std::vector<Point3> points;
    for (long y = box.top; y < box.bottom(); ++y)
        for (long x = box.left; x < box.right(); ++x) {
            const auto d = depth.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
            if (d == 0) continue;
            points.push_back({static_cast<double>(x), static_cast<double>(y),
                              static_cast<double>(d) / params.depth_scale_mm});
            if (raw) raw->push_back(d);
        }
    return points;
}

/// Closest face distance in an occlusion-free frame: the minimum depth over
/// box pixels that DBSCAN keeps (noise points are discarded).
inline std::uint16_t compute_threshold(const DepthFrame& depth, const Box& box,
                                       const ClusterParams& params = {}) {
    detail::check_box(box, depth.width, depth.height, "compute_threshold");
    std::vector<std::uint16_t> raw;
    const auto points = box_depth_points(depth, box, params, &raw);
    require(!points.empty(), ErrorKind::empty_face, "face box contains no valid depth pixels");
    const auto labels = dbscan(points, params.eps, params.min_points);
    std::uint16_t best = std::numeric_limits<std::uint16_t>::max();
    bool any = false;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != kNoise) {
            best = std::min(best, raw[i]);
            any = true;
        }
    require(any, ErrorKind::degenerate_cluster, "every face-box depth pixel was labelled noise");
    return best;
}

/// Cuts the occluder out of a frame: box pixels with 0 < depth < threshold - margin.
/// Returns an empty asset when nothing is closer than the cut-off.
inline OcclusionAsset extract_occlusion(const RgbImage& rgb, const DepthFrame& depth, const Box& box,
                                        std::uint16_t threshold_mm, std::uint16_t margin_mm = 20) {
    require(rgb.width == depth.width && rgb.height == depth.height, ErrorKind::shape,
            "extract_occlusion: RGB and depth frames differ in size");
    detail::check_box(box, depth.width, depth.height, "extract_occlusion");
    const long cutoff = static_cast<long>(threshold_mm) - static_cast<long>(margin_mm);
    OcclusionAsset asset;
    asset.threshold_mm = threshold_mm;
    asset.source_box = box;

    long x0 = box.right(), y0 = box.bottom(), x1 = box.left - 1, y1 = box.top - 1;
    const auto occluder = [&](long x, long y) {
        const long d = depth.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        return d > 0 && d < cutoff;
    };
    for (long y = box.top; y < box.bottom(); ++y)
        for (long x = box.left; x < box.right(); ++x)
            if (occluder(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < x0) return asset;

    asset.bounds = Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
    const auto w = static_cast<std::size_t>(asset.bounds.width);
    const auto h = static_cast<std::size_t>(asset.bounds.height);
    asset.patch = RgbaImage(w, h, 0);
    asset.mask.assign(w * h, 0);
    for (std::size_t py = 0; py < h; ++py)
        for (std::size_t px = 0; px < w; ++px) {
            const long x = x0 + static_cast<long>(px), y = y0 + static_cast<long>(py);
            if (!occluder(x, y)) continue;
            asset.mask[py * w + px] = 1;
            for (std::size_t c = 0; c < 3; ++c)
                asset.patch.at(px, py, c) = rgb.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c);
            asset.patch.at(px, py, 3) = 255;
        }
    return asset;
}

/// Clears occluder pixels that DBSCAN labels noise (isolated depth speckle),
/// then re-crops. Needs the source depth frame.
inline OcclusionAsset despeckle(const OcclusionAsset& asset, const DepthFrame& depth,
                                const ClusterParams& params = {}) {
    if (asset.empty()) return asset;
    std::vector<Point3> points;
    std::vector<std::size_t> where;
    const auto w = static_cast<std::size_t>(asset.bounds.width);
    for (std::size_t i = 0; i < asset.mask.size(); ++i) {
        if (!asset.mask[i]) continue;
        const long x = asset.bounds.left + static_cast<long>(i % w);
        const long y = asset.bounds.top + static_cast<long>(i / w);
        const auto d = depth.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        points.push_back({static_cast<double>(x), static_cast<double>(y),
                          static_cast<double>(d) / params.depth_scale_mm});
        where.push_back(i);
    }
    const auto labels = dbscan(points, params.eps, params.min_points);
    std::vector<std::uint8_t> keep(asset.mask.size(), 0);
    for (std::size_t k = 0; k < labels.size(); ++k)
        if (labels[k] != kNoise) keep[where[k]] = 1;

    long x0 = asset.bounds.width, y0 = asset.bounds.height, x1 = -1, y1 = -1;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) {
            const long x = static_cast<long>(i % w), y = static_cast<long>(i / w);
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    OcclusionAsset out;
    out.id = asset.id;
    out.source_frame = asset.source_frame;
    out.threshold_mm = asset.threshold_mm;
    out.source_box = asset.source_box;
    if (x1 < 0) return out;
    const auto nw = static_cast<std::size_t>(x1 - x0 + 1), nh = static_cast<std::size_t>(y1 - y0 + 1);
    out.bounds = Box{asset.bounds.left + x0, asset.bounds.top + y0, x1 - x0 + 1, y1 - y0 + 1};
    out.patch = RgbaImage(nw, nh, 0);
    out.mask.assign(nw * nh, 0);
    for (std::size_t py = 0; py < nh; ++py)
        for (std::size_t px = 0; px < nw; ++px) {
            const std::size_t src = (py + static_cast<std::size_t>(y0)) * w + px + static_cast<std::size_t>(x0);
            if (!keep[src]) continue;
            out.mask[py * nw + px] = 1;
            for (std::size_t c = 0; c < 4; ++c)
                out.patch.at(px, py, c) =
                    asset.patch.at(px + static_cast<std::size_t>(x0), py + static_cast<std::size_t>(y0), c);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Compositing

/// Nearest-neighbour rescale; output extents are max(1, round(extent * scale)).
inline RgbaImage rescale_nearest(const RgbaImage& src, double scale) {
    require(scale > 0.0 && std::isfinite(scale), ErrorKind::contract, "rescale: scale must be positive");
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(src.width * scale)));
    const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(src.height * scale)));
    RgbaImage out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * h));
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * w));
            for (std::size_t c = 0; c < 4; ++c) out.at(x, y, c) = src.at(sx, sy, c);
        }
    }
    return out;
}

struct CompositeResult {
    RgbImage image;
    std::vector<std::uint8_t> coverage;  // image-sized, 1 where the patch alpha is non-zero
    Box placed;                          // scaled patch rectangle in image coordinates
    bool intersects = false;
};

/// Alpha-over of the rescaled patch centred at (anchor_x, anchor_y):
/// out = round(a * patch + (1 - a) * face) with a = opacity * alpha / 255.
/// Pixels outside the placed rectangle are untouched.
inline CompositeResult composite(const RgbImage& face, const OcclusionAsset& asset, double scale,
                                 long anchor_x, long anchor_y, double opacity = 1.0) {
    require(opacity >= 0.0 && opacity <= 1.0, ErrorKind::contract, "composite: opacity outside [0,1]");
    CompositeResult result;
    result.image = face;
    result.coverage.assign(face.width * face.height, 0);
    if (asset.empty()) return result;
    const RgbaImage patch = rescale_nearest(asset.patch, scale);
    result.placed = Box{anchor_x - static_cast<long>(patch.width / 2), anchor_y - static_cast<long>(patch.height / 2),
                        static_cast<long>(patch.width), static_cast<long>(patch.height)};
    const long x0 = std::max(0L, result.placed.left), y0 = std::max(0L, result.placed.top);
    const long x1 = std::min(static_cast<long>(face.width), result.placed.right());
    const long y1 = std::min(static_cast<long>(face.height), result.placed.bottom());
    result.intersects = x0 < x1 && y0 < y1;
    for (long y = y0; y < y1; ++y)
        for (long x = x0; x < x1; ++x) {
            const auto px = static_cast<std::size_t>(x - result.placed.left);
            const auto py = static_cast<std::size_t>(y - result.placed.top);
            const auto alpha = patch.at(px, py, 3);
            if (alpha == 0) continue;
            const double a = opacity * alpha / 255.0;
            const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = a * patch.at(px, py, c) + (1.0 - a) * face.at(ux, uy, c);
                result.image.at(ux, uy, c) = static_cast<std::uint8_t>(std::floor(v + 0.5));
            }
            if (a > 0.0) result.coverage[uy * face.width + ux] = 1;
        }
    return result;
}

/// 100 * |covered pixels inside region| / |region|.
inline double occlusion_percentage(std::span<const std::uint8_t> coverage, std::size_t width,
                                   std::size_t height, const Box& region) {
    require(coverage.size() == width * height, ErrorKind::shape, "occlusion_percentage: mask size");
    require(region.area() > 0 && region.inside(width, height), ErrorKind::contract,
            "occlusion_percentage: empty or out-of-frame region");
    std::size_t hit = 0;
    for (long y = region.top; y < region.bottom(); ++y)
        for (long x = region.left; x < region.right(); ++x)
            hit += coverage[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] != 0;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(region.area());
}

// ---------------------------------------------------------------------------
// Severity levels

struct SeverityLevel {
    int level = 1;
    double scale = 1.0;
};

inline std::array<double, 6> default_severity_scales() { return {0.5, 0.75, 1.0, 1.3, 1.7, 2.2}; }

inline SeverityLevel severity_level(int level, const std::array<double, 6>& scales = default_severity_scales()) {
    require(level >= 1 && level <= 6, ErrorKind::contract, "severity level must be in 1..6");
    for (std::size_t i = 1; i < scales.size(); ++i)
        require(scales[i] > scales[i - 1], ErrorKind::config, "severity scales must strictly increase");
    return {level, scales[static_cast<std::size_t>(level - 1)]};
}

// ---------------------------------------------------------------------------
// Asset archive: <id>.pam plus <id>.txt key-value metadata, listed in index.txt.

inline void write_asset(const std::filesystem::path& dir, const OcclusionAsset& asset) {
    require(!asset.empty(), ErrorKind::contract, "write_asset: empty asset " + asset.id);
    write_pam(dir / (asset.id + ".pam"), asset.patch);
    std::ofstream meta(dir / (asset.id + ".txt"), std::ios::trunc);
    require(meta.good(), ErrorKind::io, "cannot write metadata for asset " + asset.id);
    meta << "id=" << asset.id << "\n"
         << "source_frame=" << asset.source_frame << "\n"
         << "threshold_mm=" << asset.threshold_mm << "\n"
         << "bounds=" << asset.bounds.left << "," << asset.bounds.top << "," << asset.bounds.width << ","
         << asset.bounds.height << "\n"
         << "source_box=" << asset.source_box.left << "," << asset.source_box.top << ","
         << asset.source_box.width << "," << asset.source_box.height << "\n";
}

namespace detail {

inline Box parse_box(const std::string& text, const std::string& where) {
    Box b;
    char c1, c2, c3;
    std::istringstream in(text);
    if (!(in >> b.left >> c1 >> b.top >> c2 >> b.width >> c3 >> b.height) || c1 != ',' || c2 != ',' ||
        c3 != ',')
        fail(ErrorKind::format, where + ": bad box '" + text + "'");
    return b;
}

} // namespace detail

inline OcclusionAsset read_asset(const std::filesystem::path& dir, const std::string& id) {
    OcclusionAsset asset;
    asset.patch = read_pam(dir / (id + ".pam"));
    const auto meta_path = dir / (id + ".txt");
    std::ifstream meta(meta_path);
    require(meta.good(), ErrorKind::io, "cannot open " + meta_path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::format, meta_path.string() + ": bad line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"id", "source_frame", "threshold_mm", "bounds", "source_box"})
        require(kv.count(key), ErrorKind::format, meta_path.string() + ": missing key " + key);
    asset.id = kv["id"];
    asset.source_frame = kv["source_frame"];
    asset.threshold_mm = static_cast<std::uint16_t>(std::stoul(kv["threshold_mm"]));
    asset.bounds = detail::parse_box(kv["bounds"], meta_path.string());
    asset.source_box = detail::parse_box(kv["source_box"], meta_path.string());
    require(asset.bounds.width == static_cast<long>(asset.patch.width) &&
                asset.bounds.height == static_cast<long>(asset.patch.height),
            ErrorKind::format, meta_path.string() + ": bounds disagree with patch size");
    asset.mask.resize(asset.patch.width * asset.patch.height);
    for (std::size_t i = 0; i < asset.mask.size(); ++i) asset.mask[i] = asset.patch.pixels[4 * i + 3] > 0;
    return asset;
}

inline void write_asset_archive(const std::filesystem::path& dir, const std::vector<OcclusionAsset>& assets) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.txt", std::ios::trunc);
    require(index.good(), ErrorKind::io, "cannot write " + (dir / "index.txt").string());
    for (const auto& a : assets) {
        write_asset(dir, a);
        index << a.id << "\n";
    }
}

inline std::vector<OcclusionAsset> read_asset_archive(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.txt");
    require(index.good(), ErrorKind::io, "cannot open " + (dir / "index.txt").string());
    std::vector<OcclusionAsset> assets;
    std::string id;
    while (std::getline(index, id))
        if (!id.empty()) assets.push_back(read_asset(dir, id));
    return assets;
}

// ---------------------------------------------------------------------------
// Recorded RGB-D sequences: frames.txt lists "<frame id> <rgb.ppm> <depth.pgm>"
// per line, the first frame being occlusion-free. Boxes are a CSV with header
// frame_id,left,top,width,height; frame id "*" applies to every frame.

struct FrameEntry {
    std::string id;
    std::filesystem::path rgb;
    std::filesystem::path depth;
};

inline std::vector<FrameEntry> read_frame_list(const std::filesystem::path& dir) {
    const auto path = dir / "frames.txt";
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open " + path.string());
    std::vector<FrameEntry> frames;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        FrameEntry e;
        std::string rgb, depth;
        if (!(fields >> e.id >> rgb >> depth))
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": expected id rgb depth");
        e.rgb = dir / rgb;
        e.depth = dir / depth;
        frames.push_back(std::move(e));
    }
    return frames;
}

/// Frame paths are written as given and should be relative to dir.
inline void write_frame_list(const std::filesystem::path& dir, const std::vector<FrameEntry>& frames) {
    std::ofstream out(dir / "frames.txt", std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write " + (dir / "frames.txt").string());
    out << "# frame_id rgb depth\n";
    for (const auto& f : frames)
        out << f.id << ' ' << f.rgb.generic_string() << ' ' << f.depth.generic_string() << "\n";
}

inline std::map<std::string, Box> read_boxes(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open " + path.string());
    std::map<std::string, Box> boxes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            require(line == "frame_id,left,top,width,height", ErrorKind::parse,
                    path.string() + ":1: unexpected header '" + line + "'");
            continue;
        }
        const auto comma = line.find(',');
        require(comma != std::string::npos, ErrorKind::parse,
                path.string() + ":" + std::to_string(line_no) + ": malformed row");
        boxes[line.substr(0, comma)] =
            detail::parse_box(line.substr(comma + 1), path.string() + ":" + std::to_string(line_no));
    }
    return boxes;
}

struct ExtractOptions {
    ClusterParams cluster{};
    std::uint16_t margin_mm = 20;
    bool despeckle = false;
};

struct SequenceExtraction {
    std::uint16_t threshold_mm = 0;
    std::vector<OcclusionAsset> assets;  // non-empty assets only, in frame order
    std::size_t empty_frames = 0;
};

inline SequenceExtraction extract_sequence(const std::filesystem::path& dir, const std::map<std::string, Box>& boxes,
                                           const ExtractOptions& options = {}) {
    const auto frames = read_frame_list(dir);
    require(!frames.empty(), ErrorKind::contract, dir.string() + ": no frames listed");
    const auto box_for = [&](const std::string& id) {
        auto it = boxes.find(id);
        if (it == boxes.end()) it = boxes.find("*");
        if (it == boxes.end()) it = boxes.find(frames.front().id);
        require(it != boxes.end(), ErrorKind::contract, "no face box for frame " + id);
        return it->second;
    };
    SequenceExtraction out;
    out.threshold_mm = compute_threshold(read_pgm16(frames.front().depth), box_for(frames.front().id), options.cluster);
    for (std::size_t f = 1; f < frames.size(); ++f) {
        const auto depth = read_pgm16(frames[f].depth);
        auto asset = extract_occlusion(read_ppm(frames[f].rgb), depth, box_for(frames[f].id), out.threshold_mm,
                                       options.margin_mm);
        asset.id = "occ_" + frames[f].id;
        asset.source_frame = frames[f].id;
        if (options.despeckle) asset = despeckle(asset, depth, options.cluster);
        if (asset.empty()) {
            ++out.empty_frames;
            continue;
        }
        out.assets.push_back(std::move(asset));
    }
    return out;
}

} // namespace occludere
