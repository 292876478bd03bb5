#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "occludere/bins.hpp"
#include "occludere/image.hpp"
#include "occludere/manifest.hpp"
#include "occludere/occlusion.hpp"

namespace occludere {

// Parametric toy heads built from ellipsoids, ray-cast orthographically.
//
// Head frame: x to the right on screen at pose zero, y up, z towards the
// camera. A pose maps head points to camera
// points with R = Rz(roll) * Rx(pitch) * Ry(yaw); the camera looks down -z.

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

inline constexpr const char* kEulerConvention = "Rz(roll)*Rx(pitch)*Ry(yaw)";

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Vec3 rotate(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline Vec3 rotate_inverse(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2], m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
}

inline Mat3 pose_rotation(const EulerPose& pose) {
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double cy = std::cos(pose.yaw * rad), sy = std::sin(pose.yaw * rad);
    const double cp = std::cos(pose.pitch * rad), sp = std::sin(pose.pitch * rad);
    const double cr = std::cos(pose.roll * rad), sr = std::sin(pose.roll * rad);
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rx{{{1, 0, 0}, {0, cp, -sp}, {0, sp, cp}}};
    const Mat3 rz{{{cr, -sr, 0}, {sr, cr, 0}, {0, 0, 1}}};
    return matmul(rz, matmul(rx, ry));
}

struct Ellipsoid {
    Vec3 center{};
    Vec3 radii{1, 1, 1};
    Vec3 color{200, 160, 130};
};

struct HeadModel {
    Ellipsoid head;
    std::vector<Ellipsoid> features;  // eyes, nose ridge, mouth bar, ears, optional marker
    Vec3 hair_color{60, 40, 30};
    double hair_line = 0.38;          // head-frame y above which the skull is hair
    double hair_back = 0.35;          // head-frame z behind which the skull is hair

    /// Builds a head from proportions; features sit on the head surface.
    static HeadModel make(double width, double height, double depth, double eye_spacing, Vec3 skin,
                          Vec3 hair, bool symmetric) {
        HeadModel m;
        m.head = {{0, 0, 0}, {width, height, depth}, skin};
        m.hair_color = hair;
        const auto surface = [&](double x, double y, double lift) {
            const double t = 1.0 - (x * x) / (width * width) - (y * y) / (height * height);
            return Vec3{x, y, depth * std::sqrt(std::max(t, 0.0)) + lift};
        };
        const Vec3 dark{35, 30, 30}, lips{170, 50, 60};
        const Vec3 nose_color{skin[0] * 0.92, skin[1] * 0.85, skin[2] * 0.82};
        for (double side : {-1.0, 1.0})
            m.features.push_back({surface(side * eye_spacing, 0.16, -0.05), {0.11, 0.07, 0.09}, dark});
        m.features.push_back({surface(0.0, -0.04, -0.06), {0.08, 0.2, 0.17}, nose_color});
        m.features.push_back({surface(0.0, -0.42, -0.05), {0.24, 0.045, 0.08}, lips});
        for (double side : {-1.0, 1.0})
            m.features.push_back({{side * width * 0.97, 0.02, -0.02}, {0.08, 0.17, 0.1}, nose_color});
        if (!symmetric) m.features.push_back({surface(-0.36, -0.22, -0.04), {0.1, 0.1, 0.08}, {40, 110, 210}});
        m.normalize();
        return m;
    }

    static HeadModel standard(bool symmetric = false) {
        return make(0.62, 0.76, 0.66, 0.25, {205, 160, 130}, {60, 40, 30}, symmetric);
    }

    /// A jittered identity; `amount` scales the proportion and colour spread.
    template <class Rng>
    static HeadModel random_identity(Rng& rng, bool symmetric = false, double amount = 1.0) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const double w = 0.62 * (1.0 + 0.06 * amount * u(rng));
        const double h = 0.76 * (1.0 + 0.05 * amount * u(rng));
        const double d = 0.66 * (1.0 + 0.05 * amount * u(rng));
        const double eyes = 0.25 * (1.0 + 0.1 * amount * u(rng));
        const double tone = 1.0 + 0.12 * amount * u(rng);
        const Vec3 skin{std::clamp(205 * tone, 0.0, 255.0), std::clamp(160 * tone, 0.0, 255.0),
                        std::clamp(130 * tone, 0.0, 255.0)};
        const double hair_tone = 1.0 + 0.5 * amount * u(rng);
        const Vec3 hair{60 * hair_tone, 40 * hair_tone, 30 * hair_tone};
        return make(w, h, d, eyes, skin, hair, symmetric);
    }

    /// Bounding radius over all primitives.
    double extent() const {
        double r = 0;
        const auto reach = [&](const Ellipsoid& e) {
            const double c = std::sqrt(e.center[0] * e.center[0] + e.center[1] * e.center[1] + e.center[2] * e.center[2]);
            r = std::max(r, c + std::max({e.radii[0], e.radii[1], e.radii[2]}));
        };
        reach(head);
        for (const auto& f : features) reach(f);
        return r;
    }

private:
    void normalize() {
        const double r = extent();
        if (r <= 1.0) return;
        const auto shrink = [&](Ellipsoid& e) {
            for (int k = 0; k < 3; ++k) {
                e.center[k] /= r;
                e.radii[k] /= r;
            }
        };
        shrink(head);
        for (auto& f : features) shrink(f);
        hair_line /= r;
        hair_back /= r;
    }
};

struct RenderSpec {
    std::size_t size = 64;
    Vec3 background{45, 65, 95};
    int noise = 0;                     // uniform per-channel background jitter amplitude
    std::size_t supersample = 2;       // samples per pixel along each axis
    double view_extent = 1.05;         // half-width of the visible head-frame square
    std::string convention = kEulerConvention;
    std::uint64_t seed = 0;

    void validate() const {
        require(size >= 16, ErrorKind::config, "render size must be at least 16");
        require(supersample >= 1, ErrorKind::config, "supersample must be positive");
        require(noise >= 0 && noise <= 255, ErrorKind::config, "noise must lie in [0,255]");
        require(convention == kEulerConvention, ErrorKind::config, "unsupported Euler convention " + convention);
    }
};

struct RenderHit {
    Vec3 color{};
    double z = -std::numeric_limits<double>::infinity();  // camera-frame depth, larger is closer
    bool hit = false;
};

/// Casts one orthographic ray through camera-plane point (x, y).
inline RenderHit cast_ray(const HeadModel& model, const Mat3& rot, double x, double y) {
    const Vec3 origin = rotate_inverse(rot, {x, y, 4.0});
    const Vec3 dir = rotate_inverse(rot, {0.0, 0.0, -1.0});
    RenderHit best;
    double best_t = std::numeric_limits<double>::infinity();
    const Ellipsoid* best_e = nullptr;
    const auto test = [&](const Ellipsoid& e) {
        Vec3 o, d;
        for (int k = 0; k < 3; ++k) {
            o[k] = (origin[k] - e.center[k]) / e.radii[k];
            d[k] = dir[k] / e.radii[k];
        }
        const double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        const double b = o[0] * d[0] + o[1] * d[1] + o[2] * d[2];
        const double c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
        const double disc = b * b - a * c;
        if (disc < 0.0) return;
        const double t = (-b - std::sqrt(disc)) / a;
        if (t > 0.0 && t < best_t) {
            best_t = t;
            best_e = &e;
        }
    };
    test(model.head);
    for (const auto& f : model.features) test(f);
    if (!best_e) return best;

    const Vec3 p{origin[0] + best_t * dir[0], origin[1] + best_t * dir[1], origin[2] + best_t * dir[2]};
    Vec3 n;
    for (int k = 0; k < 3; ++k) n[k] = (p[k] - best_e->center[k]) / (best_e->radii[k] * best_e->radii[k]);
    Vec3 nc = rotate(rot, n);
    const double len = std::sqrt(nc[0] * nc[0] + nc[1] * nc[1] + nc[2] * nc[2]);
    for (auto& v : nc) v /= len;
    constexpr double lx = 0.0, ly = 0.4, lz = 1.0;
    const double ll = std::sqrt(lx * lx + ly * ly + lz * lz);
    const double lambert = std::max(0.0, (nc[0] * lx + nc[1] * ly + nc[2] * lz) / ll);
    const double shade = 0.3 + 0.7 * lambert;

    Vec3 base = best_e->color;
    if (best_e == &model.head && (p[1] > model.hair_line || p[2] < model.hair_back))
        base = model.hair_color;
    best.hit = true;
    best.z = 4.0 - best_t;
    for (int k = 0; k < 3; ++k) best.color[k] = base[k] * shade;
    return best;
}

struct RenderOutput {
    RgbImage image;
    std::vector<double> depth;  // per pixel camera z at the pixel centre; NaN when background
};

/// Renders a pose. Pixel-centre coordinates are built from integers so the
/// sampling grid is exactly mirror-symmetric about the vertical axis.
inline RenderOutput render_with_depth(const EulerPose& pose, const HeadModel& model, const RenderSpec& spec) {
    spec.validate();
    const Mat3 rot = pose_rotation(pose);
    const std::size_t s = spec.size, ss = spec.supersample;
    const auto is = static_cast<long>(s), iss = static_cast<long>(ss);
    const double denom = static_cast<double>(s * ss);
    RenderOutput out{RgbImage(s, s), std::vector<double>(s * s, std::numeric_limits<double>::quiet_NaN())};
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> jitter(-spec.noise, spec.noise);
    for (std::size_t v = 0; v < s; ++v) {
        for (std::size_t u = 0; u < s; ++u) {
            Vec3 acc{0, 0, 0};
            std::size_t covered = 0;
            for (std::size_t sv = 0; sv < ss; ++sv)
                for (std::size_t su = 0; su < ss; ++su) {
                    const long nx = (2 * static_cast<long>(u) + 1 - is) * iss + (2 * static_cast<long>(su) + 1 - iss);
                    const long ny = (2 * static_cast<long>(v) + 1 - is) * iss + (2 * static_cast<long>(sv) + 1 - iss);
                    const double x = static_cast<double>(nx) * spec.view_extent / denom;
                    const double y = -static_cast<double>(ny) * spec.view_extent / denom;
                    const auto hit = cast_ray(model, rot, x, y);
                    if (hit.hit) {
                        ++covered;
                        for (int k = 0; k < 3; ++k) acc[k] += hit.color[k];
                    }
                }
            const std::size_t background = ss * ss - covered;
            std::array<int, 3> noise{0, 0, 0};
            if (spec.noise > 0)
                for (auto& n : noise) n = jitter(rng);
            for (std::size_t c = 0; c < 3; ++c) {
                const double bg = std::clamp(spec.background[c] + noise[c], 0.0, 255.0);
                const double value = (acc[c] + bg * static_cast<double>(background)) / static_cast<double>(ss * ss);
                out.image.at(u, v, c) = static_cast<std::uint8_t>(std::clamp(std::floor(value + 0.5), 0.0, 255.0));
            }
            const long cx = 2 * static_cast<long>(u) + 1 - is, cy = 2 * static_cast<long>(v) + 1 - is;
            const auto centre = cast_ray(model, rot, static_cast<double>(cx) * spec.view_extent / static_cast<double>(s),
                                         -static_cast<double>(cy) * spec.view_extent / static_cast<double>(s));
            if (centre.hit) out.depth[v * s + u] = centre.z;
        }
    }
    return out;
}

inline RgbImage render(const EulerPose& pose, const HeadModel& model, const RenderSpec& spec) {
    return render_with_depth(pose, model, spec).image;
}

// ---------------------------------------------------------------------------
// Labelled datasets

struct PoseRanges {
    std::array<double, 2> yaw{-75.0, 75.0};
    std::array<double, 2> pitch{-40.0, 40.0};
    std::array<double, 2> roll{-40.0, 40.0};

    const std::array<double, 2>& operator[](std::size_t a) const { return a == 0 ? yaw : a == 1 ? pitch : roll; }
    std::array<double, 2>& operator[](std::size_t a) { return a == 0 ? yaw : a == 1 ? pitch : roll; }

    void validate(const BinSpec& spec) const {
        for (std::size_t a = 0; a < 3; ++a) {
            const auto& r = (*this)[a];
            require(r[0] < r[1] && r[0] >= spec.min_angle && r[1] <= spec.max_angle, ErrorKind::config,
                    std::string(kAxisNames[a]) + " range must be a non-empty sub-interval of the bin range");
        }
    }
};

struct ToyDatasetOptions {
    std::string id_prefix = "toy";
    std::string split = "train";
    bool symmetric = false;
    double identity_jitter = 1.0;
};

/// Renders n labelled heads into out_dir/images and writes out_dir/manifest.csv.
inline DatasetManifest generate_dataset(std::size_t n, const PoseRanges& ranges, const RenderSpec& spec,
                                        std::uint64_t seed, const std::filesystem::path& out_dir,
                                        const ToyDatasetOptions& options = {}, const BinSpec& bins = {}) {
    ranges.validate(bins);
    spec.validate();
    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        EulerPose pose;
        for (std::size_t a = 0; a < 3; ++a) {
            std::uniform_real_distribution<double> dist(ranges[a][0], ranges[a][1]);
            pose[a] = dist(rng);
        }
        const auto model = HeadModel::random_identity(rng, options.symmetric, options.identity_jitter);
        RenderSpec record_spec = spec;
        record_spec.seed = rng();
        char id[32];
        std::snprintf(id, sizeof id, "%05zu", i);
        ManifestRecord r;
        r.id = options.id_prefix + id;
        r.path = "images/" + r.id + ".ppm";
        r.pose = pose;
        r.box = Box{0, 0, static_cast<long>(spec.size), static_cast<long>(spec.size)};
        r.source_id = r.id;
        r.split = options.split;
        write_ppm(out_dir / r.path, render(pose, model, record_spec));
        manifest.records.push_back(std::move(r));
    }
    save_manifest(out_dir / "manifest.csv", manifest);
    return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic RGB-D recordings: a toy head in front of a wall, an occlusion-free
// first frame, then frames with a spoon-like occluder held closer to the sensor.

struct RgbdSpec {
    std::size_t width = 160;
    std::size_t height = 120;
    std::size_t frames = 12;
    Box face{40, 20, 80, 80};
    double face_depth_mm = 800.0;     // depth of the head centre
    double head_scale_mm = 90.0;      // millimetres per head-frame unit
    double wall_mm = 1500.0;
    double occluder_min_mm = 480.0;
    double occluder_max_mm = 600.0;
    double depth_jitter_mm = 2.0;
    double invalid_fraction = 0.03;
    double flying_fraction = 0.003;
};

struct RgbdSequence {
    std::vector<FrameEntry> frames;
    Box face;
};

/// Writes frames.txt, rgb/*.ppm, depth/*.pgm and boxes.csv under dir.
inline RgbdSequence generate_rgbd_sequence(const std::filesystem::path& dir, const RgbdSpec& spec,
                                           std::uint64_t seed) {
    require(spec.frames >= 1, ErrorKind::config, "an RGB-D sequence needs at least one frame");
    require(spec.face.inside(spec.width, spec.height) && spec.face.width == spec.face.height, ErrorKind::config,
            "face box must be square and inside the frame");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, spec.depth_jitter_mm);

    const auto model = HeadModel::random_identity(rng);
    RenderSpec rs;
    rs.size = static_cast<std::size_t>(spec.face.width);
    rs.view_extent = 1.0;
    const double mm_per_px = 2.0 * spec.head_scale_mm / static_cast<double>(spec.face.width);
    const auto head = render_with_depth({0.0, 0.0, 0.0}, model, rs);

    static const std::array<Vec3, 5> palette{{{190, 190, 200}, {200, 40, 40}, {40, 80, 200}, {40, 170, 70}, {230, 200, 40}}};
    RgbdSequence seq;
    seq.face = spec.face;
    for (std::size_t f = 0; f < spec.frames; ++f) {
        RgbImage rgb(spec.width, spec.height);
        std::vector<double> depth(spec.width * spec.height, spec.wall_mm);
        for (std::size_t y = 0; y < spec.height; ++y)
            for (std::size_t x = 0; x < spec.width; ++x) {
                const double shade = 0.85 + 0.15 * static_cast<double>(y) / static_cast<double>(spec.height);
                rgb.at(x, y, 0) = static_cast<std::uint8_t>(150 * shade);
                rgb.at(x, y, 1) = static_cast<std::uint8_t>(140 * shade);
                rgb.at(x, y, 2) = static_cast<std::uint8_t>(120 * shade);
            }
        for (std::size_t v = 0; v < rs.size; ++v)
            for (std::size_t u = 0; u < rs.size; ++u) {
                const std::size_t x = static_cast<std::size_t>(spec.face.left) + u;
                const std::size_t y = static_cast<std::size_t>(spec.face.top) + v;
                const double z = head.depth[v * rs.size + u];
                if (std::isnan(z)) continue;
                for (std::size_t c = 0; c < 3; ++c) rgb.at(x, y, c) = head.image.at(u, v, c);
                depth[y * spec.width + x] = spec.face_depth_mm - z * spec.head_scale_mm;
            }

        if (f > 0) {
            // Bowl ellipse plus a handle, rotated by a random angle.
            const Vec3 color = palette[static_cast<std::size_t>(unit(rng) * palette.size()) % palette.size()];
            const double cx = spec.face.left + spec.face.width * (0.3 + 0.4 * unit(rng));
            const double cy = spec.face.top + spec.face.height * (0.3 + 0.4 * unit(rng));
            const double bowl_a = spec.face.width * (0.12 + 0.06 * unit(rng));
            const double bowl_b = bowl_a * (1.3 + 0.3 * unit(rng));
            const double handle_len = spec.face.width * (0.35 + 0.2 * unit(rng));
            const double handle_half = spec.face.width * 0.035;
            const double angle = (unit(rng) - 0.5) * 1.6;
            const double ca = std::cos(angle), sa = std::sin(angle);
            const double base_mm = spec.occluder_min_mm + (spec.occluder_max_mm - spec.occluder_min_mm) * unit(rng);
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                    const double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
                    const double e = (lx * lx) / (bowl_a * bowl_a) + (ly * ly) / (bowl_b * bowl_b);
                    const bool in_bowl = e <= 1.0;
                    const bool in_handle = std::abs(lx) <= handle_half && ly > 0.0 && ly <= bowl_b + handle_len;
                    if (!in_bowl && !in_handle) continue;
                    const double bulge = in_bowl ? 8.0 * (1.0 - e) : 0.0;
                    const double shade = in_bowl ? 0.75 + 0.25 * (1.0 - e) : 0.8;
                    for (std::size_t c = 0; c < 3; ++c)
                        rgb.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(color[c] * shade, 0.0, 255.0));
                    depth[y * spec.width + x] = base_mm - bulge + ly * mm_per_px * 0.1;
                }
        }

        DepthFrame frame(spec.width, spec.height);
        for (std::size_t i = 0; i < depth.size(); ++i) {
            double d = depth[i] + jitter(rng);
            const double r = unit(rng);
            if (r < spec.invalid_fraction) d = 0.0;
            else if (r < spec.invalid_fraction + spec.flying_fraction) d = 200.0 + 2800.0 * unit(rng);
            frame.depth[i] = static_cast<std::uint16_t>(std::clamp(std::lround(d), 0L, 65535L));
        }
        char id[16];
        std::snprintf(id, sizeof id, "f%03zu", f);
        FrameEntry entry{id, dir / "rgb" / (std::string(id) + ".ppm"), dir / "depth" / (std::string(id) + ".pgm")};
        write_ppm(entry.rgb, rgb);
        write_pgm16(entry.depth, frame);
        seq.frames.push_back(std::move(entry));
    }
    // Frame paths in frames.txt are relative to dir.
    std::vector<FrameEntry> listed;
    for (const auto& e : seq.frames)
        listed.push_back({e.id, std::filesystem::path("rgb") / e.rgb.filename(),
                          std::filesystem::path("depth") / e.depth.filename()});
    write_frame_list(dir, listed);
    std::ofstream boxes(dir / "boxes.csv", std::ios::trunc);
    require(boxes.good(), ErrorKind::io, "cannot write " + (dir / "boxes.csv").string());
    boxes << "frame_id,left,top,width,height\n*," << spec.face.left << ',' << spec.face.top << ',' << spec.face.width
          << ',' << spec.face.height << "\n";
    return seq;
}

} // namespace occludere
