#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "occludere/binio.hpp"
#include "occludere/manifest.hpp"
#include "occludere/tensor.hpp"

namespace occludere {

/// Per-channel statistics applied to pixels scaled to [0, 1].
struct NormalizationSpec {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};

    static NormalizationSpec imagenet() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }

    void validate() const {
        for (double s : stddev) require(s > 0.0 && std::isfinite(s), ErrorKind::config, "normalization std must be > 0");
    }
    double apply(double unit, std::size_t c) const { return (unit - mean[c]) / stddev[c]; }
    double invert(double value, std::size_t c) const { return value * stddev[c] + mean[c]; }

    bool operator==(const NormalizationSpec&) const = default;
};

/// Crops `box` and resizes it to size x size with bilinear sampling on pixel
/// centres. Returns planar CHW values in [0, 1].
inline std::vector<double> face_pixels(const RgbImage& img, const Box& box, std::size_t size) {
    require(box.inside(img.width, img.height), ErrorKind::contract, "face box lies outside the image");
    std::vector<double> out(3 * size * size);
    const double sx = static_cast<double>(box.width) / static_cast<double>(size);
    const double sy = static_cast<double>(box.height) / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(box.height - 1));
        const auto y0 = static_cast<std::size_t>(std::floor(fy));
        const std::size_t y1 = std::min(y0 + 1, static_cast<std::size_t>(box.height - 1));
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(box.width - 1));
            const auto x0 = static_cast<std::size_t>(std::floor(fx));
            const std::size_t x1 = std::min(x0 + 1, static_cast<std::size_t>(box.width - 1));
            const double wx = fx - static_cast<double>(x0);
            const std::size_t bl = static_cast<std::size_t>(box.left), bt = static_cast<std::size_t>(box.top);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v00 = img.at(bl + x0, bt + y0, c), v01 = img.at(bl + x1, bt + y0, c);
                const double v10 = img.at(bl + x0, bt + y1, c), v11 = img.at(bl + x1, bt + y1, c);
                const double top = v00 + wx * (v01 - v00), bottom = v10 + wx * (v11 - v10);
                out[(c * size + y) * size + x] = (top + wy * (bottom - top)) / 255.0;
            }
        }
    }
    return out;
}

/// Cropped, resized, unnormalized faces of a manifest held in memory.
class FaceCache {
public:
    FaceCache(const DatasetManifest& manifest, std::size_t size) : size_(size) {
        faces_.reserve(manifest.size());
        for (const auto& r : manifest.records) {
            RgbImage img;
            try {
                img = read_ppm(manifest.resolve(r));
            } catch (const Error& e) {
                fail(ErrorKind::io, "image " + r.id + ": " + e.what());
            }
            faces_.push_back(face_pixels(img, r.box, size));
        }
    }

    std::size_t size() const { return faces_.size(); }
    std::size_t input_size() const { return size_; }
    std::span<const double> face(std::size_t i) const { return faces_[i]; }

private:
    std::size_t size_;
    std::vector<std::vector<double>> faces_;
};

inline NormalizationSpec compute_normalization(const FaceCache& cache) {
    NormalizationSpec spec;
    require(cache.size() > 0, ErrorKind::contract, "normalization needs at least one image");
    const std::size_t plane = cache.input_size() * cache.input_size();
    for (std::size_t c = 0; c < 3; ++c) {
        double total = 0.0, total_sq = 0.0;
        for (std::size_t i = 0; i < cache.size(); ++i)
            for (std::size_t p = 0; p < plane; ++p) {
                const double v = cache.face(i)[c * plane + p];
                total += v;
                total_sq += v * v;
            }
        const double n = static_cast<double>(cache.size() * plane);
        spec.mean[c] = total / n;
        spec.stddev[c] = std::sqrt(std::max(total_sq / n - spec.mean[c] * spec.mean[c], 1e-12));
    }
    return spec;
}

template <class T>
struct Batch {
    BasicTensor<T> images;                          // (B, 3, S, S), normalized
    std::array<std::vector<std::size_t>, 3> bins;   // per axis, 0-based bin targets
    std::array<std::vector<double>, 3> degrees;     // per axis, ground truth in degrees
    std::vector<std::string> ids;
    std::vector<std::string> source_ids;
};

template <class T>
Batch<T> make_batch(const DatasetManifest& manifest, const FaceCache& cache, std::span<const std::size_t> rows,
                    const NormalizationSpec& norm, const BinSpec& spec) {
    require(!rows.empty(), ErrorKind::contract, "make_batch: empty selection");
    const std::size_t s = cache.input_size(), plane = s * s;
    std::vector<T> pixels(rows.size() * 3 * plane);
    Batch<T> batch;
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto& r = manifest.records.at(rows[b]);
        const auto face = cache.face(rows[b]);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < plane; ++p)
                pixels[(b * 3 + c) * plane + p] = static_cast<T>(norm.apply(face[c * plane + p], c));
        for (std::size_t a = 0; a < 3; ++a) {
            batch.bins[a].push_back(bin_label(r.pose[a], spec));
            batch.degrees[a].push_back(r.pose[a]);
        }
        batch.ids.push_back(r.id);
        batch.source_ids.push_back(r.source_id);
    }
    batch.images = BasicTensor<T>(Shape{rows.size(), 3, s, s}, std::move(pixels));
    return batch;
}

/// Loads the selected records from disk and builds a batch.
template <class T>
Batch<T> make_batch(const DatasetManifest& manifest, std::span<const std::size_t> rows,
                    const NormalizationSpec& norm, const BinSpec& spec, std::size_t input_size) {
    DatasetManifest subset;
    subset.base_dir = manifest.base_dir;
    for (auto r : rows) subset.records.push_back(manifest.records.at(r));
    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch<T>(subset, FaceCache(subset, input_size), all, norm, spec);
}

// ---------------------------------------------------------------------------
// Latent store
//
// Layout (little-endian):
//   "OCLS" | u32 version (1) | u32 dim | u64 count | u32 len + checkpoint id
//   count x { u32 len + image id | dim x f64 }

class LatentStore {
public:
    static constexpr char kMagic[4] = {'O', 'C', 'L', 'S'};
    static constexpr std::uint32_t kVersion = 1;

    LatentStore() = default;
    LatentStore(std::size_t dim, std::string checkpoint_id) : dim_(dim), checkpoint_id_(std::move(checkpoint_id)) {
        require(dim > 0, ErrorKind::contract, "latent store dimension must be positive");
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::string& checkpoint_id() const { return checkpoint_id_; }
    const std::vector<std::string>& ids() const { return ids_; }

    void add(const std::string& id, std::span<const double> values) {
        require(values.size() == dim_, ErrorKind::shape,
                "latent for " + id + " has length " + std::to_string(values.size()) + ", store expects " +
                    std::to_string(dim_));
        for (double v : values) require(std::isfinite(v), ErrorKind::numeric, "non-finite latent for " + id);
        require(index_.emplace(id, ids_.size()).second, ErrorKind::validation, "duplicate latent id " + id);
        ids_.push_back(id);
        values_.insert(values_.end(), values.begin(), values.end());
    }

    std::optional<std::span<const double>> find(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return std::span<const double>(values_).subspan(it->second * dim_, dim_);
    }

    std::span<const double> at(std::size_t i) const { return std::span<const double>(values_).subspan(i * dim_, dim_); }

    /// Exact file size implied by the header and ids.
    std::uint64_t file_size() const {
        std::uint64_t total = 4 + 4 + 4 + 8 + 4 + checkpoint_id_.size();
        for (const auto& id : ids_) total += 4 + id.size() + 8 * dim_;
        return total;
    }

    bool operator==(const LatentStore& o) const {
        return dim_ == o.dim_ && checkpoint_id_ == o.checkpoint_id_ && ids_ == o.ids_ && values_ == o.values_;
    }

private:
    std::size_t dim_ = 0;
    std::string checkpoint_id_;
    std::vector<std::string> ids_;
    std::vector<double> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline void write_latent_store(const std::filesystem::path& path, const LatentStore& store) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write latent store " + path.string());
    out.write(LatentStore::kMagic, 4);
    put_u32(out, LatentStore::kVersion);
    put_u32(out, static_cast<std::uint32_t>(store.dim()));
    put_u64(out, store.size());
    put_string(out, store.checkpoint_id());
    for (std::size_t i = 0; i < store.size(); ++i) {
        put_string(out, store.ids()[i]);
        for (double v : store.at(i)) put_f64(out, v);
    }
    require(out.good(), ErrorKind::io, "failed writing latent store " + path.string());
}

inline LatentStore read_latent_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open latent store " + path.string());
    BinaryReader r(in, path.string());
    char magic[4];
    r.bytes(magic, 4);
    require(std::equal(magic, magic + 4, LatentStore::kMagic), ErrorKind::format, path.string() + ": bad magic");
    require(r.u32() == LatentStore::kVersion, ErrorKind::format, path.string() + ": unsupported version");
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();
    require(dim > 0, ErrorKind::format, path.string() + ": zero latent dimension");
    LatentStore store(dim, r.string());
    std::vector<double> values(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string id = r.string();
        for (auto& v : values) v = r.f64();
        store.add(id, values);
    }
    require(r.at_end(), ErrorKind::format, path.string() + ": trailing bytes after " + std::to_string(count) +
                                               " records of dimension " + std::to_string(dim));
    return store;
}

} // namespace occludere
