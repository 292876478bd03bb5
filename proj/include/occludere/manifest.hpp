#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "occludere/binio.hpp"
#include "occludere/bins.hpp"
#include "occludere/image.hpp"

namespace occludere {

struct OcclusionInfo {
    std::string asset_id;
    double scale = 1.0;
    long anchor_x = 0;
    long anchor_y = 0;
    double percent = 0.0;

    bool operator==(const OcclusionInfo&) const = default;
};

struct ManifestRecord {
    std::string id;
    std::string path;       // relative to the manifest directory unless absolute
    EulerPose pose;
    Box box;
    std::string source_id;  // clean image this record derives from; equals id for clean records
    std::optional<OcclusionInfo> occlusion;
    std::string split;

    bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;
    std::size_t excluded = 0;

    std::filesystem::path resolve(const ManifestRecord& r) const {
        const std::filesystem::path p(r.path);
        return p.is_absolute() ? p : base_dir / p;
    }
    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

inline constexpr const char* kManifestHeader =
    "id,path,yaw,pitch,roll,box_left,box_top,box_width,box_height,source_id,asset_id,occ_scale,"
    "occ_anchor_x,occ_anchor_y,occ_percent,split";

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

/// Reads a manifest, dropping (and counting) records whose pose leaves the bin range.
inline DatasetManifest load_manifest(const std::filesystem::path& path, const BinSpec& spec,
                                     std::ostream* warnings = &std::cerr) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open manifest " + path.string());
    DatasetManifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    const auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, path.string() + ": missing header row");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == kManifestHeader, ErrorKind::parse, where() + ": unexpected header row");

    std::unordered_set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv(line);
        require(f.size() == 16, ErrorKind::parse,
                where() + ": expected 16 fields, found " + std::to_string(f.size()));
        ManifestRecord r;
        r.id = f[0];
        r.path = f[1];
        require(!r.id.empty() && !r.path.empty(), ErrorKind::parse, where() + ": empty id or path");
        for (std::size_t a = 0; a < 3; ++a)
            require(parse_number(f[2 + a], r.pose[a]), ErrorKind::parse,
                    where() + ": bad " + kAxisNames[a] + " '" + f[2 + a] + "'");
        require(parse_integer(f[5], r.box.left) && parse_integer(f[6], r.box.top) &&
                    parse_integer(f[7], r.box.width) && parse_integer(f[8], r.box.height),
                ErrorKind::parse, where() + ": bad face box");
        require(r.box.width > 0 && r.box.height > 0 && r.box.left >= 0 && r.box.top >= 0, ErrorKind::parse,
                where() + ": face box must have positive extents");
        r.source_id = f[9].empty() ? r.id : f[9];
        if (!f[10].empty()) {
            OcclusionInfo occ;
            occ.asset_id = f[10];
            require(parse_number(f[11], occ.scale) && parse_integer(f[12], occ.anchor_x) &&
                        parse_integer(f[13], occ.anchor_y) && parse_number(f[14], occ.percent),
                    ErrorKind::parse, where() + ": bad occlusion fields");
            r.occlusion = occ;
        }
        r.split = f[15];
        require(ids.insert(r.id).second, ErrorKind::validation, where() + ": duplicate image id " + r.id);
        bool in_range = true;
        for (std::size_t a = 0; a < 3; ++a) in_range = in_range && spec.contains(r.pose[a]);
        if (!in_range) {
            ++manifest.excluded;
            continue;
        }
        manifest.records.push_back(std::move(r));
    }
    if (manifest.excluded && warnings)
        *warnings << "warning: " << path.string() << ": excluded " << manifest.excluded
                  << " record(s) with poses outside [" << spec.min_angle << ", " << spec.max_angle << ")\n";
    return manifest;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write manifest " + path.string());
    out << kManifestHeader << "\n";
    for (const auto& r : manifest.records) {
        out << r.id << ',' << r.path << ',' << format_number(r.pose.yaw) << ',' << format_number(r.pose.pitch) << ','
            << format_number(r.pose.roll) << ',' << r.box.left << ',' << r.box.top << ',' << r.box.width << ','
            << r.box.height << ',' << r.source_id << ',';
        if (r.occlusion) {
            const auto& o = *r.occlusion;
            out << o.asset_id << ',' << format_number(o.scale) << ',' << o.anchor_x << ',' << o.anchor_y << ','
                << format_number(o.percent);
        } else {
            out << ",,,,";
        }
        out << ',' << r.split << "\n";
    }
    require(out.good(), ErrorKind::io, "failed writing manifest " + path.string());
}

} // namespace occludere
