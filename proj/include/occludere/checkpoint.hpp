#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "occludere/adam.hpp"
#include "occludere/binio.hpp"
#include "occludere/config.hpp"
#include "occludere/dataset.hpp"
#include "occludere/net.hpp"

namespace occludere {

// Checkpoint layout (little-endian):
//   "OCCK" | u32 version (1) | u32 len + resolved config (INI text)
//   6 x f64 normalization (mean rgb, std rgb) | u64 epoch
//   u64 adam step | 4 x f64 adam hyper (lr, beta1, beta2, eps)
//   u32 parameter count, then per parameter:
//     u32 len + name | u32 rank | rank x u64 extent
//     numel x f64 value | numel x f64 first moment | numel x f64 second moment
//   u64 FNV-1a of every preceding byte
// The checkpoint id is that hash in hex.

struct ParameterRecord {
    std::string name;
    Shape shape;
    std::vector<double> value, first_moment, second_moment;
};

struct Checkpoint {
    static constexpr char kMagic[4] = {'O', 'C', 'C', 'K'};
    static constexpr std::uint32_t kVersion = 1;

    RunConfig config;
    NormalizationSpec normalization;
    std::uint64_t epoch = 0;
    std::uint64_t adam_step = 0;
    AdamHyper adam_hyper;
    std::vector<ParameterRecord> params;
    std::string id;

    bool operator==(const Checkpoint& o) const { return id == o.id; }
};

template <class T>
Checkpoint capture_checkpoint(const PoseNet<T>& net, const AdamState<T>& adam, const RunConfig& config,
                              const NormalizationSpec& norm, std::uint64_t epoch) {
    Checkpoint ck;
    ck.config = config;
    ck.config.net = net.config();
    ck.normalization = norm;
    ck.epoch = epoch;
    ck.adam_step = adam.step;
    ck.adam_hyper = adam.hyper;
    const auto params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        ParameterRecord r;
        r.name = net.parameter_names()[k];
        r.shape = params[k].shape();
        r.value.assign(params[k].data().begin(), params[k].data().end());
        if (k < adam.first_moment.size()) {
            r.first_moment.assign(adam.first_moment[k].begin(), adam.first_moment[k].end());
            r.second_moment.assign(adam.second_moment[k].begin(), adam.second_moment[k].end());
        } else {
            r.first_moment.assign(r.value.size(), 0.0);
            r.second_moment.assign(r.value.size(), 0.0);
        }
        ck.params.push_back(std::move(r));
    }
    return ck;
}

template <class T>
PoseNet<T> restore_net(const Checkpoint& ck) {
    PoseNet<T> net(ck.config.net, 0);
    require(net.parameters().size() == ck.params.size(), ErrorKind::format,
            "checkpoint " + ck.id + " does not match its network configuration");
    std::vector<std::vector<double>> values;
    for (std::size_t k = 0; k < ck.params.size(); ++k) {
        require(ck.params[k].name == net.parameter_names()[k] && ck.params[k].shape == net.parameters()[k].shape(),
                ErrorKind::format, "checkpoint parameter " + ck.params[k].name + " does not match the network");
        values.push_back(ck.params[k].value);
    }
    net.load_values(values);
    return net;
}

template <class T>
AdamState<T> restore_adam(const Checkpoint& ck) {
    AdamState<T> state;
    state.hyper = ck.adam_hyper;
    state.step = ck.adam_step;
    for (const auto& p : ck.params) {
        state.first_moment.emplace_back(p.first_moment.begin(), p.first_moment.end());
        state.second_moment.emplace_back(p.second_moment.begin(), p.second_moment.end());
    }
    return state;
}

namespace detail {

inline std::string checkpoint_payload(const Checkpoint& ck) {
    std::ostringstream out(std::ios::binary);
    out.write(Checkpoint::kMagic, 4);
    put_u32(out, Checkpoint::kVersion);
    put_string(out, to_ini(ck.config));
    for (double m : ck.normalization.mean) put_f64(out, m);
    for (double s : ck.normalization.stddev) put_f64(out, s);
    put_u64(out, ck.epoch);
    put_u64(out, ck.adam_step);
    for (double h : {ck.adam_hyper.learning_rate, ck.adam_hyper.beta1, ck.adam_hyper.beta2, ck.adam_hyper.epsilon})
        put_f64(out, h);
    put_u32(out, static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        put_string(out, p.name);
        put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
        for (auto e : p.shape) put_u64(out, e);
        for (const auto* buffer : {&p.value, &p.first_moment, &p.second_moment})
            for (double v : *buffer) put_f64(out, v);
    }
    return out.str();
}

inline std::string hash_hex(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

} // namespace detail

/// Content id the checkpoint would get when written.
inline std::string checkpoint_id(const Checkpoint& ck) { return detail::hash_hex(detail::checkpoint_payload(ck)); }

/// Writes the checkpoint and returns its content id (also stored in ck.id).
inline std::string write_checkpoint(const std::filesystem::path& path, Checkpoint& ck) {
    const std::string payload = detail::checkpoint_payload(ck);
    Fnv1a h;
    h.update(payload);
    ck.id = h.hex();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write checkpoint " + path.string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    put_u64(out, h.digest());
    require(out.good(), ErrorKind::io, "failed writing checkpoint " + path.string());
    return ck.id;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    require(file.good(), ErrorKind::io, "cannot open checkpoint " + path.string());
    std::stringstream buf;
    buf << file.rdbuf();
    const std::string bytes = buf.str();
    const std::string p = path.string();
    require(bytes.size() >= 16, ErrorKind::format, p + ": truncated checkpoint");
    const std::string_view payload(bytes.data(), bytes.size() - 8);

    std::istringstream in(bytes, std::ios::binary);
    BinaryReader r(in, p);
    char magic[4];
    r.bytes(magic, 4);
    require(std::equal(magic, magic + 4, Checkpoint::kMagic), ErrorKind::format, p + ": not a checkpoint");
    require(r.u32() == Checkpoint::kVersion, ErrorKind::format, p + ": unsupported checkpoint version");
    Checkpoint ck;
    ck.config = parse_config(r.string(), path.parent_path(), false, p);
    for (double& m : ck.normalization.mean) m = r.f64();
    for (double& s : ck.normalization.stddev) s = r.f64();
    ck.epoch = r.u64();
    ck.adam_step = r.u64();
    ck.adam_hyper.learning_rate = r.f64();
    ck.adam_hyper.beta1 = r.f64();
    ck.adam_hyper.beta2 = r.f64();
    ck.adam_hyper.epsilon = r.f64();
    const std::uint32_t count = r.u32();
    require(count < 4096, ErrorKind::format, p + ": implausible parameter count");
    for (std::uint32_t k = 0; k < count; ++k) {
        ParameterRecord rec;
        rec.name = r.string();
        const std::uint32_t rank = r.u32();
        require(rank >= 1 && rank <= 8, ErrorKind::format, p + ": bad rank for " + rec.name);
        for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<std::size_t>(r.u64()));
        const std::size_t n = numel(rec.shape);
        require(n > 0 && n * 24 <= bytes.size(), ErrorKind::format, p + ": bad extents for " + rec.name);
        for (auto* buffer : {&rec.value, &rec.first_moment, &rec.second_moment}) {
            buffer->resize(n);
            for (double& v : *buffer) v = r.f64();
        }
        ck.params.push_back(std::move(rec));
    }
    const std::uint64_t stored = r.u64();
    require(r.at_end(), ErrorKind::format, p + ": trailing bytes after checkpoint");
    Fnv1a h;
    h.update(payload);
    require(h.digest() == stored, ErrorKind::format, p + ": checkpoint hash mismatch (file corrupted)");
    ck.id = h.hex();
    return ck;
}

} // namespace occludere
