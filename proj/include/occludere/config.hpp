#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "occludere/adam.hpp"
#include "occludere/binio.hpp"
#include "occludere/net.hpp"
#include "occludere/occlusion.hpp"

namespace occludere {

struct TrainConfig {
    std::size_t epochs = 25;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    LossWeights weights{};
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::string precision = "double";       // double | float
    std::string normalization = "dataset";  // dataset | imagenet
    double mix_clean = 0.0;                 // stage 3: extra clean records per occluded record
    bool allow_latent_mismatch = false;     // stage 3: accept a latent store from another checkpoint

    AdamHyper adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

struct OcclusionConfig {
    ClusterParams cluster{};
    std::uint16_t margin_mm = 20;
    bool despeckle = true;
    std::array<double, 6> scales = default_severity_scales();
    double opacity = 1.0;
};

/// Paths are kept as written; relative ones resolve against the config file's directory.
struct PathsConfig {
    std::string clean_manifest;
    std::string occluded_manifest;
    std::string latent_store;
    std::string init_checkpoint;
    std::string checkpoint;
    std::string log;
};

struct RunConfig {
    NetConfig net{};
    TrainConfig train{};
    OcclusionConfig occlusion{};
    PathsConfig paths{};
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.empty() || path.is_absolute() ? path : base_dir / path;
    }

    void validate() const {
        net.validate();
        train.weights.validate();
        require(train.batch_size >= 1, ErrorKind::config, "[train] batch_size must be >= 1");
        require(train.learning_rate > 0.0, ErrorKind::config, "[train] learning_rate must be positive");
        require(train.adam_beta1 >= 0.0 && train.adam_beta1 < 1.0 && train.adam_beta2 >= 0.0 && train.adam_beta2 < 1.0,
                ErrorKind::config, "[train] adam betas must lie in [0,1)");
        require(train.adam_epsilon > 0.0, ErrorKind::config, "[train] adam_epsilon must be positive");
        require(train.precision == "double" || train.precision == "float", ErrorKind::config,
                "[train] precision must be double or float");
        require(train.normalization == "dataset" || train.normalization == "imagenet", ErrorKind::config,
                "[train] normalization must be dataset or imagenet");
        require(train.mix_clean >= 0.0, ErrorKind::config, "[train] mix_clean must be non-negative");
        require(occlusion.cluster.eps > 0.0 && occlusion.cluster.min_points >= 1 &&
                    occlusion.cluster.depth_scale_mm > 0.0,
                ErrorKind::config, "[occlusion] DBSCAN parameters must be positive");
        require(occlusion.opacity >= 0.0 && occlusion.opacity <= 1.0, ErrorKind::config,
                "[occlusion] opacity must lie in [0,1]");
        for (std::size_t i = 0; i < occlusion.scales.size(); ++i)
            require(occlusion.scales[i] > 0.0 && (i == 0 || occlusion.scales[i] > occlusion.scales[i - 1]),
                    ErrorKind::config, "[occlusion] scales must be positive and strictly increasing");
    }
};

namespace detail {

struct ConfigField {
    const char* section;
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] inline void bad_value(const ConfigField& f, const std::string& v, const char* expected) {
    fail(ErrorKind::config, std::string("[") + f.section + "] " + f.key + ": expected " + expected + ", got '" + v + "'");
}

inline double to_double(const ConfigField& f, const std::string& v) {
    double out;
    if (!parse_number(v, out)) bad_value(f, v, "a number");
    return out;
}

inline std::size_t to_size(const ConfigField& f, const std::string& v) {
    long out;
    if (!parse_integer(v, out) || out < 0) bad_value(f, v, "a non-negative integer");
    return static_cast<std::size_t>(out);
}

inline bool to_bool(const ConfigField& f, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(f, v, "a boolean");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        out.push_back(item);
    }
    return out;
}

template <class Range>
std::string join_numbers(const Range& values) {
    std::string out;
    for (const auto& v : values) out += (out.empty() ? "" : ",") + format_number(static_cast<double>(v));
    return out;
}

inline const std::vector<ConfigField>& config_fields() {
    using C = RunConfig;
    using S = const std::string&;
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        const auto number = [&f](const char* sec, const char* key, auto member) {
            f.push_back({sec, key, [member](const C& c) { return format_number(static_cast<double>(member(const_cast<C&>(c)))); },
                         nullptr});
            const ConfigField self = f.back();
            f.back().set = [member, self](C& c, S v) {
                using V = std::remove_reference_t<decltype(member(c))>;
                if constexpr (std::is_floating_point_v<V>) member(c) = to_double(self, v);
                else member(c) = static_cast<V>(to_size(self, v));
            };
        };
        const auto text = [&f](const char* sec, const char* key, auto member) {
            f.push_back({sec, key, [member](const C& c) { return member(const_cast<C&>(c)); },
                         [member](C& c, S v) { member(c) = v; }});
        };
        const auto flag = [&f](const char* sec, const char* key, auto member) {
            f.push_back({sec, key, [member](const C& c) { return std::string(member(const_cast<C&>(c)) ? "true" : "false"); },
                         nullptr});
            const ConfigField self = f.back();
            f.back().set = [member, self](C& c, S v) { member(c) = to_bool(self, v); };
        };

        number("net", "input_size", [](C& c) -> auto& { return c.net.input_size; });
        f.push_back({"net", "widths", [](const C& c) { return join_numbers(c.net.widths); }, nullptr});
        {
            const ConfigField self = f.back();
            f.back().set = [self](C& c, S v) {
                c.net.widths.clear();
                for (const auto& item : split_list(v)) c.net.widths.push_back(to_size(self, item));
            };
        }
        number("net", "kernel", [](C& c) -> auto& { return c.net.kernel; });
        number("net", "stride", [](C& c) -> auto& { return c.net.stride; });
        number("net", "padding", [](C& c) -> auto& { return c.net.padding; });

        number("bins", "count", [](C& c) -> auto& { return c.net.bins.count; });
        number("bins", "width", [](C& c) -> auto& { return c.net.bins.width; });
        number("bins", "min_angle", [](C& c) -> auto& { return c.net.bins.min_angle; });
        number("bins", "max_angle", [](C& c) -> auto& { return c.net.bins.max_angle; });

        number("train", "epochs", [](C& c) -> auto& { return c.train.epochs; });
        number("train", "learning_rate", [](C& c) -> auto& { return c.train.learning_rate; });
        number("train", "batch_size", [](C& c) -> auto& { return c.train.batch_size; });
        number("train", "alpha", [](C& c) -> auto& { return c.train.weights.alpha; });
        number("train", "beta", [](C& c) -> auto& { return c.train.weights.beta; });
        number("train", "seed", [](C& c) -> auto& { return c.train.seed; });
        number("train", "adam_beta1", [](C& c) -> auto& { return c.train.adam_beta1; });
        number("train", "adam_beta2", [](C& c) -> auto& { return c.train.adam_beta2; });
        number("train", "adam_epsilon", [](C& c) -> auto& { return c.train.adam_epsilon; });
        text("train", "precision", [](C& c) -> auto& { return c.train.precision; });
        text("train", "normalization", [](C& c) -> auto& { return c.train.normalization; });
        number("train", "mix_clean", [](C& c) -> auto& { return c.train.mix_clean; });
        flag("train", "allow_latent_mismatch", [](C& c) -> auto& { return c.train.allow_latent_mismatch; });

        number("occlusion", "eps", [](C& c) -> auto& { return c.occlusion.cluster.eps; });
        number("occlusion", "min_points", [](C& c) -> auto& { return c.occlusion.cluster.min_points; });
        number("occlusion", "depth_scale_mm", [](C& c) -> auto& { return c.occlusion.cluster.depth_scale_mm; });
        number("occlusion", "margin_mm", [](C& c) -> auto& { return c.occlusion.margin_mm; });
        flag("occlusion", "despeckle", [](C& c) -> auto& { return c.occlusion.despeckle; });
        f.push_back({"occlusion", "scales", [](const C& c) { return join_numbers(c.occlusion.scales); }, nullptr});
        {
            const ConfigField self = f.back();
            f.back().set = [self](C& c, S v) {
                const auto items = split_list(v);
                if (items.size() != 6) bad_value(self, v, "six comma-separated scale factors");
                for (std::size_t i = 0; i < 6; ++i) c.occlusion.scales[i] = to_double(self, items[i]);
            };
        }
        number("occlusion", "opacity", [](C& c) -> auto& { return c.occlusion.opacity; });

        text("paths", "clean_manifest", [](C& c) -> auto& { return c.paths.clean_manifest; });
        text("paths", "occluded_manifest", [](C& c) -> auto& { return c.paths.occluded_manifest; });
        text("paths", "latent_store", [](C& c) -> auto& { return c.paths.latent_store; });
        text("paths", "init_checkpoint", [](C& c) -> auto& { return c.paths.init_checkpoint; });
        text("paths", "checkpoint", [](C& c) -> auto& { return c.paths.checkpoint; });
        text("paths", "log", [](C& c) -> auto& { return c.paths.log; });
        return f;
    }();
    return fields;
}

inline std::string env_name(const ConfigField& f) {
    std::string name = std::string("OCCLUDERE_") + f.section + "_" + f.key;
    for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return name;
}

} // namespace detail

/// Sets one `section.key` value; unknown keys are config errors.
inline void set_config_value(RunConfig& config, const std::string& section, const std::string& key,
                             const std::string& value) {
    for (const auto& f : detail::config_fields())
        if (section == f.section && key == f.key) {
            f.set(config, value);
            return;
        }
    fail(ErrorKind::config, "unknown config key [" + section + "] " + key);
}

inline std::string get_config_value(const RunConfig& config, const std::string& section, const std::string& key) {
    for (const auto& f : detail::config_fields())
        if (section == f.section && key == f.key) return f.get(config);
    fail(ErrorKind::config, "unknown config key [" + section + "] " + key);
}

/// Parses INI text. Values of OCCLUDERE_<SECTION>_<KEY> environment variables
/// override the text when `use_env` is set.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              bool use_env = true, const std::string& source = "<config>") {
    RunConfig config;
    config.base_dir = base_dir;
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorKind::config, source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
        require(!(body.empty() && !body.data().empty()), ErrorKind::config,
                source + ": key '" + section + "' outside any section");
        const auto& fields = detail::config_fields();
        require(std::any_of(fields.begin(), fields.end(), [&](const auto& f) { return section == f.section; }),
                ErrorKind::config, source + ": unknown section [" + section + "]");
        for (const auto& [key, value] : body) set_config_value(config, section, key, value.data());
    }
    if (use_env)
        for (const auto& f : detail::config_fields())
            if (const char* v = std::getenv(detail::env_name(f).c_str())) f.set(config, v);
    config.validate();
    return config;
}

inline RunConfig load_config(const std::filesystem::path& path, bool use_env = true) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path(), use_env, path.string());
}

/// Canonical INI form listing every key; parsing it back yields the same config.
inline std::string to_ini(const RunConfig& config) {
    std::string out, section;
    for (const auto& f : detail::config_fields()) {
        if (section != f.section) {
            section = f.section;
            out += (out.empty() ? "[" : "\n[") + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get(config) + "\n";
    }
    return out;
}

inline std::string config_hash(const RunConfig& config) {
    Fnv1a h;
    h.update(to_ini(config));
    return h.hex();
}

} // namespace occludere
