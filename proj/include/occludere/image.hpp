#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "occludere/error.hpp"

namespace occludere {

/// 8-bit interleaved image with a fixed channel count (3 = RGB, 4 = RGBA).
template <std::size_t Channels>
struct Image {
    static constexpr std::size_t channels = Channels;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(w * h * Channels, fill) {}

    bool empty() const { return width == 0 || height == 0; }
    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
        return pixels[(y * width + x) * Channels + c];
    }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
        return pixels[(y * width + x) * Channels + c];
    }

    bool operator==(const Image&) const = default;
};

using RgbImage = Image<3>;
using RgbaImage = Image<4>;

/// Per-pixel depth in millimetres; 0 marks an invalid (no-return) pixel.
struct DepthFrame {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint16_t> depth;

    DepthFrame() = default;
    DepthFrame(std::size_t w, std::size_t h, std::uint16_t fill = 0)
        : width(w), height(h), depth(w * h, fill) {}

    std::uint16_t& at(std::size_t x, std::size_t y) { return depth[y * width + x]; }
    std::uint16_t at(std::size_t x, std::size_t y) const { return depth[y * width + x]; }

    bool operator==(const DepthFrame&) const = default;
};

/// Pixel-aligned rectangle: [left, left + width) x [top, top + height).
struct Box {
    long left = 0;
    long top = 0;
    long width = 0;
    long height = 0;

    long right() const { return left + width; }
    long bottom() const { return top + height; }
    long area() const { return width * height; }
    bool contains(long x, long y) const { return x >= left && x < right() && y >= top && y < bottom(); }
    bool inside(std::size_t w, std::size_t h) const {
        return width > 0 && height > 0 && left >= 0 && top >= 0 &&
               right() <= static_cast<long>(w) && bottom() <= static_cast<long>(h);
    }

    bool operator==(const Box&) const = default;
};

// ---------------------------------------------------------------------------
// Netpbm I/O: P6 (RGB), P5 16-bit (depth), P7 RGB_ALPHA (occluder patches).

namespace detail {

inline std::string next_token(std::istream& in) {
    std::string token;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string discard;
            std::getline(in, discard);
            if (!token.empty()) break;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(ch);
    }
    return token;
}

inline std::size_t parse_extent(const std::string& token, const std::string& path) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(token, &pos);
        if (pos == token.size() && v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    fail(ErrorKind::format, path + ": bad netpbm header field '" + token + "'");
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open " + path.string());
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write " + path.string());
    return out;
}

inline void read_raw(std::istream& in, void* dst, std::size_t bytes, const std::string& path) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    require(static_cast<std::size_t>(in.gcount()) == bytes, ErrorKind::format,
            path + ": truncated pixel data");
}

} // namespace detail

inline RgbImage read_ppm(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    const std::string p = path.string();
    require(detail::next_token(in) == "P6", ErrorKind::format, p + ": not a binary PPM (P6)");
    RgbImage img;
    img.width = detail::parse_extent(detail::next_token(in), p);
    img.height = detail::parse_extent(detail::next_token(in), p);
    require(detail::parse_extent(detail::next_token(in), p) == 255, ErrorKind::format,
            p + ": only maxval 255 PPM is supported");
    img.pixels.resize(img.width * img.height * 3);
    detail::read_raw(in, img.pixels.data(), img.pixels.size(), p);
    return img;
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    auto out = detail::open_out(path);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

/// Reads an 8- or 16-bit P5 graymap as depth millimetres (16-bit samples are big-endian).
inline DepthFrame read_pgm16(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    const std::string p = path.string();
    require(detail::next_token(in) == "P5", ErrorKind::format, p + ": not a binary PGM (P5)");
    DepthFrame frame;
    frame.width = detail::parse_extent(detail::next_token(in), p);
    frame.height = detail::parse_extent(detail::next_token(in), p);
    const std::size_t maxval = detail::parse_extent(detail::next_token(in), p);
    require(maxval <= 65535, ErrorKind::format, p + ": maxval exceeds 65535");
    const std::size_t n = frame.width * frame.height;
    frame.depth.resize(n);
    if (maxval < 256) {
        std::vector<std::uint8_t> raw(n);
        detail::read_raw(in, raw.data(), n, p);
        for (std::size_t i = 0; i < n; ++i) frame.depth[i] = raw[i];
    } else {
        std::vector<std::uint8_t> raw(2 * n);
        detail::read_raw(in, raw.data(), 2 * n, p);
        for (std::size_t i = 0; i < n; ++i)
            frame.depth[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
    return frame;
}

inline void write_pgm16(const std::filesystem::path& path, const DepthFrame& frame) {
    auto out = detail::open_out(path);
    out << "P5\n" << frame.width << ' ' << frame.height << "\n65535\n";
    std::vector<std::uint8_t> raw(2 * frame.depth.size());
    for (std::size_t i = 0; i < frame.depth.size(); ++i) {
        raw[2 * i] = static_cast<std::uint8_t>(frame.depth[i] >> 8);
        raw[2 * i + 1] = static_cast<std::uint8_t>(frame.depth[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

inline RgbaImage read_pam(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    const std::string p = path.string();
    std::string line;
    std::getline(in, line);
    require(line == "P7", ErrorKind::format, p + ": not a PAM (P7) file");
    RgbaImage img;
    std::size_t depth = 0, maxval = 0;
    std::string tupltype;
    while (std::getline(in, line) && line != "ENDHDR") {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string key, value;
        fields >> key >> value;
        if (key == "WIDTH") img.width = detail::parse_extent(value, p);
        else if (key == "HEIGHT") img.height = detail::parse_extent(value, p);
        else if (key == "DEPTH") depth = detail::parse_extent(value, p);
        else if (key == "MAXVAL") maxval = detail::parse_extent(value, p);
        else if (key == "TUPLTYPE") tupltype = value;
        else fail(ErrorKind::format, p + ": unknown PAM header key " + key);
    }
    require(line == "ENDHDR", ErrorKind::format, p + ": missing ENDHDR");
    require(depth == 4 && maxval == 255 && tupltype == "RGB_ALPHA", ErrorKind::format,
            p + ": expected 8-bit RGB_ALPHA PAM");
    require(img.width > 0 && img.height > 0, ErrorKind::format, p + ": missing extents");
    img.pixels.resize(img.width * img.height * 4);
    detail::read_raw(in, img.pixels.data(), img.pixels.size(), p);
    return img;
}

inline void write_pam(const std::filesystem::path& path, const RgbaImage& img) {
    auto out = detail::open_out(path);
    out << "P7\nWIDTH " << img.width << "\nHEIGHT " << img.height
        << "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    require(out.good(), ErrorKind::io, "failed writing " + path.string());
}

} // namespace occludere
