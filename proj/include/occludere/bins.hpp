#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "occludere/error.hpp"

namespace occludere {

/// Discretization of an angle range into equal-width classification bins.
struct BinSpec {
    std::size_t count = 66;
    double width = 3.0;
    double min_angle = -99.0;
    double max_angle = 99.0;

    void validate() const {
        require(count >= 1 && width > 0.0 && max_angle > min_angle, ErrorKind::config,
                "bin spec must have positive count, width and range");
        require(std::abs(static_cast<double>(count) * width - (max_angle - min_angle)) < 1e-9,
                ErrorKind::config, "bin count * width must equal the angle range");
    }

    bool contains(double angle) const { return angle >= min_angle && angle < max_angle; }

    /// Centre of the 0-based bin `index`.
    double center(std::size_t index) const {
        return min_angle + width * (static_cast<double>(index) + 0.5);
    }

    bool operator==(const BinSpec&) const = default;
};

struct EulerPose {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;

    double operator[](std::size_t axis) const { return axis == 0 ? yaw : axis == 1 ? pitch : roll; }
    double& operator[](std::size_t axis) { return axis == 0 ? yaw : axis == 1 ? pitch : roll; }

    bool operator==(const EulerPose&) const = default;
};

inline constexpr const char* kAxisNames[3] = {"yaw", "pitch", "roll"};

/// 0-based bin containing `angle`.
inline std::size_t bin_label(double angle, const BinSpec& spec) {
    require(std::isfinite(angle) && spec.contains(angle), ErrorKind::label,
            "angle " + std::to_string(angle) + " outside [" + std::to_string(spec.min_angle) +
                ", " + std::to_string(spec.max_angle) + ")");
    const auto index = static_cast<std::size_t>(std::floor((angle - spec.min_angle) / spec.width));
    return index < spec.count ? index : spec.count - 1;
}

/// Expected angle of a bin distribution, shifting 1-based indices to bin centres.
inline double expected_angle(std::span<const double> probs, const BinSpec& spec) {
    require(probs.size() == spec.count, ErrorKind::shape,
            "expected_angle: distribution has " + std::to_string(probs.size()) + " bins, spec has " +
                std::to_string(spec.count));
    const double offset = (1.0 + static_cast<double>(spec.count)) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        total += probs[i] * (static_cast<double>(i + 1) - offset);
    return spec.width * total;
}

} // namespace occludere
