#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "occludere/bins.hpp"
#include "occludere/ops.hpp"

namespace occludere {

/// Shape of the pose network: a strided convolutional trunk whose flattened
/// output (the latent embedding) feeds three fully-connected angle heads.
struct NetConfig {
    std::size_t input_size = 64;
    std::vector<std::size_t> widths{16, 32, 64, 64};
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
    BinSpec bins{};

    /// Spatial extent after the trunk.
    std::size_t final_extent() const {
        std::size_t extent = input_size;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            require(extent + 2 * padding >= kernel, ErrorKind::config,
                    "net config: input too small for the trunk depth");
            extent = (extent + 2 * padding - kernel) / stride + 1;
        }
        return extent;
    }

    std::size_t latent_dim() const {
        const std::size_t e = final_extent();
        return widths.back() * e * e;
    }

    void validate() const {
        require(input_size >= 4, ErrorKind::config, "net config: input size too small");
        require(!widths.empty(), ErrorKind::config, "net config: at least one trunk stage");
        for (auto w : widths) require(w > 0, ErrorKind::config, "net config: zero channel width");
        require(kernel >= 1 && stride >= 1, ErrorKind::config, "net config: bad kernel/stride");
        bins.validate();
        (void)latent_dim();
    }

    bool operator==(const NetConfig&) const = default;
};

struct LossWeights {
    double alpha = 2.0;
    double beta = 0.0;

    void validate() const {
        require(alpha > 0.0, ErrorKind::config, "alpha must be positive");
        require(beta >= 0.0 && beta <= 1.0, ErrorKind::config, "beta must lie in [0, 1]");
    }
};

template <class T>
struct NetOutput {
    std::array<BasicTensor<T>, 3> logits;  // yaw, pitch, roll; each (B, N)
    BasicTensor<T> latent;                 // (B, D)
};

template <class T>
class PoseNet {
public:
    PoseNet() = default;

    explicit PoseNet(NetConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
        config_.validate();
        std::mt19937_64 rng(seed);
        std::size_t in_channels = 3;
        for (std::size_t s = 0; s < config_.widths.size(); ++s) {
            const std::size_t out = config_.widths[s];
            const std::size_t fan_in = in_channels * config_.kernel * config_.kernel;
            std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            std::vector<T> w(out * fan_in);
            for (auto& v : w) v = static_cast<T>(he(rng));
            add_param("trunk" + std::to_string(s) + ".weight",
                      BasicTensor<T>(Shape{out, in_channels, config_.kernel, config_.kernel},
                                     std::move(w), true));
            add_param("trunk" + std::to_string(s) + ".bias", BasicTensor<T>(Shape{out}, T{0}, true));
            in_channels = out;
        }
        const std::size_t dim = config_.latent_dim();
        const std::size_t bins = config_.bins.count;
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<double> uni(-bound, bound);
        for (const char* axis : kAxisNames) {
            std::vector<T> w(bins * dim), b(bins);
            for (auto& v : w) v = static_cast<T>(uni(rng));
            for (auto& v : b) v = static_cast<T>(uni(rng));
            add_param(std::string("head.") + axis + ".weight",
                      BasicTensor<T>(Shape{bins, dim}, std::move(w), true));
            add_param(std::string("head.") + axis + ".bias",
                      BasicTensor<T>(Shape{bins}, std::move(b), true));
        }
    }

    const NetConfig& config() const { return config_; }
    std::span<BasicTensor<T>> parameters() { return params_; }
    std::span<const BasicTensor<T>> parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    /// Trunk parameters come first, then (weight, bias) per head in yaw/pitch/roll order.
    std::span<BasicTensor<T>> trunk_parameters() {
        return std::span(params_).first(2 * config_.widths.size());
    }
    std::span<BasicTensor<T>> head_parameters() {
        return std::span(params_).subspan(2 * config_.widths.size());
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Flattened trunk output for an (B, 3, S, S) batch.
    BasicTensor<T> embed(const BasicTensor<T>& images) const {
        require(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == config_.input_size &&
                    images.dim(3) == config_.input_size,
                ErrorKind::shape,
                "forward expects (B,3," + std::to_string(config_.input_size) + "," +
                    std::to_string(config_.input_size) + "), got " + shape_str(images.shape()));
        BasicTensor<T> x = images;
        for (std::size_t s = 0; s < config_.widths.size(); ++s)
            x = relu(conv2d(x, params_[2 * s], params_[2 * s + 1], config_.stride, config_.padding));
        return flatten(x);
    }

    /// Three heads applied to an existing latent batch.
    std::array<BasicTensor<T>, 3> heads(const BasicTensor<T>& latent) const {
        const std::size_t base = 2 * config_.widths.size();
        std::array<BasicTensor<T>, 3> out;
        for (std::size_t a = 0; a < 3; ++a)
            out[a] = linear(latent, params_[base + 2 * a], params_[base + 2 * a + 1]);
        return out;
    }

    NetOutput<T> forward(const BasicTensor<T>& images) const {
        NetOutput<T> out;
        out.latent = embed(images);
        out.logits = heads(out.latent);
        return out;
    }

    /// Replaces parameter values (used when loading checkpoints).
    void load_values(std::span<const std::vector<double>> values) {
        require(values.size() == params_.size(), ErrorKind::format,
                "parameter count mismatch while loading network");
        for (std::size_t k = 0; k < params_.size(); ++k) {
            require(values[k].size() == params_[k].size(), ErrorKind::format,
                    "parameter " + names_[k] + " has wrong length");
            auto dst = params_[k].mutable_data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[k][i]);
        }
    }

private:
    void add_param(std::string name, BasicTensor<T> t) {
        names_.push_back(std::move(name));
        params_.push_back(std::move(t));
    }

    NetConfig config_;
    std::vector<BasicTensor<T>> params_;
    std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Loss assembly

template <class T>
struct AngleLoss {
    BasicTensor<T> total;
    T classification{};
    T regression{};
};

/// Classification plus alpha-weighted squared angle error for one head,
/// both averaged over the batch.
template <class T>
AngleLoss<T> angle_loss(const BasicTensor<T>& logits, std::span<const double> gt_degrees,
                        const BinSpec& spec, double alpha) {
    require(logits.rank() == 2 && logits.dim(1) == spec.count, ErrorKind::shape,
            "angle_loss: logits must be (B," + std::to_string(spec.count) + ")");
    require(gt_degrees.size() == logits.dim(0), ErrorKind::shape,
            "angle_loss: one ground-truth angle per row required");
    std::vector<std::size_t> bins(gt_degrees.size());
    std::vector<T> gt(gt_degrees.size());
    for (std::size_t i = 0; i < bins.size(); ++i) {
        bins[i] = bin_label(gt_degrees[i], spec);
        gt[i] = static_cast<T>(gt_degrees[i]);
    }
    const auto probs = softmax(logits);
    const auto cls = cross_entropy(probs, std::span<const std::size_t>(bins));
    const std::size_t batch = gt.size();
    const BasicTensor<T> target(Shape{batch}, std::move(gt));
    const auto reg = mse(expected_angle(probs, spec.width), target);
    AngleLoss<T> out;
    out.classification = cls.item();
    out.regression = reg.item();
    out.total = alpha == 0.0 ? cls : add(cls, scale(reg, static_cast<T>(alpha)));
    return out;
}

/// (1 - beta) * (yaw + pitch + roll) + beta * mse(latent_pred, latent_gt).
/// At beta == 0 the latent term is not built; at beta == 1 the angle terms are not.
template <class T>
BasicTensor<T> total_loss(const BasicTensor<T>& yaw, const BasicTensor<T>& pitch,
                          const BasicTensor<T>& roll, const BasicTensor<T>& latent_pred,
                          const BasicTensor<T>& latent_gt, double beta) {
    require(beta >= 0.0 && beta <= 1.0, ErrorKind::contract, "total_loss: beta outside [0,1]");
    if (beta == 0.0) return add(add(yaw, pitch), roll);
    const auto latent = mse(latent_pred, latent_gt);
    if (beta == 1.0) return latent;
    return add(scale(add(add(yaw, pitch), roll), static_cast<T>(1.0 - beta)),
               scale(latent, static_cast<T>(beta)));
}

/// Decodes one row of each head's logits into degrees.
template <class T>
std::vector<EulerPose> decode_poses(const std::array<BasicTensor<T>, 3>& logits,
                                    const BinSpec& spec) {
    NoGradGuard guard;
    std::vector<EulerPose> poses(logits[0].dim(0));
    for (std::size_t a = 0; a < 3; ++a) {
        require(logits[a].rank() == 2 && logits[a].dim(1) == spec.count &&
                    logits[a].dim(0) == poses.size(),
                ErrorKind::shape, "decode_poses: inconsistent head outputs");
        const auto angles = expected_angle(softmax(logits[a]), spec.width);
        for (std::size_t i = 0; i < poses.size(); ++i) poses[i][a] = static_cast<double>(angles[i]);
    }
    return poses;
}

template <class T>
std::vector<EulerPose> predict(const PoseNet<T>& net, const BasicTensor<T>& images) {
    NoGradGuard guard;
    return decode_poses(net.forward(images).logits, net.config().bins);
}

} // namespace occludere
