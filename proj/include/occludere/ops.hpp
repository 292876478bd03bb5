#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "occludere/tensor.hpp"

namespace occludere {

/// Floor applied to probabilities before the logarithm in cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), ErrorKind::shape,
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

template <class T>
void accumulate(Node<T>& parent, std::span<const T> delta) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() != parent.data.size()) parent.grad.assign(parent.data.size(), T{0});
    for (std::size_t i = 0; i < delta.size(); ++i) parent.grad[i] += delta[i];
}

/// (rows, cols) view of a rank-1 or rank-2 tensor; rank-1 is a single row.
template <class T>
std::pair<std::size_t, std::size_t> as_rows(const BasicTensor<T>& x, const char* op) {
    require(x.rank() == 1 || x.rank() == 2, ErrorKind::shape,
            std::string(op) + ": expected rank 1 or 2, got " + shape_str(x.shape()));
    if (x.rank() == 1) return {1, x.dim(0)};
    return {x.dim(0), x.dim(1)};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        detail::accumulate<T>(*self.parents[0], self.grad);
        detail::accumulate<T>(*self.parents[1], self.grad);
    });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        detail::accumulate<T>(*self.parents[0], self.grad);
        std::vector<T> neg(self.grad.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
        detail::accumulate<T>(*self.parents[1], neg);
    });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        std::vector<T> da(self.grad.size()), db(self.grad.size());
        for (std::size_t i = 0; i < da.size(); ++i) {
            da[i] = self.grad[i] * pb.data[i];
            db[i] = self.grad[i] * pa.data[i];
        }
        detail::accumulate<T>(pa, da);
        detail::accumulate<T>(pb, db);
    });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a},
                                   [factor](detail::Node<T>& self) {
                                       std::vector<T> d(self.grad.size());
                                       for (std::size_t i = 0; i < d.size(); ++i)
                                           d[i] = self.grad[i] * factor;
                                       detail::accumulate<T>(*self.parents[0], d);
                                   });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T total{0};
    for (auto v : a.data()) total += v;
    return BasicTensor<T>::from_op(Shape{1}, {total}, {a}, [](detail::Node<T>& self) {
        std::vector<T> d(self.parents[0]->data.size(), self.grad[0]);
        detail::accumulate<T>(*self.parents[0], d);
    });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    require(numel(shape) == a.size(), ErrorKind::shape,
            "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return BasicTensor<T>::from_op(std::move(shape), std::move(out), {a},
                                   [](detail::Node<T>& self) {
                                       detail::accumulate<T>(*self.parents[0], self.grad);
                                   });
}

/// Collapses every extent after the first: (N, ...) -> (N, prod(...)).
template <class T>
BasicTensor<T> flatten(const BasicTensor<T>& a) {
    return reshape(a, Shape{a.dim(0), a.size() / a.dim(0)});
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> d(self.grad.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = p.data[i] > T{0} ? self.grad[i] : T{0};
        detail::accumulate<T>(p, d);
    });
}

// ---------------------------------------------------------------------------
// Layers

/// Fully-connected layer: y = x W^T + b with x (B, in), W (out, in), b (out).
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
    require(x.rank() == 2 && weight.rank() == 2 && bias.rank() == 1, ErrorKind::shape,
            "linear expects x (B,in), W (out,in), b (out)");
    const std::size_t batch = x.dim(0), in = x.dim(1), outs = weight.dim(0);
    require(weight.dim(1) == in && bias.dim(0) == outs, ErrorKind::shape,
            "linear: inconsistent shapes " + shape_str(x.shape()) + " " +
                shape_str(weight.shape()) + " " + shape_str(bias.shape()));
    using namespace detail;
    std::vector<T> out(batch * outs);
    {
        ConstMatMap<T> X(x.data().data(), batch, in);
        ConstMatMap<T> W(weight.data().data(), outs, in);
        MatMap<T> Y(out.data(), batch, outs);
        Y.noalias() = X * W.transpose();
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t c = 0; c < outs; ++c) Y(r, c) += bias[c];
    }
    return BasicTensor<T>::from_op(
        Shape{batch, outs}, std::move(out), {x, weight, bias},
        [batch, in, outs](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            ConstMatMap<T> dY(self.grad.data(), batch, outs);
            if (px.requires_grad) {
                if (px.grad.size() != px.data.size()) px.grad.assign(px.data.size(), T{0});
                MatMap<T> dX(px.grad.data(), batch, in);
                dX.noalias() += dY * ConstMatMap<T>(pw.data.data(), outs, in);
            }
            if (pw.requires_grad) {
                if (pw.grad.size() != pw.data.size()) pw.grad.assign(pw.data.size(), T{0});
                MatMap<T> dW(pw.grad.data(), outs, in);
                dW.noalias() += dY.transpose() * ConstMatMap<T>(px.data.data(), batch, in);
            }
            if (pb.requires_grad) {
                if (pb.grad.size() != pb.data.size()) pb.grad.assign(pb.data.size(), T{0});
                for (std::size_t r = 0; r < batch; ++r)
                    for (std::size_t c = 0; c < outs; ++c) pb.grad[c] += dY(r, c);
            }
        });
}

struct Conv2dGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h * out_w; }
};

inline Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride,
                                      std::size_t padding) {
    require(input.size() == 4 && kernel.size() == 4, ErrorKind::shape,
            "conv2d expects NCHW input and OIHW kernel");
    require(stride >= 1, ErrorKind::shape, "conv2d: stride must be >= 1");
    require(kernel[1] == input[1], ErrorKind::shape,
            "conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, got " +
                std::to_string(input[1]));
    Conv2dGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3],
                     stride, padding, 0, 0};
    const auto span_h = static_cast<long>(g.height + 2 * padding) - static_cast<long>(g.kernel_h);
    const auto span_w = static_cast<long>(g.width + 2 * padding) - static_cast<long>(g.kernel_w);
    require(span_h >= 0 && span_w >= 0, ErrorKind::shape, "conv2d: kernel larger than input");
    g.out_h = static_cast<std::size_t>(span_h) / stride + 1;
    g.out_w = static_cast<std::size_t>(span_w) / stride + 1;
    return g;
}

namespace detail {

// cols is (patch, batch * positions), row-major.
template <class T>
void im2col(const Conv2dGeometry& g, const T* input, T* cols) {
    const std::size_t total = g.batch * g.positions();
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                T* row = cols + ((c * g.kernel_h + kh) * g.kernel_w + kw) * total;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const T* plane = input + (n * g.in_channels + c) * g.height * g.width;
                    T* dst = row + n * g.positions();
                    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                        const long ih = static_cast<long>(oh * g.stride + kh) -
                                        static_cast<long>(g.padding);
                        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                            const long iw = static_cast<long>(ow * g.stride + kw) -
                                            static_cast<long>(g.padding);
                            const bool inside = ih >= 0 && iw >= 0 &&
                                                ih < static_cast<long>(g.height) &&
                                                iw < static_cast<long>(g.width);
                            dst[oh * g.out_w + ow] =
                                inside ? plane[static_cast<std::size_t>(ih) * g.width +
                                               static_cast<std::size_t>(iw)]
                                       : T{0};
                        }
                    }
                }
            }
}

template <class T>
void col2im_add(const Conv2dGeometry& g, const T* cols, T* input_grad) {
    const std::size_t total = g.batch * g.positions();
    for (std::size_t c = 0; c < g.in_channels; ++c)
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const T* row = cols + ((c * g.kernel_h + kh) * g.kernel_w + kw) * total;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    T* plane = input_grad + (n * g.in_channels + c) * g.height * g.width;
                    const T* src = row + n * g.positions();
                    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                        const long ih = static_cast<long>(oh * g.stride + kh) -
                                        static_cast<long>(g.padding);
                        if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
                        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                            const long iw = static_cast<long>(ow * g.stride + kw) -
                                            static_cast<long>(g.padding);
                            if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
                            plane[static_cast<std::size_t>(ih) * g.width +
                                  static_cast<std::size_t>(iw)] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
}

} // namespace detail

/// 2-D cross-correlation over NCHW input with an OIHW kernel and per-output-channel bias.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::size_t stride = 1,
                      std::size_t padding = 0) {
    const Conv2dGeometry g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding);
    require(bias.rank() == 1 && bias.dim(0) == g.out_channels, ErrorKind::shape,
            "conv2d: bias must have one entry per output channel");
    using namespace detail;
    const std::size_t total = g.batch * g.positions();
    auto cols = std::make_shared<std::vector<T>>(g.patch() * total);
    im2col(g, input.data().data(), cols->data());

    RowMat<T> product(g.out_channels, total);
    product.noalias() = ConstMatMap<T>(kernel.data().data(), g.out_channels, g.patch()) *
                        ConstMatMap<T>(cols->data(), g.patch(), total);

    std::vector<T> out(g.batch * g.out_channels * g.positions());
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            T* dst = out.data() + (n * g.out_channels + o) * g.positions();
            const T* src = product.data() + o * total + n * g.positions();
            for (std::size_t p = 0; p < g.positions(); ++p) dst[p] = src[p] + bias[o];
        }

    return BasicTensor<T>::from_op(
        Shape{g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
        [g, cols, total](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pb = *self.parents[2];
            RowMat<T> dY(g.out_channels, total);
            for (std::size_t n = 0; n < g.batch; ++n)
                for (std::size_t o = 0; o < g.out_channels; ++o) {
                    const T* src = self.grad.data() + (n * g.out_channels + o) * g.positions();
                    T* dst = dY.data() + o * total + n * g.positions();
                    std::copy(src, src + g.positions(), dst);
                }
            if (pk.requires_grad) {
                if (pk.grad.size() != pk.data.size()) pk.grad.assign(pk.data.size(), T{0});
                MatMap<T> dK(pk.grad.data(), g.out_channels, g.patch());
                dK.noalias() += dY * ConstMatMap<T>(cols->data(), g.patch(), total).transpose();
            }
            if (pb.requires_grad) {
                if (pb.grad.size() != pb.data.size()) pb.grad.assign(pb.data.size(), T{0});
                for (std::size_t o = 0; o < g.out_channels; ++o) pb.grad[o] += dY.row(o).sum();
            }
            if (px.requires_grad) {
                if (px.grad.size() != px.data.size()) px.grad.assign(px.data.size(), T{0});
                RowMat<T> dcols(g.patch(), total);
                dcols.noalias() =
                    ConstMatMap<T>(pk.data.data(), g.out_channels, g.patch()).transpose() * dY;
                col2im_add(g, dcols.data(), px.grad.data());
            }
        });
}

/// Max pooling over NCHW input, no padding.
template <class T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride) {
    require(input.rank() == 4, ErrorKind::shape, "max_pool2d expects NCHW input");
    require(window >= 1 && stride >= 1, ErrorKind::shape, "max_pool2d: window/stride >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(h >= window && w >= window, ErrorKind::shape, "max_pool2d: window exceeds input");
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    std::vector<T> out(n * c * oh * ow);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const auto src = input.data();
    for (std::size_t plane = 0; plane < n * c; ++plane)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best = plane * h * w + (y * stride) * w + x * stride;
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = plane * h * w + (y * stride + dy) * w + x * stride + dx;
                        if (src[idx] > src[best]) best = idx;
                    }
                const std::size_t o = (plane * oh + y) * ow + x;
                out[o] = src[best];
                (*argmax)[o] = best;
            }
    return BasicTensor<T>::from_op(Shape{n, c, oh, ow}, std::move(out), {input},
                                   [argmax](detail::Node<T>& self) {
                                       auto& p = *self.parents[0];
                                       std::vector<T> d(p.data.size(), T{0});
                                       for (std::size_t o = 0; o < self.grad.size(); ++o)
                                           d[(*argmax)[o]] += self.grad[o];
                                       detail::accumulate<T>(p, d);
                                   });
}

// ---------------------------------------------------------------------------
// Probability and loss terms

/// Row-wise softmax over the last extent of a rank-1 or rank-2 tensor,
/// stabilized by subtracting the row maximum.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
    const auto [rows, cols] = detail::as_rows(logits, "softmax");
    const auto in = logits.data();
    for (auto v : in)
        require(std::isfinite(v), ErrorKind::invalid_input, "softmax: non-finite logit");
    std::vector<T> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = in.data() + r * cols;
        T* y = out.data() + r * cols;
        const T peak = *std::max_element(x, x + cols);
        T total{0};
        for (std::size_t i = 0; i < cols; ++i) total += (y[i] = std::exp(x[i] - peak));
        for (std::size_t i = 0; i < cols; ++i) y[i] /= total;
    }
    return BasicTensor<T>::from_op(
        logits.shape(), std::move(out), {logits}, [rows, cols](detail::Node<T>& self) {
            std::vector<T> d(self.grad.size());
            for (std::size_t r = 0; r < rows; ++r) {
                const T* s = self.data.data() + r * cols;
                const T* g = self.grad.data() + r * cols;
                T dot{0};
                for (std::size_t i = 0; i < cols; ++i) dot += s[i] * g[i];
                for (std::size_t i = 0; i < cols; ++i) d[r * cols + i] = s[i] * (g[i] - dot);
            }
            detail::accumulate<T>(*self.parents[0], d);
        });
}

/// Mean over the batch of -log(max(p[target], floor)). A rank-1 input is a batch of one.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::span<const std::size_t> targets) {
    const auto [rows, cols] = detail::as_rows(probs, "cross_entropy");
    require(targets.size() == rows, ErrorKind::shape,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                std::to_string(rows) + " rows");
    for (auto t : targets)
        require(t < cols, ErrorKind::index,
                "cross_entropy: target bin " + std::to_string(t) + " outside [0," +
                    std::to_string(cols) + ")");
    const T floor = static_cast<T>(kProbabilityFloor);
    T total{0};
    for (std::size_t r = 0; r < rows; ++r)
        total -= std::log(std::max(probs[r * cols + targets[r]], floor));
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return BasicTensor<T>::from_op(
        Shape{1}, {total / static_cast<T>(rows)}, {probs},
        [rows, cols, floor, tgt = std::move(tgt)](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            std::vector<T> d(p.data.size(), T{0});
            for (std::size_t r = 0; r < rows; ++r) {
                const T v = p.data[r * cols + tgt[r]];
                if (v > floor) d[r * cols + tgt[r]] = -self.grad[0] / (static_cast<T>(rows) * v);
            }
            detail::accumulate<T>(p, d);
        });
}

template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& probs, std::size_t target) {
    return cross_entropy(probs, std::span<const std::size_t>(&target, 1));
}

/// Mean of squared elementwise differences.
template <class T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    detail::require_same_shape(a, b, "mse");
    T total{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T diff = a[i] - b[i];
        total += diff * diff;
    }
    const T count = static_cast<T>(a.size());
    return BasicTensor<T>::from_op(Shape{1}, {total / count}, {a, b},
                                   [count](detail::Node<T>& self) {
                                       auto& pa = *self.parents[0];
                                       auto& pb = *self.parents[1];
                                       std::vector<T> da(pa.data.size()), db(pa.data.size());
                                       const T k = T{2} * self.grad[0] / count;
                                       for (std::size_t i = 0; i < da.size(); ++i) {
                                           da[i] = k * (pa.data[i] - pb.data[i]);
                                           db[i] = -da[i];
                                       }
                                       detail::accumulate<T>(pa, da);
                                       detail::accumulate<T>(pb, db);
                                   });
}

/// Probability-weighted bin-centre angle per row: width * sum_i p_i (i - (1+N)/2), i 1-based.
/// Output has one entry per row.
template <class T>
BasicTensor<T> expected_angle(const BasicTensor<T>& probs, double bin_width) {
    const auto [rows, cols] = detail::as_rows(probs, "expected_angle");
    std::vector<T> weights(cols);
    const double offset = (1.0 + static_cast<double>(cols)) / 2.0;
    for (std::size_t i = 0; i < cols; ++i)
        weights[i] = static_cast<T>(bin_width * (static_cast<double>(i + 1) - offset));
    std::vector<T> out(rows, T{0});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < cols; ++i) out[r] += probs[r * cols + i] * weights[i];
    return BasicTensor<T>::from_op(
        Shape{rows}, std::move(out), {probs},
        [rows, cols, weights = std::move(weights)](detail::Node<T>& self) {
            std::vector<T> d(rows * cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < cols; ++i) d[r * cols + i] = self.grad[r] * weights[i];
            detail::accumulate<T>(*self.parents[0], d);
        });
}

} // namespace occludere
