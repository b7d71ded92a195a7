#pragma once

// Layer kernels (forward and input vector-Jacobian products) and image filters.
//
// All kernels are serial and accumulate every output element in a fixed order,
// so results are bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "elf/tensor.hpp"

namespace elf {

/// Backward rule for rectifiers. `mask` is the true derivative; `identity`
/// forwards the cotangent untouched, which is what the saliency map uses.
enum class ReluMode { mask, identity };

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ShapeError("stride must be >= 1");
    if (in + 2 * pad < k)
        throw ShapeError("kernel extent " + std::to_string(k) + " exceeds padded input " +
                         std::to_string(in + 2 * pad));
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Range of output positions [lo, hi) whose input tap o*stride - pad + k falls inside [0, in).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t out, std::ptrdiff_t in,
                                                            std::ptrdiff_t k, std::ptrdiff_t stride,
                                                            std::ptrdiff_t pad) {
    std::ptrdiff_t lo = 0;
    if (pad > k) lo = (pad - k + stride - 1) / stride;
    std::ptrdiff_t hi = (in - 1 + pad - k) >= 0 ? (in - 1 + pad - k) / stride + 1 : 0;
    hi = std::min(hi, out);
    return {std::min(lo, hi), hi};
}

inline void check_conv_args(const Tensor& weights, std::size_t in_channels) {
    require_rank(weights, 4, "conv2d weights");
    if (weights.dim(1) != in_channels)
        throw ShapeError("conv2d: weights expect " + std::to_string(weights.dim(1)) + " input channels, got " +
                         std::to_string(in_channels));
}

}  // namespace detail

/// Zero-padded cross-correlation. `bias` may be empty (treated as zeros).
inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights, std::span<const double> bias,
                             std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "conv2d input");
    detail::check_conv_args(weights, input.channels());
    const std::size_t out_c = weights.dim(0), in_c = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
    if (!bias.empty() && bias.size() != out_c)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " vs " + std::to_string(out_c) +
                         " filters");
    const std::size_t h = input.height(), w = input.width();
    const std::size_t oh = conv_out_extent(h, kh, stride, pad);
    const std::size_t ow = conv_out_extent(w, kw, stride, pad);

    Tensor out({out_c, oh, ow});
    const auto s = static_cast<std::ptrdiff_t>(stride), p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t o = 0; o < out_c; ++o) {
        double* dst = out.raw() + o * oh * ow;
        std::fill(dst, dst + oh * ow, bias.empty() ? 0.0 : bias[o]);
        for (std::size_t c = 0; c < in_c; ++c) {
            const double* src = input.raw() + c * h * w;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(oh, h, ky, s, p);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = weights.at(o, c, ky, kx);
                    if (wv == 0.0) continue;
                    auto [x0, x1] = detail::valid_range(ow, w, kx, s, p);
                    for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                        const std::ptrdiff_t iy = oy * s - p + static_cast<std::ptrdiff_t>(ky);
                        double* drow = dst + oy * ow;
                        const double* srow = src + iy * static_cast<std::ptrdiff_t>(w) - p +
                                             static_cast<std::ptrdiff_t>(kx);
                        if (stride == 1) {
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) drow[ox] += wv * srow[ox];
                        } else {
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) drow[ox] += wv * srow[ox * s];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// d<cotangent, conv(input)>/d input: transposed convolution of the cotangent with the weights.
inline Tensor conv2d_vjp_input(const Tensor& cotangent, const Tensor& weights, std::size_t stride, std::size_t pad,
                               const Dims& input_dims) {
    require_rank(cotangent, 3, "conv2d cotangent");
    if (input_dims.size() != 3) throw ShapeError("conv2d_vjp_input: input dims must be rank 3");
    Tensor grad(input_dims);
    detail::check_conv_args(weights, grad.channels());
    const std::size_t out_c = weights.dim(0), in_c = weights.dim(1), kh = weights.dim(2), kw = weights.dim(3);
    const std::size_t h = grad.height(), w = grad.width();
    const std::size_t oh = conv_out_extent(h, kh, stride, pad);
    const std::size_t ow = conv_out_extent(w, kw, stride, pad);
    if (cotangent.dims() != Dims{out_c, oh, ow})
        throw ShapeError("conv2d_vjp_input: cotangent " + to_string(cotangent.dims()) + " does not match output " +
                         to_string({out_c, oh, ow}));

    const auto s = static_cast<std::ptrdiff_t>(stride), p = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t c = 0; c < in_c; ++c) {
        double* dst = grad.raw() + c * h * w;
        for (std::size_t o = 0; o < out_c; ++o) {
            const double* g = cotangent.raw() + o * oh * ow;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                auto [y0, y1] = detail::valid_range(oh, h, ky, s, p);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = weights.at(o, c, ky, kx);
                    if (wv == 0.0) continue;
                    auto [x0, x1] = detail::valid_range(ow, w, kx, s, p);
                    for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                        const std::ptrdiff_t iy = oy * s - p + static_cast<std::ptrdiff_t>(ky);
                        const double* grow = g + oy * ow;
                        double* drow = dst + iy * static_cast<std::ptrdiff_t>(w) - p + static_cast<std::ptrdiff_t>(kx);
                        if (stride == 1) {
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) drow[ox] += wv * grow[ox];
                        } else {
                            for (std::ptrdiff_t ox = x0; ox < x1; ++ox) drow[ox * s] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
    return grad;
}

inline Tensor relu_forward(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

inline Tensor relu_vjp(const Tensor& cotangent, const Tensor& forward_input, ReluMode mode) {
    require_same_dims(cotangent, forward_input, "relu_vjp");
    Tensor grad = cotangent;
    if (mode == ReluMode::mask) {
        auto x = forward_input.data();
        auto g = grad.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x[i] > 0.0)) g[i] = 0.0;
    }
    return grad;
}

struct MaxPoolResult {
    Tensor output;
    /// Flat index into the input of the element chosen for each output element.
    std::vector<std::size_t> argmax;
};

/// Unpadded max pooling. Ties go to the lowest flat index in the window.
inline MaxPoolResult maxpool_forward(const Tensor& input, std::size_t k, std::size_t stride) {
    require_rank(input, 3, "maxpool input");
    if (k == 0 || stride == 0) throw ShapeError("maxpool: window and stride must be >= 1");
    const std::size_t ch = input.channels(), h = input.height(), w = input.width();
    if (k > h || k > w)
        throw ShapeError("maxpool: window " + std::to_string(k) + " exceeds input " + to_string(input.dims()));
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;

    MaxPoolResult r{Tensor({ch, oh, ow}), std::vector<std::size_t>(ch * oh * ow)};
    std::size_t n = 0;
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox, ++n) {
                std::size_t best = (c * h + oy * stride) * w + ox * stride;
                double best_v = input[best];
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t idx = (c * h + oy * stride + ky) * w + ox * stride + kx;
                        if (input[idx] > best_v) {
                            best_v = input[idx];
                            best = idx;
                        }
                    }
                r.output[n] = best_v;
                r.argmax[n] = best;
            }
    return r;
}

inline Tensor maxpool_vjp(const Tensor& cotangent, std::span<const std::size_t> argmax, const Dims& input_dims) {
    if (argmax.size() != cotangent.size())
        throw ShapeError("maxpool_vjp: argmax length does not match cotangent");
    Tensor grad(input_dims);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= grad.size()) throw std::logic_error("maxpool_vjp: argmax index out of bounds");
        grad[argmax[i]] += cotangent[i];
    }
    return grad;
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

/// Normalized 1-D Gaussian taps, symmetric about (size-1)/2.
inline std::vector<double> gaussian_kernel(const GaussianSpec& spec) {
    spec.validate();
    const int c = (spec.size - 1) / 2;
    std::vector<double> k(static_cast<std::size_t>(spec.size));
    double sum = 0.0;
    for (int i = 0; i < spec.size; ++i) {
        const double d = i - c;
        k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * spec.sigma * spec.sigma));
    }
    // Sum from the outside in so mirrored taps contribute identically.
    for (int i = 0; i < c; ++i) sum += k[static_cast<std::size_t>(i)] + k[static_cast<std::size_t>(spec.size - 1 - i)];
    sum += k[static_cast<std::size_t>(c)];
    for (double& v : k) v /= sum;
    return k;
}

/// Separable Gaussian blur of every channel, reflect border.
inline Tensor gaussian_blur(const Tensor& map, const GaussianSpec& spec) {
    require_rank(map, 3, "gaussian_blur");
    const auto k = gaussian_kernel(spec);
    if (k.size() == 1) return map;
    const std::size_t ch = map.channels(), h = map.height(), w = map.width();
    const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);

    Tensor tmp(map.dims()), out(map.dims());
    std::vector<std::size_t> xi(w + 2 * static_cast<std::size_t>(r)), yi(h + 2 * static_cast<std::size_t>(r));
    for (std::ptrdiff_t i = -r; i < static_cast<std::ptrdiff_t>(w) + r; ++i) xi[i + r] = reflect_index(i, w);
    for (std::ptrdiff_t i = -r; i < static_cast<std::ptrdiff_t>(h) + r; ++i) yi[i + r] = reflect_index(i, h);

    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            const double* src = map.raw() + (c * h + y) * w;
            double* dst = tmp.raw() + (c * h + y) * w;
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k.size(); ++t) acc += k[t] * src[xi[x + t]];
                dst[x] = acc;
            }
        }
        for (std::size_t y = 0; y < h; ++y) {
            double* dst = out.raw() + (c * h + y) * w;
            for (std::size_t t = 0; t < k.size(); ++t) {
                const double* src = tmp.raw() + (c * h + yi[y + t]) * w;
                const double kt = k[t];
                for (std::size_t x = 0; x < w; ++x) dst[x] += kt * src[x];
            }
        }
    }
    return out;
}

/// 2-D cross-correlation of every channel with an odd-sized kernel, reflect border.
inline Tensor correlate_reflect(const Tensor& map, std::span<const double> kernel, std::size_t kh, std::size_t kw) {
    require_rank(map, 3, "correlate_reflect");
    if (kh % 2 == 0 || kw % 2 == 0 || kernel.size() != kh * kw)
        throw ShapeError("correlate_reflect: kernel must be odd-sized and match its extents");
    const std::size_t ch = map.channels(), h = map.height(), w = map.width();
    const auto ry = static_cast<std::ptrdiff_t>(kh / 2), rx = static_cast<std::ptrdiff_t>(kw / 2);
    Tensor out(map.dims());
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y + ky) - ry, h);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::size_t sx = reflect_index(static_cast<std::ptrdiff_t>(x + kx) - rx, w);
                        acc += kernel[ky * kw + kx] * map.at(c, sy, sx);
                    }
                }
                out.at(c, y, x) = acc;
            }
    return out;
}

/// Average over channels: C x H x W -> 1 x H x W.
inline Tensor channel_mean(const Tensor& t) {
    require_rank(t, 3, "channel_mean");
    const std::size_t ch = t.channels(), plane = t.height() * t.width();
    if (ch == 1) return t;
    Tensor out({1, t.height(), t.width()});
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < plane; ++i) out[i] += t[c * plane + i];
    for (double& v : out.data()) v /= static_cast<double>(ch);
    return out;
}

}  // namespace elf
