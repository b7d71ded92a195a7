#pragma once

// Central finite-difference verification of every layer's input VJP and of the
// full backward pass, on random weights and inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "elf/netgraph.hpp"
#include "elf/ops.hpp"

namespace elf {

struct GradcheckOptions {
    double step = 1e-6;
    double tolerance = 1e-6;
    std::size_t max_coords = 48;      // coordinates probed per check
    std::size_t height = 0, width = 0; // input size, 0 = smallest power of two >= 16 that fits the graph
    double corrupt_conv_vjp = 1.0;    // test hook: scales every conv VJP when != 1
};

struct LayerCheck {
    std::string layer;
    std::string kind;
    double max_rel_error = 0.0;    // max |fd - vjp| over probes / max |vjp| over probes
    double max_entry_error = 0.0;  // worst per-probe relative_error, for diagnostics
    std::size_t probes = 0;
    bool passed = true;
};

struct GradcheckReport {
    std::size_t height = 0, width = 0;
    std::vector<LayerCheck> layers;
    LayerCheck chain;  // backward pass through the whole graph seeded with F
    bool passed = true;
};

inline double relative_error(double a, double b) {
    const double d = std::abs(a - b);
    if (d == 0.0) return 0.0;
    return d / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace detail {

inline const char* kind_name(const LayerSpec& l) {
    if (std::holds_alternative<ConvLayer>(l.op)) return "conv";
    if (std::holds_alternative<ReluLayer>(l.op)) return "relu";
    return "maxpool";
}

inline Tensor apply_layer(const LayerSpec& l, const WeightArchive& a, const Tensor& x) {
    if (const auto* c = std::get_if<ConvLayer>(&l.op)) {
        const auto& p = a.at(l.name);
        return conv2d_forward(x, p.weights, p.bias, c->stride, c->pad);
    }
    if (std::holds_alternative<ReluLayer>(l.op)) return relu_forward(x);
    const auto& m = std::get<MaxPoolLayer>(l.op);
    return maxpool_forward(x, m.k, m.stride).output;
}

inline std::vector<std::size_t> probe_coords(std::size_t n, std::size_t max, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n > max) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(max);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

// sum_j g_j (f_j(x + h e_k) - f_j(x - h e_k)) / 2h, differencing before summing
// so outputs outside the receptive field cancel exactly.
template <typename F>
double directional_fd(F&& f, Tensor x, std::size_t k, const Tensor& g, double h) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const Tensor plus = f(x);
    x[k] = x0 - h;
    const Tensor minus = f(x);
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) s += g[j] * (plus[j] - minus[j]);
    return s / (2.0 * h);
}

// True when x[k] is within `tol` of another value in some pooling window that
// contains it and competes for that window's maximum.
inline bool near_pool_tie(const Tensor& x, std::size_t k, const MaxPoolLayer& m, double tol) {
    const std::size_t h = x.height(), w = x.width();
    const std::size_t c = k / (h * w), y = (k / w) % h, xx = k % w;
    const std::size_t oh = (h - m.k) / m.stride + 1, ow = (w - m.k) / m.stride + 1;
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t y0 = oy * m.stride, x0 = ox * m.stride;
            if (y < y0 || y >= y0 + m.k || xx < x0 || xx >= x0 + m.k) continue;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m.k; ++i)
                for (std::size_t j = 0; j < m.k; ++j) best = std::max(best, x.at(c, y0 + i, x0 + j));
            if (x[k] < best - tol) continue;
            for (std::size_t i = 0; i < m.k; ++i)
                for (std::size_t j = 0; j < m.k; ++j) {
                    const std::size_t idx = (c * h + y0 + i) * w + x0 + j;
                    if (idx != k && std::abs(x[idx] - x[k]) <= tol) return true;
                }
        }
    return false;
}

inline std::size_t default_extent(const NetGraph& g) {
    for (std::size_t n = 16; n <= 1024; n *= 2) {
        try {
            Dims d{g.input_channels, n, n};
            for (std::size_t i = 0; i < g.layers.size(); ++i) {
                if (const auto* c = std::get_if<ConvLayer>(&g.layers[i].op)) {
                    d = {c->out_channels, conv_out_extent(d[1], c->kh, c->stride, c->pad),
                         conv_out_extent(d[2], c->kw, c->stride, c->pad)};
                } else if (const auto* m = std::get_if<MaxPoolLayer>(&g.layers[i].op)) {
                    if (m->k > d[1] || m->k > d[2]) throw ShapeError("too small");
                    d = {d[0], (d[1] - m->k) / m->stride + 1, (d[2] - m->k) / m->stride + 1};
                }
            }
            return n;
        } catch (const ShapeError&) {
        }
    }
    throw ShapeError("gradcheck: graph needs inputs larger than 1024 pixels");
}

}  // namespace detail

/// Check every layer VJP in mask mode and the full-graph backward pass.
///
/// Errors are taken against the largest probed gradient entry: single entries
/// can fall below the rounding noise of a step-1e-6 central difference.
inline GradcheckReport run_gradcheck(const NetGraph& g, std::uint64_t seed, const GradcheckOptions& opt = {}) {
    std::mt19937_64 rng(seed);
    const WeightArchive archive = random_archive(g, seed ^ 0x9e3779b97f4a7c15ULL);
    GradcheckReport rep;
    rep.height = opt.height ? opt.height : detail::default_extent(g);
    rep.width = opt.width ? opt.width : rep.height;

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Tensor x({g.input_channels, rep.height, rep.width});
    for (double& v : x.data()) v = 128.0 + 100.0 * unit(rng);
    x = preprocess(g, x);

    for (const auto& layer : g.layers) {
        LayerCheck lc{layer.name, detail::kind_name(layer)};
        const Tensor y = detail::apply_layer(layer, archive, x);
        Tensor cot(y.dims());
        for (double& v : cot.data()) v = unit(rng);

        Tensor analytic;
        if (const auto* c = std::get_if<ConvLayer>(&layer.op)) {
            analytic = conv2d_vjp_input(cot, archive.at(layer.name).weights, c->stride, c->pad, x.dims());
            if (opt.corrupt_conv_vjp != 1.0)
                for (double& v : analytic.data()) v *= opt.corrupt_conv_vjp;
        } else if (std::holds_alternative<ReluLayer>(layer.op)) {
            analytic = relu_vjp(cot, x, ReluMode::mask);
        } else {
            const auto& m = std::get<MaxPoolLayer>(layer.op);
            analytic = maxpool_vjp(cot, maxpool_forward(x, m.k, m.stride).argmax, x.dims());
        }

        auto f = [&](const Tensor& in) { return detail::apply_layer(layer, archive, in); };
        double max_diff = 0.0, max_grad = 1e-8;
        for (std::size_t k : detail::probe_coords(x.size(), opt.max_coords, rng)) {
            // Finite differences are meaningless across the rectifier kink.
            if (lc.kind == "relu" && std::abs(x[k]) <= 4.0 * opt.step) continue;
            if (const auto* m = std::get_if<MaxPoolLayer>(&layer.op); m && detail::near_pool_tie(x, k, *m, 4.0 * opt.step))
                continue;
            const double fd = detail::directional_fd(f, x, k, cot, opt.step);
            max_diff = std::max(max_diff, std::abs(fd - analytic[k]));
            max_grad = std::max(max_grad, std::abs(analytic[k]));
            lc.max_entry_error = std::max(lc.max_entry_error, relative_error(fd, analytic[k]));
            ++lc.probes;
        }
        lc.max_rel_error = max_diff / max_grad;
        lc.passed = lc.max_rel_error < opt.tolerance;
        rep.passed = rep.passed && lc.passed;
        rep.layers.push_back(lc);
        x = y;
    }

    // Whole chain, seeded with the final feature map as the saliency does.
    if (!g.layers.empty()) {
        Tensor image({g.input_channels, rep.height, rep.width});
        for (double& v : image.data()) v = 128.0 + 100.0 * unit(rng);
        const std::string last = g.layers.back().name;
        auto fwd = forward_to(g, archive, image, last);
        Tensor grad = backward(g, archive, fwd.tape, fwd.feature, ReluMode::mask);
        if (opt.corrupt_conv_vjp != 1.0)
            for (double& v : grad.data()) v *= opt.corrupt_conv_vjp;
        auto f = [&](const Tensor& in) { return forward_to(g, archive, in, last).feature; };
        rep.chain = {"<chain>", "chain"};
        double max_diff = 0.0, max_grad = 1e-8;
        for (std::size_t k : detail::probe_coords(image.size(), opt.max_coords, rng)) {
            const double fd = detail::directional_fd(f, image, k, fwd.feature, opt.step);
            max_diff = std::max(max_diff, std::abs(fd - grad[k]));
            max_grad = std::max(max_grad, std::abs(grad[k]));
            ++rep.chain.probes;
        }
        rep.chain.max_rel_error = max_diff / max_grad;
        rep.chain.passed = rep.chain.max_rel_error < 1e-5;
        rep.passed = rep.passed && rep.chain.passed;
    }
    return rep;
}

}  // namespace elf
