#pragma once

// Sequential CNN description, forward pass to a named layer, and the
// feature-map saliency |F^T dF/dI| computed with a single backward pass.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "elf/error.hpp"
#include "elf/ops.hpp"
#include "elf/tensor.hpp"
#include "elf/weights.hpp"

namespace elf {

struct ConvLayer {
    std::size_t out_channels = 1, kh = 1, kw = 1, stride = 1, pad = 0;
};
struct ReluLayer {};
struct MaxPoolLayer {
    std::size_t k = 2, stride = 2;
};

struct LayerSpec {
    std::string name;
    std::variant<ConvLayer, ReluLayer, MaxPoolLayer> op;

    bool is_conv() const { return std::holds_alternative<ConvLayer>(op); }
};

struct NetGraph {
    std::size_t input_channels = 3;
    std::vector<double> mean;   // per-channel, subtracted on ingest; empty = zeros
    std::vector<double> scale;  // one value or one per channel, applied after mean subtraction
    std::vector<LayerSpec> layers;

    /// Index of `name` in `layers`; throws std::out_of_range for unknown layers.
    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].name == name) return i;
        throw std::out_of_range("unknown layer '" + name + "'");
    }

    /// Channel count entering layer `i` (i == layers.size() gives the final output).
    std::size_t channels_before(std::size_t i) const {
        std::size_t c = input_channels;
        for (std::size_t j = 0; j < i && j < layers.size(); ++j)
            if (const auto* conv = std::get_if<ConvLayer>(&layers[j].op)) c = conv->out_channels;
        return c;
    }

    double mean_of(std::size_t c) const { return mean.empty() ? 0.0 : mean.size() == 1 ? mean[0] : mean[c]; }
    double scale_of(std::size_t c) const { return scale.empty() ? 1.0 : scale.size() == 1 ? scale[0] : scale[c]; }
};

namespace detail {

inline bool is_branching_kind(const std::string& kind) {
    for (const char* k : {"add", "concat", "split", "branch", "depthwise", "sepconv", "separable_conv", "residual"})
        if (kind == k) return true;
    return false;
}

inline std::size_t parse_count(const std::string& tok, std::size_t line, const std::string& what, bool allow_zero) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(line, "expected integer for " + what + ", got '" + tok + "'");
    }
    if (pos != tok.size()) throw ParseError(line, "expected integer for " + what + ", got '" + tok + "'");
    if (v < 0 || (v == 0 && !allow_zero)) throw ParseError(line, what + " must be " + (allow_zero ? ">= 0" : "> 0"));
    return static_cast<std::size_t>(v);
}

inline std::vector<double> parse_reals(const std::vector<std::string>& toks, std::size_t line) {
    std::vector<double> out;
    for (std::size_t i = 1; i < toks.size(); ++i) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(toks[i], &pos));
            if (pos != toks[i].size()) throw std::invalid_argument(toks[i]);
        } catch (const std::exception&) {
            throw ParseError(line, "expected a number, got '" + toks[i] + "'");
        }
    }
    return out;
}

}  // namespace detail

/// Parse the line-based architecture description.
///
/// ```
/// # comment
/// input 3
/// mean 123.68 116.779 103.939
/// scale 1
/// conv1_1 conv 64 3 3 1 1      # name conv OUT KH KW STRIDE PAD [IN]
/// relu1_1 relu
/// pool1   maxpool 2 2          # name maxpool K STRIDE
/// ```
inline NetGraph parse_arch(std::istream& in) {
    NetGraph g;
    bool have_input = false;
    std::size_t channels = 0;
    std::vector<std::pair<std::size_t, std::size_t>> declared_in;  // (layer index, line) for explicit IN
    std::vector<std::size_t> layer_lines;
    std::size_t mean_line = 0, scale_line = 0;

    std::string raw;
    for (std::size_t lineno = 1; std::getline(in, raw); ++lineno) {
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        std::istringstream ls(raw);
        std::vector<std::string> tok{std::istream_iterator<std::string>(ls), std::istream_iterator<std::string>()};
        if (tok.empty()) continue;

        if (tok[0] == "input") {
            if (tok.size() != 2) throw ParseError(lineno, "usage: input CHANNELS");
            if (!g.layers.empty()) throw ParseError(lineno, "input must precede the first layer");
            g.input_channels = detail::parse_count(tok[1], lineno, "input channels", false);
            have_input = true;
            continue;
        }
        if (tok[0] == "mean") {
            g.mean = detail::parse_reals(tok, lineno);
            mean_line = lineno;
            continue;
        }
        if (tok[0] == "scale") {
            g.scale = detail::parse_reals(tok, lineno);
            scale_line = lineno;
            continue;
        }
        if (tok.size() < 2) throw ParseError(lineno, "expected 'name kind params', got '" + tok[0] + "'");

        LayerSpec layer{tok[0], ReluLayer{}};
        const std::string& kind = tok[1];
        for (const auto& l : g.layers)
            if (l.name == layer.name) throw ParseError(lineno, "duplicate layer name '" + layer.name + "'");

        if (kind == "conv") {
            if (tok.size() != 7 && tok.size() != 8)
                throw ParseError(lineno, "usage: name conv OUT KH KW STRIDE PAD [IN]");
            ConvLayer c;
            c.out_channels = detail::parse_count(tok[2], lineno, "out channels", false);
            c.kh = detail::parse_count(tok[3], lineno, "kernel height", false);
            c.kw = detail::parse_count(tok[4], lineno, "kernel width", false);
            c.stride = detail::parse_count(tok[5], lineno, "stride", false);
            c.pad = detail::parse_count(tok[6], lineno, "pad", true);
            if (tok.size() == 8)
                declared_in.emplace_back(detail::parse_count(tok[7], lineno, "in channels", false), lineno);
            else
                declared_in.emplace_back(0, lineno);
            layer.op = c;
        } else if (kind == "relu") {
            if (tok.size() != 2) throw ParseError(lineno, "relu takes no parameters");
            layer.op = ReluLayer{};
        } else if (kind == "maxpool") {
            if (tok.size() != 4) throw ParseError(lineno, "usage: name maxpool K STRIDE");
            layer.op = MaxPoolLayer{detail::parse_count(tok[2], lineno, "pool window", false),
                                    detail::parse_count(tok[3], lineno, "pool stride", false)};
        } else if (detail::is_branching_kind(kind)) {
            throw ParseError(lineno, "layer kind '" + kind + "' needs a branching graph; only sequential chains are supported");
        } else {
            throw ParseError(lineno, "unknown layer kind '" + kind + "'");
        }
        g.layers.push_back(std::move(layer));
        layer_lines.push_back(lineno);
    }

    if (!have_input) throw ParseError(0, "missing 'input CHANNELS' header");
    if (!g.mean.empty() && g.mean.size() != 1 && g.mean.size() != g.input_channels)
        throw ParseError(mean_line, "mean has " + std::to_string(g.mean.size()) + " values for " +
                                        std::to_string(g.input_channels) + " input channels");
    if (!g.scale.empty() && g.scale.size() != 1 && g.scale.size() != g.input_channels)
        throw ParseError(scale_line, "scale has " + std::to_string(g.scale.size()) + " values for " +
                                         std::to_string(g.input_channels) + " input channels");

    channels = g.input_channels;
    std::size_t conv_i = 0;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        if (const auto* c = std::get_if<ConvLayer>(&g.layers[i].op)) {
            const auto [in_declared, line] = declared_in[conv_i++];
            if (in_declared != 0 && in_declared != channels)
                throw ParseError(line, "channel mismatch: layer '" + g.layers[i].name + "' declares " +
                                           std::to_string(in_declared) + " input channels but receives " +
                                           std::to_string(channels));
            channels = c->out_channels;
        }
    }
    return g;
}

inline NetGraph parse_arch(const std::string& text) {
    std::istringstream in(text);
    return parse_arch(in);
}

inline NetGraph load_arch(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(0, "cannot open architecture file " + path.string());
    return parse_arch(in);
}

/// Check that every conv layer up to and including `last` has weights of the right shape.
inline void validate_weights(const NetGraph& g, const WeightArchive& archive, std::size_t last) {
    for (std::size_t i = 0; i <= last && i < g.layers.size(); ++i) {
        const auto* c = std::get_if<ConvLayer>(&g.layers[i].op);
        if (!c) continue;
        const auto& p = archive.at(g.layers[i].name);
        const Dims want{c->out_channels, g.channels_before(i), c->kh, c->kw};
        if (p.weights.dims() != want)
            throw FormatError("weights of '" + g.layers[i].name + "' have dims " + to_string(p.weights.dims()) +
                              ", graph expects " + to_string(want));
    }
}

inline void validate_weights(const NetGraph& g, const WeightArchive& archive) {
    if (!g.layers.empty()) validate_weights(g, archive, g.layers.size() - 1);
}

/// He-initialised weights with small random biases, for tests and gradient checks.
inline WeightArchive random_archive(const NetGraph& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    WeightArchive a;
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const auto* c = std::get_if<ConvLayer>(&g.layers[i].op);
        if (!c) continue;
        const std::size_t in_c = g.channels_before(i);
        std::normal_distribution<double> w(0.0, std::sqrt(2.0 / static_cast<double>(in_c * c->kh * c->kw)));
        std::uniform_real_distribution<double> b(-0.1, 0.1);
        ConvParams p{Tensor({c->out_channels, in_c, c->kh, c->kw}), std::vector<double>(c->out_channels)};
        for (double& v : p.weights.data()) v = w(rng);
        for (double& v : p.bias) v = b(rng);
        a.entries[g.layers[i].name] = std::move(p);
    }
    return a;
}

/// Values saved by the forward pass for the backward pass.
struct TapeEntry {
    std::size_t layer = 0;
    Dims input_dims;
    std::vector<std::uint8_t> relu_positive;  // relu layers: forward input > 0
    std::vector<std::size_t> argmax;          // maxpool layers
};

struct Tape {
    Dims image_dims;
    std::vector<TapeEntry> entries;
};

struct ForwardResult {
    Tensor feature;
    Tape tape;
};

inline Tensor preprocess(const NetGraph& g, const Tensor& image) {
    require_rank(image, 3, "network input");
    if (image.channels() != g.input_channels)
        throw ShapeError("network expects " + std::to_string(g.input_channels) + " channels, image has " +
                         std::to_string(image.channels()));
    Tensor x = image;
    const std::size_t plane = image.height() * image.width();
    for (std::size_t c = 0; c < image.channels(); ++c) {
        const double m = g.mean_of(c), s = g.scale_of(c);
        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] = (x[c * plane + i] - m) * s;
    }
    return x;
}

/// Run the network on `image` up to and including `layer`.
inline ForwardResult forward_to(const NetGraph& g, const WeightArchive& archive, const Tensor& image,
                                const std::string& layer) {
    const std::size_t last = g.index_of(layer);
    validate_weights(g, archive, last);
    ForwardResult r{preprocess(g, image), Tape{image.dims(), {}}};
    for (std::size_t i = 0; i <= last; ++i) {
        TapeEntry e{i, r.feature.dims(), {}, {}};
        std::visit(
            [&](const auto& op) {
                using Op = std::decay_t<decltype(op)>;
                if constexpr (std::is_same_v<Op, ConvLayer>) {
                    const auto& p = archive.at(g.layers[i].name);
                    r.feature = conv2d_forward(r.feature, p.weights, p.bias, op.stride, op.pad);
                } else if constexpr (std::is_same_v<Op, ReluLayer>) {
                    e.relu_positive.resize(r.feature.size());
                    for (std::size_t k = 0; k < r.feature.size(); ++k) e.relu_positive[k] = r.feature[k] > 0.0;
                    r.feature = relu_forward(r.feature);
                } else {
                    auto pooled = maxpool_forward(r.feature, op.k, op.stride);
                    r.feature = std::move(pooled.output);
                    e.argmax = std::move(pooled.argmax);
                }
            },
            g.layers[i].op);
        r.tape.entries.push_back(std::move(e));
    }
    return r;
}

/// Pull `cotangent` (shaped like the forward output) back to image space.
inline Tensor backward(const NetGraph& g, const WeightArchive& archive, const Tape& tape, Tensor cotangent,
                       ReluMode mode) {
    for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
        const auto& spec = g.layers.at(it->layer);
        if (const auto* c = std::get_if<ConvLayer>(&spec.op)) {
            cotangent = conv2d_vjp_input(cotangent, archive.at(spec.name).weights, c->stride, c->pad, it->input_dims);
        } else if (std::holds_alternative<ReluLayer>(spec.op)) {
            if (cotangent.size() != it->relu_positive.size()) throw ShapeError("relu backward: tape mismatch");
            if (mode == ReluMode::mask)
                for (std::size_t k = 0; k < cotangent.size(); ++k)
                    if (!it->relu_positive[k]) cotangent[k] = 0.0;
        } else {
            cotangent = maxpool_vjp(cotangent, it->argmax, it->input_dims);
        }
    }
    // Through the preprocessing affine map.
    const std::size_t plane = tape.image_dims[1] * tape.image_dims[2];
    for (std::size_t c = 0; c < tape.image_dims[0]; ++c) {
        const double s = g.scale_of(c);
        if (s != 1.0)
            for (std::size_t i = 0; i < plane; ++i) cotangent[c * plane + i] *= s;
    }
    return cotangent;
}

struct SaliencyMap {
    Tensor values;  // 1 x H x W, non-negative
    std::string source_layer;
};

/// |F^T dF/dI| at `layer`, averaged over input channels.
inline SaliencyMap saliency(const NetGraph& g, const WeightArchive& archive, const Tensor& image,
                            const std::string& layer, ReluMode mode = ReluMode::identity) {
    auto fwd = forward_to(g, archive, image, layer);
    Tensor seed = fwd.feature;
    Tensor grad = backward(g, archive, fwd.tape, std::move(seed), mode);
    for (double& v : grad.data()) v = std::abs(v);
    return {channel_mean(grad), layer};
}

}  // namespace elf
