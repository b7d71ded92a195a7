#pragma once

// 8-bit image I/O. Images are C x H x W tensors with values in [0, 255].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "elf/error.hpp"
#include "elf/ops.hpp"
#include "elf/tensor.hpp"

namespace elf {

namespace detail {

inline Tensor planar_from_interleaved(const std::vector<std::uint8_t>& px, std::size_t c, std::size_t h,
                                      std::size_t w) {
    Tensor t({c, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) t.at(k, y, x) = px[(y * w + x) * c + k];
    return t;
}

inline std::vector<std::uint8_t> interleaved_from_planar(const Tensor& t) {
    const std::size_t c = t.channels(), h = t.height(), w = t.width();
    std::vector<std::uint8_t> px(c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k)
                px[(y * w + x) * c + k] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(t.at(k, y, x)), 0L, 255L));
    return px;
}

// Reads PNM header tokens, skipping comments.
class PnmTokens {
public:
    explicit PnmTokens(const std::vector<std::uint8_t>& b) : b_(b) {}

    std::string next() {
        for (;;) {
            while (pos_ < b_.size() && std::isspace(b_[pos_])) ++pos_;
            if (pos_ < b_.size() && b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
                continue;
            }
            break;
        }
        std::string tok;
        while (pos_ < b_.size() && !std::isspace(b_[pos_])) tok += static_cast<char>(b_[pos_++]);
        if (tok.empty()) throw FormatError("PNM: truncated header");
        return tok;
    }

    std::size_t number() {
        const auto t = next();
        if (!std::all_of(t.begin(), t.end(), [](unsigned char ch) { return std::isdigit(ch); }))
            throw FormatError("PNM: expected a number, got '" + t + "'");
        return std::stoul(t);
    }

    std::size_t pos() const { return pos_; }
    void skip_one() { ++pos_; }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

inline Tensor decode_pnm(const std::vector<std::uint8_t>& bytes) {
    PnmTokens tok(bytes);
    const auto magic = tok.next();
    std::size_t channels = 0;
    bool binary = false;
    if (magic == "P2" || magic == "P5") channels = 1;
    else if (magic == "P3" || magic == "P6") channels = 3;
    else throw FormatError("PNM: unsupported magic '" + magic + "'");
    binary = magic == "P5" || magic == "P6";

    const std::size_t w = tok.number(), h = tok.number(), maxval = tok.number();
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError("PNM: bad header values");
    const std::size_t n = w * h * channels;
    std::vector<double> values(n);
    if (binary) {
        tok.skip_one();  // single whitespace after maxval
        const std::size_t bpp = maxval > 255 ? 2 : 1;
        if (bytes.size() - std::min(bytes.size(), tok.pos()) < n * bpp) throw FormatError("PNM: truncated pixel data");
        const std::uint8_t* p = bytes.data() + tok.pos();
        for (std::size_t i = 0; i < n; ++i)
            values[i] = bpp == 1 ? p[i] : static_cast<double>((p[2 * i] << 8) | p[2 * i + 1]);
    } else {
        for (auto& v : values) v = static_cast<double>(tok.number());
    }
    Tensor t({channels, h, w});
    const double s = 255.0 / static_cast<double>(maxval);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < channels; ++k) {
                const double v = values[(y * w + x) * channels + k];
                t.at(k, y, x) = maxval == 255 ? v : std::round(v * s);
            }
    return t;
}

inline Tensor decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw FormatError(std::string("PNG: ") + img.message);
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("PNG: " + msg);
    }
    return planar_from_interleaved(px, color ? 3 : 1, img.height, img.width);
}

}  // namespace detail

/// Load an 8-bit PNG or a PGM/PPM (binary or ASCII) image.
inline Tensor load_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return detail::decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_pnm(bytes);
    throw FormatError("unrecognised image format: " + path.string());
}

/// Write a 1- or 3-channel image as 8-bit PNG (values rounded and clamped to [0, 255]).
inline void save_png(const std::filesystem::path& path, const Tensor& image) {
    require_rank(image, 3, "save_png");
    if (image.channels() != 1 && image.channels() != 3) throw ShapeError("save_png: need 1 or 3 channels");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const auto px = detail::interleaved_from_planar(image);
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr))
        throw FormatError("PNG: cannot write " + path.string() + ": " + img.message);
}

/// Write a 1-channel image as binary PGM.
inline void save_pgm(const std::filesystem::path& path, const Tensor& image) {
    require_rank(image, 3, "save_pgm");
    if (image.channels() != 1) throw ShapeError("save_pgm: need 1 channel");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
    const auto px = detail::interleaved_from_planar(image);
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

/// Convert between gray (1) and colour (3) layouts by replication or channel mean.
inline Tensor convert_channels(const Tensor& image, std::size_t channels) {
    require_rank(image, 3, "convert_channels");
    if (image.channels() == channels) return image;
    if (channels == 1) return channel_mean(image);
    if (image.channels() == 1) {
        Tensor out({channels, image.height(), image.width()});
        const std::size_t plane = image.height() * image.width();
        for (std::size_t c = 0; c < channels; ++c) std::copy_n(image.raw(), plane, out.raw() + c * plane);
        return out;
    }
    throw ShapeError("cannot convert " + std::to_string(image.channels()) + " channels to " + std::to_string(channels));
}

/// Min-max rescale of a single-channel map to [0, 255] for visualisation.
inline Tensor to_display(const Tensor& map) {
    Tensor out = map;
    auto d = out.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const double mn = *lo, range = *hi - *lo;
    for (double& v : d) v = range > 0.0 ? (v - mn) / range * 255.0 : 0.0;
    return out;
}

}  // namespace elf
