#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "elf/detector.hpp"
#include "elf/error.hpp"
#include "elf/tensor.hpp"

namespace elf {

struct DescriptorSet {
    std::size_t dim = 0;
    std::vector<std::vector<double>> vectors;  // aligned with the keypoint list
    bool normalized = false;

    std::size_t size() const { return vectors.size(); }
};

/// Feature-map coordinate of image pixel `p` along an axis of `image_extent`
/// pixels mapped onto `feature_extent` texels, clamped to the valid texel range.
inline double to_feature_coord(double p, std::size_t image_extent, std::size_t feature_extent) {
    const double u = p * static_cast<double>(feature_extent) / static_cast<double>(image_extent);
    return std::clamp(u, 0.0, static_cast<double>(feature_extent - 1));
}

/// Bilinear sample of every channel of `feature` at texel coordinate (u, v).
inline void sample_bilinear(const Tensor& feature, double u, double v, std::span<double> out) {
    const std::size_t h = feature.height(), w = feature.width();
    const auto x0 = static_cast<std::size_t>(std::floor(u)), y0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    const double w00 = (1.0 - fx) * (1.0 - fy), w01 = fx * (1.0 - fy), w10 = (1.0 - fx) * fy, w11 = fx * fy;
    for (std::size_t c = 0; c < feature.channels(); ++c) {
        double acc = w00 * feature.at(c, y0, x0);
        if (w01 != 0.0) acc += w01 * feature.at(c, y0, x1);
        if (w10 != 0.0) acc += w10 * feature.at(c, y1, x0);
        if (w11 != 0.0) acc += w11 * feature.at(c, y1, x1);
        out[c] = acc;
    }
}

/// Interpolate `feature` (C x h x w) at keypoints given in image pixels.
inline DescriptorSet describe(const Tensor& feature, std::span<const Keypoint> keypoints, std::size_t image_height,
                              std::size_t image_width, bool normalize = true) {
    require_rank(feature, 3, "describe");
    DescriptorSet set{feature.channels(), {}, normalize};
    set.vectors.reserve(keypoints.size());
    for (const auto& k : keypoints) {
        if (k.x < 0 || k.y < 0 || static_cast<std::size_t>(k.x) >= image_width ||
            static_cast<std::size_t>(k.y) >= image_height)
            throw std::out_of_range("describe: keypoint (" + std::to_string(k.x) + ", " + std::to_string(k.y) +
                                    ") outside the image");
        std::vector<double> d(set.dim);
        sample_bilinear(feature, to_feature_coord(k.x, image_width, feature.width()),
                        to_feature_coord(k.y, image_height, feature.height()), d);
        if (normalize) {
            double n2 = 0.0;
            for (double v : d) n2 += v * v;
            if (n2 > 0.0) {
                const double n = std::sqrt(n2);
                for (double& v : d) v /= n;
            }
        }
        set.vectors.push_back(std::move(d));
    }
    return set;
}

inline double descriptor_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("descriptor_distance: length " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Descriptor files: "# elf-desc v1 N dim", then one line of dim floats per keypoint.

inline void write_descriptors(std::ostream& os, const DescriptorSet& set) {
    os << "# elf-desc v1 " << set.size() << ' ' << set.dim << '\n';
    char buf[32];
    for (const auto& v : set.vectors) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", v[i]);
            if (i) os << ' ';
            os << buf;
        }
        os << '\n';
    }
}

inline void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write descriptor file " + path.string());
    write_descriptors(os, set);
}

inline DescriptorSet read_descriptors(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("descriptor file: missing header");
    std::istringstream hs(line);
    std::string hash, magic, version;
    std::size_t n = 0;
    DescriptorSet set;
    if (!(hs >> hash >> magic >> version >> n >> set.dim) || hash != "#" || magic != "elf-desc" || version != "v1")
        throw FormatError("descriptor file: bad header '" + line + "'");
    set.vectors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw FormatError("descriptor file: expected " + std::to_string(n) + " rows");
        std::istringstream ls(line);
        std::vector<double> v(set.dim);
        for (auto& x : v)
            if (!(ls >> x)) throw FormatError("descriptor file: short row " + std::to_string(i + 2));
        std::string extra;
        if (ls >> extra) throw FormatError("descriptor file: long row " + std::to_string(i + 2));
        set.vectors.push_back(std::move(v));
    }
    return set;
}

inline DescriptorSet load_descriptors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open descriptor file " + path.string());
    return read_descriptors(in);
}

}  // namespace elf
