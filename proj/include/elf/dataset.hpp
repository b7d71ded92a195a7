#pragma once

// Benchmark set construction: synthetic rotations and zooms of seed images,
// and resizing of image pairs to a fixed frame with rectified homographies.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "elf/eval.hpp"
#include "elf/image_io.hpp"
#include "elf/manifest.hpp"
#include "elf/tensor.hpp"

namespace elf {

inline constexpr std::size_t kFrameHeight = 480;
inline constexpr std::size_t kFrameWidth = 640;

/// Rotation angles of the derived rotation set: multiples of 40 degrees from 0 up to 210.
inline std::vector<double> rotation_angles() { return {0, 40, 80, 120, 160, 200}; }
inline std::vector<double> zoom_scales() { return {1.25, 1.5, 1.75, 2.0}; }

namespace detail {

inline Eigen::Matrix3d translation(double tx, double ty) {
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 2) = tx;
    t(1, 2) = ty;
    return t;
}

// cos/sin with exact values at multiples of 90 degrees.
inline std::pair<double, double> cos_sin_deg(double deg) {
    const double turns = deg / 90.0;
    if (turns == std::round(turns)) {
        static constexpr double c[4] = {1, 0, -1, 0}, s[4] = {0, 1, 0, -1};
        const auto q = static_cast<std::size_t>(((static_cast<long long>(turns) % 4) + 4) % 4);
        return {c[q], s[q]};
    }
    const double rad = deg * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

}  // namespace detail

/// Rotation by `angle_deg` about the frame centre (W/2, H/2); positive angles
/// turn clockwise on screen (image y axis points down).
inline Homography rotation_homography(double angle_deg, std::size_t width, std::size_t height) {
    const double cx = static_cast<double>(width) / 2.0, cy = static_cast<double>(height) / 2.0;
    const auto [c, s] = detail::cos_sin_deg(angle_deg);
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 0) = c;
    r(0, 1) = -s;
    r(1, 0) = s;
    r(1, 1) = c;
    return Homography(detail::translation(cx, cy) * r * detail::translation(-cx, -cy));
}

/// Zoom by `s` about the frame centre.
inline Homography scale_homography(double s, std::size_t width, std::size_t height) {
    if (!(s > 0.0)) throw std::invalid_argument("scale must be positive");
    const double cx = static_cast<double>(width) / 2.0, cy = static_cast<double>(height) / 2.0;
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(0, 0) = s;
    d(1, 1) = s;
    return Homography(detail::translation(cx, cy) * d * detail::translation(-cx, -cy));
}

/// Proportional resize map taking a (w_in x h_in) frame onto (w_out x h_out).
inline Homography resize_homography(std::size_t w_in, std::size_t h_in, std::size_t w_out, std::size_t h_out) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = static_cast<double>(w_out) / static_cast<double>(w_in);
    m(1, 1) = static_cast<double>(h_out) / static_cast<double>(h_in);
    return Homography(m);
}

/// Express `h` (native image1 -> native image2) between the resized frames: S2 * H * S1^-1.
inline Homography rectify_homography(const Homography& h, const Homography& resize1, const Homography& resize2) {
    return resize2 * h * resize1.inverse();
}

/// Render `image` through `h` onto an out_height x out_width canvas by inverse
/// mapping with bilinear sampling. Samples falling outside the source are 0.
inline Tensor warp_image(const Tensor& image, const Homography& h, std::size_t out_height, std::size_t out_width) {
    require_rank(image, 3, "warp_image");
    const Homography inv = h.inverse();
    const std::size_t ch = image.channels(), sh = image.height(), sw = image.width();
    constexpr double tol = 1e-9;
    Tensor out({ch, out_height, out_width});
    for (std::size_t y = 0; y < out_height; ++y)
        for (std::size_t x = 0; x < out_width; ++x) {
            const auto p = warp_point(inv, static_cast<double>(x), static_cast<double>(y));
            if (!p.valid) continue;
            double u = p.x, v = p.y;
            if (u < -tol || v < -tol || u > static_cast<double>(sw - 1) + tol || v > static_cast<double>(sh - 1) + tol)
                continue;
            u = std::clamp(u, 0.0, static_cast<double>(sw - 1));
            v = std::clamp(v, 0.0, static_cast<double>(sh - 1));
            const auto x0 = static_cast<std::size_t>(std::floor(u)), y0 = static_cast<std::size_t>(std::floor(v));
            const std::size_t x1 = std::min(x0 + 1, sw - 1), y1 = std::min(y0 + 1, sh - 1);
            const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
            for (std::size_t c = 0; c < ch; ++c) {
                double acc = (1.0 - fx) * (1.0 - fy) * image.at(c, y0, x0);
                if (fx != 0.0) acc += fx * (1.0 - fy) * image.at(c, y0, x1);
                if (fy != 0.0) acc += (1.0 - fx) * fy * image.at(c, y1, x0);
                if (fx != 0.0 && fy != 0.0) acc += fx * fy * image.at(c, y1, x1);
                out.at(c, y, x) = acc;
            }
        }
    return out;
}

inline Tensor resize_image(const Tensor& image, std::size_t out_height, std::size_t out_width) {
    return warp_image(image, resize_homography(image.width(), image.height(), out_width, out_height), out_height,
                      out_width);
}

enum class DeriveMode { rotation, scale };

struct DeriveReport {
    std::vector<PairEntry> pairs;
    std::vector<std::string> skipped;
};

/// Build the rotation or zoom benchmark from seed images under `out_dir`.
///
/// Each seed gets a directory `<stem>/` with `ref.png` (the seed resized to
/// 640x480), one image per transform and its ground-truth homography from
/// `ref.png`. Pairs are appended to `out_dir/manifest.json`.
inline DeriveReport derive_set(const std::vector<std::filesystem::path>& seeds, DeriveMode mode,
                               const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    DeriveReport report;
    for (const auto& seed : seeds) {
        Tensor image;
        try {
            image = load_image(seed);
        } catch (const std::exception& e) {
            std::clog << "derive: skipping " << seed.string() << ": " << e.what() << '\n';
            report.skipped.push_back(seed.string());
            continue;
        }
        const std::string stem = seed.stem().string();
        fs::create_directories(out_dir / stem);
        const Tensor ref = resize_image(image, kFrameHeight, kFrameWidth);
        save_png(out_dir / stem / "ref.png", ref);

        const auto params = mode == DeriveMode::rotation ? rotation_angles() : zoom_scales();
        for (double p : params) {
            char tag[32];
            if (mode == DeriveMode::rotation)
                std::snprintf(tag, sizeof tag, "rot_%03d", static_cast<int>(p));
            else
                std::snprintf(tag, sizeof tag, "scale_%.2f", p);
            const Homography h = mode == DeriveMode::rotation ? rotation_homography(p, kFrameWidth, kFrameHeight)
                                                              : scale_homography(p, kFrameWidth, kFrameHeight);
            const std::string img = stem + "/" + tag + ".png", hf = stem + "/H_ref_" + tag + ".txt";
            save_png(out_dir / img, warp_image(ref, h, kFrameHeight, kFrameWidth));
            save_homography(out_dir / hf, h);
            report.pairs.push_back({stem + "/" + tag, stem + "/ref.png", img, hf});
        }
    }
    save_manifest(out_dir / "manifest.json", report.pairs);
    return report;
}

/// Import an HPatches-style sequence (1.ppm .. N.ppm with H_1_k files): resize
/// every image to 640x480 and rectify the homographies accordingly.
inline DeriveReport rectify_sequence(const std::filesystem::path& seq_dir, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    DeriveReport report;
    const std::string name = seq_dir.filename().string();
    fs::create_directories(out_dir / name);

    auto find_image = [&](int k) -> fs::path {
        for (const char* ext : {".ppm", ".pgm", ".png"})
            if (auto p = seq_dir / (std::to_string(k) + ext); fs::exists(p)) return p;
        return {};
    };
    const fs::path first = find_image(1);
    if (first.empty()) throw FormatError("sequence " + seq_dir.string() + " has no image 1");
    const Tensor im1 = load_image(first);
    const Homography s1 = resize_homography(im1.width(), im1.height(), kFrameWidth, kFrameHeight);
    save_png(out_dir / name / "1.png", resize_image(im1, kFrameHeight, kFrameWidth));

    for (int k = 2;; ++k) {
        const fs::path pk = find_image(k), hk = seq_dir / ("H_1_" + std::to_string(k));
        if (pk.empty()) break;
        if (!fs::exists(hk)) {
            report.skipped.push_back(pk.string());
            continue;
        }
        const Tensor imk = load_image(pk);
        const Homography sk = resize_homography(imk.width(), imk.height(), kFrameWidth, kFrameHeight);
        const std::string img = name + "/" + std::to_string(k) + ".png", hf = name + "/H_1_" + std::to_string(k) + ".txt";
        save_png(out_dir / img, resize_image(imk, kFrameHeight, kFrameWidth));
        save_homography(out_dir / hf, rectify_homography(load_homography(hk), s1, sk));
        report.pairs.push_back({name + "/" + std::to_string(k), name + "/1.png", img, hf});
    }
    return report;
}

}  // namespace elf
