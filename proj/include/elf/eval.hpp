#pragma once

// Repeatability and matching score with greedy one-to-one matching.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "elf/descriptor.hpp"
#include "elf/detector.hpp"
#include "elf/error.hpp"

namespace elf {

/// Planar projective map, stored with h33 = 1.
class Homography {
public:
    Homography() : m_(Eigen::Matrix3d::Identity()) {}

    explicit Homography(const Eigen::Matrix3d& m) : m_(m) {
        if (std::abs(m_(2, 2)) > 1e-12) m_ /= m_(2, 2);
        if (!(std::abs(m_.determinant()) > 1e-12)) throw std::invalid_argument("homography is singular");
    }

    static Homography from_row_major(std::span<const double, 9> v) {
        Eigen::Matrix3d m;
        m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
        return Homography(m);
    }

    const Eigen::Matrix3d& matrix() const { return m_; }
    double operator()(int r, int c) const { return m_(r, c); }

    Homography inverse() const { return Homography(m_.inverse()); }

    friend Homography operator*(const Homography& a, const Homography& b) { return Homography(a.m_ * b.m_); }

private:
    Eigen::Matrix3d m_;
};

struct Point2 {
    double x = 0.0, y = 0.0;
};

struct WarpedPoint {
    double x = 0.0, y = 0.0;
    bool valid = true;  // false when the homogeneous coordinate vanished
};

inline WarpedPoint warp_point(const Homography& h, double x, double y) {
    const auto& m = h.matrix();
    const double w = m(2, 0) * x + m(2, 1) * y + m(2, 2);
    if (std::abs(w) < 1e-12) return {0.0, 0.0, false};
    return {(m(0, 0) * x + m(0, 1) * y + m(0, 2)) / w, (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / w, true};
}

inline std::vector<WarpedPoint> warp_points(const Homography& h, std::span<const Keypoint> kps) {
    std::vector<WarpedPoint> out;
    out.reserve(kps.size());
    for (const auto& k : kps) out.push_back(warp_point(h, k.x, k.y));
    return out;
}

struct Match {
    std::size_t a = 0, b = 0;
    double weight = 0.0;

    friend bool operator==(const Match&, const Match&) = default;
};

using MatchSet = std::vector<Match>;

/// Greedy bipartite matching over the complete graph A x B.
///
/// Edges are visited by ascending weight, ties by (a, b) lexicographically; an
/// edge is accepted iff both endpoints are still free. Non-finite weights are
/// never accepted.
template <typename Distance>
MatchSet greedy_match(std::size_t na, std::size_t nb, Distance&& dist) {
    if (na == 0 || nb == 0) return {};
    std::vector<Match> edges;
    edges.reserve(na * nb);
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) edges.push_back({i, j, dist(i, j)});
    std::sort(edges.begin(), edges.end(), [](const Match& l, const Match& r) {
        if (l.weight != r.weight) return l.weight < r.weight;
        return l.a != r.a ? l.a < r.a : l.b < r.b;
    });
    std::vector<bool> used_a(na, false), used_b(nb, false);
    MatchSet out;
    const std::size_t limit = std::min(na, nb);
    for (const auto& e : edges) {
        if (!std::isfinite(e.weight)) break;
        if (used_a[e.a] || used_b[e.b]) continue;
        used_a[e.a] = used_b[e.b] = true;
        out.push_back(e);
        if (out.size() == limit) break;
    }
    return out;
}

inline MatchSet greedy_match(std::span<const Point2> a, std::span<const Point2> b) {
    return greedy_match(a.size(), b.size(), [&](std::size_t i, std::size_t j) {
        return std::hypot(a[i].x - b[j].x, a[i].y - b[j].y);
    });
}

inline MatchSet greedy_match(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b) {
    return greedy_match(a.size(), b.size(), [&](std::size_t i, std::size_t j) { return descriptor_distance(a[i], b[j]); });
}

struct ImageSize {
    int width = 0, height = 0;
};

namespace detail {

// Indices of kps1 whose warp lands inside image 2, with the warped positions.
struct VisibleSet {
    std::vector<std::size_t> index;
    std::vector<Point2> warped;
};

inline VisibleSet visible_after_warp(std::span<const Keypoint> kps1, const Homography& h, ImageSize image2) {
    VisibleSet v;
    for (std::size_t i = 0; i < kps1.size(); ++i) {
        const auto w = warp_point(h, kps1[i].x, kps1[i].y);
        if (!w.valid || w.x < 0.0 || w.y < 0.0 || w.x >= image2.width || w.y >= image2.height) continue;
        v.index.push_back(i);
        v.warped.push_back({w.x, w.y});
    }
    return v;
}

inline std::vector<Point2> positions(std::span<const Keypoint> kps) {
    std::vector<Point2> out;
    out.reserve(kps.size());
    for (const auto& k : kps) out.push_back({static_cast<double>(k.x), static_cast<double>(k.y)});
    return out;
}

// Image-space matches (weight < eps) in original kps1 indexing.
inline MatchSet spatial_matches(const VisibleSet& vis, std::span<const Keypoint> kps2, double eps) {
    const auto p2 = positions(kps2);
    MatchSet out;
    for (auto m : greedy_match(std::span<const Point2>(vis.warped), std::span<const Point2>(p2))) {
        if (!(m.weight < eps)) continue;
        m.a = vis.index[m.a];
        out.push_back(m);
    }
    return out;
}

inline void require_nonempty(std::span<const Keypoint> kps1, std::span<const Keypoint> kps2) {
    if (kps1.empty() || kps2.empty()) throw MetricError("metric undefined for an empty keypoint list");
}

}  // namespace detail

/// Percentage of keypoints repeated under `h` (kps1 -> image 2) within `eps` pixels.
///
/// Warped points outside image 2 are dropped; the denominator keeps the
/// original list sizes.
inline double repeatability(std::span<const Keypoint> kps1, std::span<const Keypoint> kps2, const Homography& h,
                            ImageSize image2, double eps = 5.0) {
    detail::require_nonempty(kps1, kps2);
    const auto vis = detail::visible_after_warp(kps1, h, image2);
    const auto m = detail::spatial_matches(vis, kps2, eps);
    return 100.0 * static_cast<double>(m.size()) / static_cast<double>(std::min(kps1.size(), kps2.size()));
}

/// Percentage of keypoint pairs matched both in image space (within `eps`) and
/// in descriptor space (no distance cutoff).
///
/// Descriptor matching runs over the same visible subset of kps1 as the
/// spatial matching.
inline double matching_score(std::span<const Keypoint> kps1, const DescriptorSet& desc1,
                             std::span<const Keypoint> kps2, const DescriptorSet& desc2, const Homography& h,
                             ImageSize image2, double eps = 5.0) {
    detail::require_nonempty(kps1, kps2);
    if (desc1.size() != kps1.size() || desc2.size() != kps2.size())
        throw MetricError("matching_score: descriptor count does not match keypoint count");
    if (desc1.dim != desc2.dim) throw MetricError("matching_score: descriptor dimensions differ");

    const auto vis = detail::visible_after_warp(kps1, h, image2);
    const auto spatial = detail::spatial_matches(vis, kps2, eps);

    const auto md = greedy_match(vis.index.size(), kps2.size(), [&](std::size_t i, std::size_t j) {
        return descriptor_distance(desc1.vectors[vis.index[i]], desc2.vectors[j]);
    });
    std::vector<std::ptrdiff_t> partner(kps1.size(), -1);
    for (const auto& m : md) partner[vis.index[m.a]] = static_cast<std::ptrdiff_t>(m.b);

    std::size_t both = 0;
    for (const auto& m : spatial)
        if (partner[m.a] == static_cast<std::ptrdiff_t>(m.b)) ++both;
    return 100.0 * static_cast<double>(both) / static_cast<double>(std::min(kps1.size(), kps2.size()));
}

// Homography files: nine whitespace-separated numbers, row-major.

inline Homography read_homography(std::istream& in) {
    std::array<double, 9> v{};
    for (auto& x : v)
        if (!(in >> x)) throw FormatError("homography file: expected 9 numbers");
    std::string extra;
    if (in >> extra) throw FormatError("homography file: trailing content '" + extra + "'");
    return Homography::from_row_major(v);
}

inline Homography load_homography(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open homography file " + path.string());
    return read_homography(in);
}

inline void write_homography(std::ostream& os, const Homography& h) {
    char buf[40];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", h(r, c));
            os << (c ? " " : "") << buf;
        }
        os << '\n';
    }
}

inline void save_homography(const std::filesystem::path& path, const Homography& h) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write homography file " + path.string());
    write_homography(os, h);
}

}  // namespace elf
