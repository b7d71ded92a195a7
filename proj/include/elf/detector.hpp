#pragma once

// Saliency map -> keypoints: min-max normalisation, Kapur threshold on a
// blurred copy, a second denoising blur, then greedy non-maximum suppression.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "elf/error.hpp"
#include "elf/netgraph.hpp"
#include "elf/ops.hpp"
#include "elf/tensor.hpp"

namespace elf {

enum class NmsMetric { chebyshev, euclidean };

struct DetectorConfig {
    GaussianSpec thr_blur{5, 4.0};
    GaussianSpec noise_blur{5, 5.0};
    int w_nms = 10;
    int b_nms = 10;
    int max_keypoints = 500;
    NmsMetric nms_metric = NmsMetric::chebyshev;

    void validate() const {
        thr_blur.validate();
        noise_blur.validate();
        if (w_nms < 1) throw std::invalid_argument("w_nms must be >= 1");
        if (b_nms < 0) throw std::invalid_argument("b_nms must be >= 0");
        if (max_keypoints < 1) throw std::invalid_argument("max_keypoints must be >= 1");
    }
};

struct Keypoint {
    int x = 0;  // column
    int y = 0;  // row
    double score = 0.0;

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct Detection {
    std::vector<Keypoint> keypoints;
    int level = -1;             // Kapur level on the 0..255 scale, -1 when not computed
    bool degenerate = false;    // histogram had fewer than two occupied bins
};

/// Kapur's maximum-entropy split of a histogram.
///
/// Returns the level s in [1, n-1] maximising H(A) + H(B), where A is the
/// normalised mass of bins below s and B the mass of bins at or above s. Splits
/// leaving either side empty are not considered. Ties go to the lowest s.
inline int kapur_threshold(std::span<const double> histogram) {
    const std::size_t n = histogram.size();
    double total = 0.0;
    std::size_t occupied = 0;
    for (double f : histogram) {
        if (f < 0.0 || !std::isfinite(f)) throw std::invalid_argument("kapur_threshold: counts must be finite and >= 0");
        total += f;
        occupied += f > 0.0;
    }
    if (occupied < 2) throw DegenerateHistogram("kapur_threshold: fewer than two occupied bins");

    std::vector<double> p(n), plogp(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = histogram[i] / total;
        if (p[i] > 0.0) plogp[i] = p[i] * std::log(p[i]);
    }
    double plogp_total = 0.0, p_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        plogp_total += plogp[i];
        p_total += p[i];
    }

    int best = -1;
    double best_h = -std::numeric_limits<double>::infinity();
    double pa = 0.0, qa = 0.0;
    for (std::size_t s = 1; s < n; ++s) {
        pa += p[s - 1];
        qa += plogp[s - 1];
        const double pb = p_total - pa;
        if (!(pa > 0.0) || !(pb > 0.0)) continue;
        // H(A) = ln P_A - sum_{i<s} p_i ln p_i / P_A, likewise for B.
        const double h = (std::log(pa) - qa / pa) + (std::log(pb) - (plogp_total - qa) / pb);
        if (h > best_h) {
            best_h = h;
            best = static_cast<int>(s);
        }
    }
    if (best < 0) throw DegenerateHistogram("kapur_threshold: no split leaves mass on both sides");
    return best;
}

/// 256-bin histogram of a map already scaled to [0, 255].
inline std::array<double, 256> histogram256(const Tensor& map) {
    std::array<double, 256> h{};
    for (double v : map.data()) {
        const int bin = std::clamp(static_cast<int>(std::floor(v)), 0, 255);
        h[static_cast<std::size_t>(bin)] += 1.0;
    }
    return h;
}

/// Min-max rescale to [0, 255]. Returns false for a constant map.
inline bool normalize_255(Tensor& map) {
    auto d = map.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const double mn = *lo, range = *hi - *lo;
    if (!(range > 0.0)) return false;
    for (double& v : d) v = (v - mn) / range * 255.0;
    return true;
}

namespace detail {

inline std::vector<Keypoint> nms(const Tensor& map, const DetectorConfig& cfg) {
    const int h = static_cast<int>(map.height()), w = static_cast<int>(map.width());
    const int b = cfg.b_nms, r = cfg.w_nms;

    struct Candidate {
        double v;
        int y, x;
    };
    std::vector<Candidate> cand;
    for (int y = b; y < h - b; ++y)
        for (int x = b; x < w - b; ++x)
            if (const double v = map.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)); v > 0.0)
                cand.push_back({v, y, x});
    std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& c) {
        if (a.v != c.v) return a.v > c.v;
        return a.y != c.y ? a.y < c.y : a.x < c.x;
    });

    std::vector<std::uint8_t> suppressed(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
    std::vector<Keypoint> out;
    for (const auto& c : cand) {
        if (suppressed[static_cast<std::size_t>(c.y * w + c.x)]) continue;
        out.push_back({c.x, c.y, c.v});
        if (static_cast<int>(out.size()) >= cfg.max_keypoints) break;
        for (int dy = -r; dy <= r; ++dy) {
            const int yy = c.y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -r; dx <= r; ++dx) {
                const int xx = c.x + dx;
                if (xx < 0 || xx >= w) continue;
                if (cfg.nms_metric == NmsMetric::euclidean && dx * dx + dy * dy > r * r) continue;
                suppressed[static_cast<std::size_t>(yy * w + xx)] = 1;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Full detection pipeline on a single-channel saliency map.
inline Detection detect(const Tensor& saliency_map, const DetectorConfig& cfg) {
    cfg.validate();
    require_rank(saliency_map, 3, "detect");
    if (saliency_map.channels() != 1) throw ShapeError("detect: saliency map must have one channel");
    const auto min_extent = static_cast<std::size_t>(2 * cfg.b_nms + 1);
    if (saliency_map.height() < min_extent || saliency_map.width() < min_extent)
        throw ShapeError("detect: map " + to_string(saliency_map.dims()) + " smaller than the border band allows");

    Detection det;
    Tensor norm = saliency_map;
    if (!normalize_255(norm)) return det;

    const Tensor thr_map = gaussian_blur(norm, cfg.thr_blur);
    const auto hist = histogram256(thr_map);
    try {
        det.level = kapur_threshold(hist);
    } catch (const DegenerateHistogram&) {
        det.degenerate = true;
        return det;
    }

    Tensor den = gaussian_blur(norm, cfg.noise_blur);
    const double level = det.level;
    for (double& v : den.data())
        if (v < level) v = 0.0;
    det.keypoints = detail::nms(den, cfg);
    return det;
}

inline Detection detect(const SaliencyMap& map, const DetectorConfig& cfg) { return detect(map.values, cfg); }

/// Gradient-magnitude baseline: sqrt(Gx^2 + Gy^2) of the channel-mean image.
inline SaliencyMap sobel_saliency(const Tensor& image) {
    static constexpr std::array<double, 9> gx{-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static constexpr std::array<double, 9> gy{-1, -2, -1, 0, 0, 0, 1, 2, 1};
    const Tensor gray = channel_mean(image);
    const Tensor dx = correlate_reflect(gray, gx, 3, 3), dy = correlate_reflect(gray, gy, 3, 3);
    Tensor out(gray.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
    return {std::move(out), "sobel"};
}

/// |4-neighbour Laplacian| of the channel-mean image.
inline SaliencyMap laplacian_saliency(const Tensor& image) {
    static constexpr std::array<double, 9> lap{0, 1, 0, 1, -4, 1, 0, 1, 0};
    Tensor out = correlate_reflect(channel_mean(image), lap, 3, 3);
    for (double& v : out.data()) v = std::abs(v);
    return {std::move(out), "laplacian"};
}

// Keypoint files: "# elf-keypoints v1 W H" then "x y score" per line.

struct KeypointFile {
    int width = 0, height = 0;
    std::vector<Keypoint> keypoints;
};

inline void write_keypoints(std::ostream& os, const KeypointFile& kf) {
    os << "# elf-keypoints v1 " << kf.width << ' ' << kf.height << '\n';
    char buf[96];
    for (const auto& k : kf.keypoints) {
        std::snprintf(buf, sizeof buf, "%d %d %.6f\n", k.x, k.y, k.score);
        os << buf;
    }
}

inline void save_keypoints(const std::filesystem::path& path, const KeypointFile& kf) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write keypoint file " + path.string());
    write_keypoints(os, kf);
}

inline KeypointFile read_keypoints(std::istream& in) {
    KeypointFile kf;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("keypoint file: missing header");
    {
        std::istringstream hs(line);
        std::string hash, magic, version;
        if (!(hs >> hash >> magic >> version >> kf.width >> kf.height) || hash != "#" || magic != "elf-keypoints" ||
            version != "v1")
            throw FormatError("keypoint file: bad header '" + line + "'");
    }
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Keypoint k;
        std::string extra;
        if (!(ls >> k.x >> k.y >> k.score) || (ls >> extra))
            throw FormatError("keypoint file: bad line " + std::to_string(lineno));
        kf.keypoints.push_back(k);
    }
    return kf;
}

inline KeypointFile load_keypoints(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open keypoint file " + path.string());
    return read_keypoints(in);
}

}  // namespace elf
