#pragma once

// Presets and the end-to-end detect / describe / evaluate workflows.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elf/descriptor.hpp"
#include "elf/detector.hpp"
#include "elf/eval.hpp"
#include "elf/image_io.hpp"
#include "elf/manifest.hpp"
#include "elf/netgraph.hpp"
#include "elf/weights.hpp"

namespace elf {

enum class SaliencySource { network, sobel, laplacian };

struct Preset {
    std::string name;
    SaliencySource source = SaliencySource::network;
    std::filesystem::path arch;  // absolute once loaded
    std::string detect_layer;
    std::string describe_layer;
    ReluMode relu_mode = ReluMode::identity;
    bool normalize_descriptors = true;
    DetectorConfig detector;
};

inline ReluMode parse_relu_mode(const std::string& s) {
    if (s == "identity") return ReluMode::identity;
    if (s == "mask") return ReluMode::mask;
    throw std::invalid_argument("relu mode must be 'identity' or 'mask', got '" + s + "'");
}

namespace detail {

inline GaussianSpec gaussian_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw FormatError("blur must be [size, sigma]");
    GaussianSpec g{j[0].get<int>(), j[1].get<double>()};
    g.validate();
    return g;
}

}  // namespace detail

inline DetectorConfig detector_config_from_json(const nlohmann::json& j, DetectorConfig cfg = {}) {
    if (j.contains("thr_blur")) cfg.thr_blur = detail::gaussian_from_json(j["thr_blur"]);
    if (j.contains("noise_blur")) cfg.noise_blur = detail::gaussian_from_json(j["noise_blur"]);
    cfg.w_nms = j.value("w_nms", cfg.w_nms);
    cfg.b_nms = j.value("b_nms", cfg.b_nms);
    cfg.max_keypoints = j.value("max_keypoints", cfg.max_keypoints);
    if (j.contains("nms_metric")) {
        const auto m = j["nms_metric"].get<std::string>();
        if (m == "chebyshev") cfg.nms_metric = NmsMetric::chebyshev;
        else if (m == "euclidean") cfg.nms_metric = NmsMetric::euclidean;
        else throw FormatError("nms_metric must be 'chebyshev' or 'euclidean'");
    }
    cfg.validate();
    return cfg;
}

/// Parse a preset JSON file; a relative "arch" resolves against the file's directory.
inline Preset load_preset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open preset " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        Preset p;
        p.name = j.value("name", path.stem().string());
        const auto src = j.value("saliency", std::string("network"));
        if (src == "network") p.source = SaliencySource::network;
        else if (src == "sobel") p.source = SaliencySource::sobel;
        else if (src == "laplacian") p.source = SaliencySource::laplacian;
        else throw FormatError("preset saliency must be network, sobel or laplacian");
        if (j.contains("arch")) {
            p.arch = j["arch"].get<std::string>();
            if (p.arch.is_relative()) p.arch = path.parent_path() / p.arch;
        }
        p.detect_layer = j.value("detect_layer", std::string());
        p.describe_layer = j.value("describe_layer", std::string());
        p.relu_mode = parse_relu_mode(j.value("relu_mode", std::string("identity")));
        p.normalize_descriptors = j.value("normalize_descriptors", true);
        if (j.contains("detector")) p.detector = detector_config_from_json(j["detector"]);
        if (p.source == SaliencySource::network && p.detect_layer.empty())
            throw FormatError("preset " + path.string() + ": network saliency needs detect_layer");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("preset " + path.string() + ": " + e.what());
    }
}

/// Preset directory: $ELF_PRESET_DIR, else the directory bundled with the sources.
inline std::filesystem::path preset_dir() {
    if (const char* env = std::getenv("ELF_PRESET_DIR"); env && *env) return env;
#ifdef ELF_DEFAULT_PRESET_DIR
    return ELF_DEFAULT_PRESET_DIR;
#else
    return "presets";
#endif
}

/// Resolve `name_or_path`: an existing file, or `<preset_dir>/<name>.json`.
inline Preset find_preset(const std::string& name_or_path) {
    if (std::filesystem::is_regular_file(name_or_path)) return load_preset(name_or_path);
    const auto p = preset_dir() / (name_or_path + ".json");
    if (!std::filesystem::is_regular_file(p))
        throw FormatError("no preset '" + name_or_path + "' (looked for " + p.string() + ")");
    return load_preset(p);
}

/// A loaded network plus the detection settings that go with it.
class Extractor {
public:
    Extractor(NetGraph graph, WeightArchive archive, Preset preset)
        : graph_(std::move(graph)), archive_(std::move(archive)), preset_(std::move(preset)) {
        validate_weights(graph_, archive_);
    }

    const NetGraph& graph() const { return graph_; }
    const Preset& preset() const { return preset_; }
    Preset& preset() { return preset_; }

    /// Bring an image to the channel layout the network expects.
    Tensor prepare(const Tensor& image) const { return convert_channels(image, graph_.input_channels); }

    SaliencyMap saliency_map(const Tensor& image) const {
        switch (preset_.source) {
            case SaliencySource::sobel: return sobel_saliency(image);
            case SaliencySource::laplacian: return laplacian_saliency(image);
            case SaliencySource::network: break;
        }
        return saliency(graph_, archive_, prepare(image), preset_.detect_layer, preset_.relu_mode);
    }

    Detection detect(const Tensor& image) const { return elf::detect(saliency_map(image), preset_.detector); }

    Tensor feature(const Tensor& image, const std::string& layer) const {
        return forward_to(graph_, archive_, prepare(image), layer).feature;
    }

    DescriptorSet describe(const Tensor& image, std::span<const Keypoint> kps, const std::string& layer) const {
        return elf::describe(feature(image, layer), kps, image.height(), image.width(),
                             preset_.normalize_descriptors);
    }

    DescriptorSet describe(const Tensor& image, std::span<const Keypoint> kps) const {
        if (preset_.describe_layer.empty()) throw FormatError("preset has no describe_layer");
        return describe(image, kps, preset_.describe_layer);
    }

private:
    NetGraph graph_;
    WeightArchive archive_;
    Preset preset_;
};

// Per-image output files live at <dir>/<image path relative to the manifest> + suffix.
inline std::filesystem::path keypoint_path(const std::filesystem::path& dir, const std::string& image_rel) {
    return dir / (image_rel + ".kp");
}
inline std::filesystem::path descriptor_path(const std::filesystem::path& dir, const std::string& image_rel) {
    return dir / (image_rel + ".desc");
}

struct PairResult {
    std::string id;
    std::size_t n1 = 0, n2 = 0;
    double repeatability = 0.0;
    std::optional<double> matching_score;
    bool empty = false;  // a side had no keypoints: metrics undefined, scored 0
};

struct EvalReport {
    std::vector<PairResult> pairs;
    double repeatability_mean = 0.0;
    std::optional<double> matching_score_mean;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["pairs"] = nlohmann::json::array();
        for (const auto& p : pairs) {
            nlohmann::json e{{"id", p.id}, {"n1", p.n1}, {"n2", p.n2}, {"repeatability", p.repeatability}};
            e["matching_score"] = p.matching_score ? nlohmann::json(*p.matching_score) : nlohmann::json(nullptr);
            if (p.empty) e["empty"] = true;
            j["pairs"].push_back(e);
        }
        j["repeatability_mean"] = repeatability_mean;
        j["matching_score_mean"] =
            matching_score_mean ? nlohmann::json(*matching_score_mean) : nlohmann::json(nullptr);
        return j;
    }
};

/// Score every manifest pair from keypoint (and optionally descriptor) files.
/// Pairs with an empty keypoint list count as 0 towards the means.
inline EvalReport evaluate_manifest(const Manifest& m, const std::filesystem::path& kp_dir,
                                    const std::optional<std::filesystem::path>& desc_dir, double eps = 5.0) {
    EvalReport r;
    double rep_sum = 0.0, ms_sum = 0.0;
    for (const auto& pair : m.pairs) {
        const auto k1 = load_keypoints(keypoint_path(kp_dir, pair.image1));
        const auto k2 = load_keypoints(keypoint_path(kp_dir, pair.image2));
        const auto h = load_homography(m.resolve(pair.homography));
        const ImageSize size2{k2.width, k2.height};
        PairResult pr{pair.id, k1.keypoints.size(), k2.keypoints.size(), 0.0, std::nullopt, false};
        pr.empty = k1.keypoints.empty() || k2.keypoints.empty();
        if (!pr.empty) {
            pr.repeatability = repeatability(k1.keypoints, k2.keypoints, h, size2, eps);
            if (desc_dir) {
                const auto d1 = load_descriptors(descriptor_path(*desc_dir, pair.image1));
                const auto d2 = load_descriptors(descriptor_path(*desc_dir, pair.image2));
                pr.matching_score = matching_score(k1.keypoints, d1, k2.keypoints, d2, h, size2, eps);
            }
        } else if (desc_dir) {
            pr.matching_score = 0.0;
        }
        if (pr.matching_score) ms_sum += *pr.matching_score;
        rep_sum += pr.repeatability;
        r.pairs.push_back(std::move(pr));
    }
    if (!r.pairs.empty()) {
        r.repeatability_mean = rep_sum / static_cast<double>(r.pairs.size());
        if (desc_dir) r.matching_score_mean = ms_sum / static_cast<double>(r.pairs.size());
    }
    return r;
}

}  // namespace elf
