#pragma once

// Pair manifest: {"pairs": [{"id", "image1", "image2", "homography"}, ...]}.
// Paths are relative to the manifest's directory.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elf/error.hpp"

namespace elf {

struct PairEntry {
    std::string id;
    std::string image1;
    std::string image2;
    std::string homography;  // maps image1 pixels to image2 pixels
};

struct Manifest {
    std::filesystem::path root;  // directory the relative paths resolve against
    std::vector<PairEntry> pairs;

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    Manifest m{path.parent_path(), {}};
    if (!j.contains("pairs") || !j["pairs"].is_array()) throw FormatError("manifest: missing 'pairs' array");
    for (const auto& p : j["pairs"]) {
        try {
            m.pairs.push_back({p.value("id", p.at("image2").get<std::string>()), p.at("image1").get<std::string>(),
                               p.at("image2").get<std::string>(), p.at("homography").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("manifest: bad pair entry: ") + e.what());
        }
    }
    return m;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<PairEntry>& pairs) {
    nlohmann::json j;
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs)
        j["pairs"].push_back({{"id", p.id}, {"image1", p.image1}, {"image2", p.image2}, {"homography", p.homography}});
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write manifest " + path.string());
    os << j.dump(2) << '\n';
}

/// Distinct images referenced by a manifest, in first-seen order.
inline std::vector<std::string> manifest_images(const Manifest& m) {
    std::vector<std::string> out;
    auto add = [&](const std::string& s) {
        for (const auto& e : out)
            if (e == s) return;
        out.push_back(s);
    };
    for (const auto& p : m.pairs) {
        add(p.image1);
        add(p.image2);
    }
    return out;
}

}  // namespace elf
