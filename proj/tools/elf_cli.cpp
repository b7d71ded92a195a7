// elf: command-line front end for detection, description, evaluation and dataset tools.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "elf/elf.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitInput = 2;

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw InputError(std::string("missing ") + what + " (pass it on the command line)");
    if (!fs::is_regular_file(path)) throw InputError(std::string(what) + " not found: " + path);
}

// Options shared by every command that runs the network.
struct NetworkOptions {
    std::string preset = "vgg";
    std::string arch;
    std::string weights;
    std::string relu_mode;

    void add(CLI::App* cmd) {
        cmd->add_option("--preset,--config", preset, "Preset name or JSON file")->capture_default_str();
        cmd->add_option("--arch", arch, "Architecture file (default: the preset's)");
        cmd->add_option("--weights", weights, "ELFW weight archive");
        cmd->add_option("--relu-mode", relu_mode, "Backward rule for relu: identity or mask");
    }

    elf::Preset load_preset() const {
        auto p = elf::find_preset(preset);
        if (!arch.empty()) p.arch = arch;
        if (!relu_mode.empty()) p.relu_mode = elf::parse_relu_mode(relu_mode);
        return p;
    }

    elf::Extractor load(elf::Preset p) const {
        require_file(p.arch.string(), "architecture file");
        require_file(weights, "weights file");
        auto graph = elf::load_arch(p.arch);
        return elf::Extractor(std::move(graph), elf::load_weights(weights), std::move(p));
    }
};

// Run `fn(i)` for i in [0, n) on `jobs` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        for (std::size_t i; (i = next++) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < std::max(1u, jobs); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------- detect

struct DetectCmd {
    NetworkOptions net;
    std::string image, output = "-", manifest, out_dir, save_saliency, layer;
    int max_kp = 0;
    unsigned jobs = 1;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("detect", "Detect keypoints from feature-map saliency");
        net.add(cmd);
        cmd->add_option("image", image, "Input image (PNG/PGM/PPM)");
        cmd->add_option("-o,--output", output, "Keypoint file, '-' for stdout")->capture_default_str();
        cmd->add_option("--manifest", manifest, "Detect on every image of a pair manifest");
        cmd->add_option("--out-dir", out_dir, "Output directory for --manifest mode");
        cmd->add_option("--layer", layer, "Feature map to backpropagate (overrides preset)");
        cmd->add_option("--max-kp", max_kp, "Keypoint cap (overrides preset)");
        cmd->add_option("--save-saliency", save_saliency, "Write the normalised saliency map as PNG");
        cmd->add_option("--jobs", jobs, "Worker threads in --manifest mode")->capture_default_str();
        cmd->callback([this] { run(); });
    }

    void run() {
        auto preset = net.load_preset();
        if (!layer.empty()) preset.detect_layer = layer;
        if (max_kp > 0) preset.detector.max_keypoints = max_kp;

        std::optional<elf::Extractor> ex;
        if (preset.source == elf::SaliencySource::network) ex.emplace(net.load(preset));

        auto run_one = [&](const fs::path& in, const fs::path& out, const std::string& sal_out) {
            if (!fs::is_regular_file(in)) throw InputError("image not found: " + in.string());
            const auto img = elf::load_image(in);
            elf::SaliencyMap map = ex ? ex->saliency_map(img)
                                  : preset.source == elf::SaliencySource::sobel ? elf::sobel_saliency(img)
                                                                                : elf::laplacian_saliency(img);
            if (!sal_out.empty()) elf::save_png(sal_out, elf::to_display(map.values));
            const auto det = elf::detect(map, preset.detector);
            if (det.degenerate) std::cerr << "warning: " << in.string() << ": degenerate saliency histogram\n";
            elf::KeypointFile kf{static_cast<int>(img.width()), static_cast<int>(img.height()), det.keypoints};
            if (out == "-") {
                elf::write_keypoints(std::cout, kf);
            } else {
                ensure_parent(out);
                elf::save_keypoints(out, kf);
            }
        };

        if (!manifest.empty()) {
            if (out_dir.empty()) throw InputError("--manifest needs --out-dir");
            const auto m = elf::load_manifest(manifest);
            const auto images = elf::manifest_images(m);
            parallel_for(images.size(), jobs, [&](std::size_t i) {
                run_one(m.resolve(images[i]), elf::keypoint_path(out_dir, images[i]), "");
            });
            std::cerr << "detected keypoints on " << images.size() << " images\n";
            return;
        }
        if (image.empty()) throw InputError("detect needs an image or --manifest");
        run_one(image, output, save_saliency);
    }
};

// ---------------------------------------------------------------- describe

struct DescribeCmd {
    NetworkOptions net;
    std::string image, keypoints, output = "-", layer, manifest, kp_dir, out_dir;
    bool raw = false;
    unsigned jobs = 1;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("describe", "Interpolate a feature map at keypoints");
        net.add(cmd);
        cmd->add_option("image", image, "Input image");
        cmd->add_option("--keypoints", keypoints, "Keypoint file for the image");
        cmd->add_option("-o,--output", output, "Descriptor file, '-' for stdout")->capture_default_str();
        cmd->add_option("--layer", layer, "Feature map to interpolate (overrides preset)");
        cmd->add_flag("--raw", raw, "Skip L2 normalisation");
        cmd->add_option("--manifest", manifest, "Describe every image of a pair manifest");
        cmd->add_option("--kp-dir", kp_dir, "Keypoint directory for --manifest mode");
        cmd->add_option("--out-dir", out_dir, "Output directory for --manifest mode");
        cmd->add_option("--jobs", jobs, "Worker threads in --manifest mode")->capture_default_str();
        cmd->callback([this] { run(); });
    }

    void run() {
        auto preset = net.load_preset();
        if (!layer.empty()) preset.describe_layer = layer;
        if (raw) preset.normalize_descriptors = false;
        const auto ex = net.load(preset);

        auto run_one = [&](const fs::path& in, const fs::path& kp, const fs::path& out) {
            if (!fs::is_regular_file(in)) throw InputError("image not found: " + in.string());
            require_file(kp.string(), "keypoint file");
            const auto img = elf::load_image(in);
            const auto kf = elf::load_keypoints(kp);
            const auto set = ex.describe(img, kf.keypoints);
            if (out == "-") {
                elf::write_descriptors(std::cout, set);
            } else {
                ensure_parent(out);
                elf::save_descriptors(out, set);
            }
        };

        if (!manifest.empty()) {
            if (kp_dir.empty() || out_dir.empty()) throw InputError("--manifest needs --kp-dir and --out-dir");
            const auto m = elf::load_manifest(manifest);
            const auto images = elf::manifest_images(m);
            parallel_for(images.size(), jobs, [&](std::size_t i) {
                run_one(m.resolve(images[i]), elf::keypoint_path(kp_dir, images[i]),
                        elf::descriptor_path(out_dir, images[i]));
            });
            return;
        }
        if (image.empty()) throw InputError("describe needs an image or --manifest");
        run_one(image, keypoints, output);
    }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
    std::string manifest, kp_dir, desc_dir, output = "-";
    double eps = 5.0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("eval", "Repeatability and matching score over a pair manifest");
        cmd->add_option("--manifest", manifest, "Pair manifest JSON")->required();
        cmd->add_option("--kp-dir", kp_dir, "Keypoint directory")->required();
        cmd->add_option("--desc-dir", desc_dir, "Descriptor directory (enables matching score)");
        cmd->add_option("--eps", eps, "Pixel distance threshold")->capture_default_str();
        cmd->add_option("-o,--output", output, "Report JSON, '-' for stdout")->capture_default_str();
        cmd->callback([this] { run(); });
    }

    void run() {
        require_file(manifest, "manifest");
        const auto m = elf::load_manifest(manifest);
        std::optional<fs::path> dd;
        if (!desc_dir.empty()) dd = desc_dir;
        const auto report = elf::evaluate_manifest(m, kp_dir, dd, eps).to_json().dump(2);
        if (output == "-") {
            std::cout << report << '\n';
        } else {
            ensure_parent(output);
            std::ofstream(output) << report << '\n';
        }
    }
};

// ---------------------------------------------------------------- sweep

struct SweepCmd {
    NetworkOptions net;
    std::string manifest, kp_dir, work_dir;
    std::vector<std::string> layers;
    double eps = 5.0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("sweep", "Matching score for several description layers (CSV)");
        net.add(cmd);
        cmd->add_option("--manifest", manifest, "Pair manifest JSON")->required();
        cmd->add_option("--kp-dir", kp_dir, "Keypoint directory")->required();
        cmd->add_option("--layers", layers, "Candidate description layers")->required()->delimiter(',');
        cmd->add_option("--work-dir", work_dir, "Where descriptor files go")->required();
        cmd->add_option("--eps", eps, "Pixel distance threshold")->capture_default_str();
        cmd->callback([this] { run(); });
    }

    void run() {
        const auto ex = net.load(net.load_preset());
        const auto m = elf::load_manifest(manifest);
        const auto images = elf::manifest_images(m);
        std::cout << "layer,dim,repeatability_mean,matching_score_mean\n";
        for (const auto& layer : layers) {
            const fs::path dir = fs::path(work_dir) / layer;
            std::size_t dim = 0;
            for (const auto& rel : images) {
                const auto img = elf::load_image(m.resolve(rel));
                const auto kf = elf::load_keypoints(elf::keypoint_path(kp_dir, rel));
                const auto set = ex.describe(img, kf.keypoints, layer);
                dim = set.dim;
                const auto out = elf::descriptor_path(dir, rel);
                ensure_parent(out);
                elf::save_descriptors(out, set);
            }
            const auto r = elf::evaluate_manifest(m, kp_dir, dir, eps);
            std::printf("%s,%zu,%.4f,%.4f\n", layer.c_str(), dim, r.repeatability_mean, r.matching_score_mean.value_or(0.0));
        }
    }
};

// ---------------------------------------------------------------- derive / rectify

struct DeriveCmd {
    std::vector<std::string> seeds;
    std::string mode = "rotation", out;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("derive", "Build a rotation or zoom benchmark from seed images");
        cmd->add_option("seeds", seeds, "Seed images");
        cmd->add_option("--mode", mode, "rotation or scale")
            ->check(CLI::IsMember({"rotation", "scale"}))
            ->capture_default_str();
        cmd->add_option("--out", out, "Output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        std::vector<fs::path> paths(seeds.begin(), seeds.end());
        const auto r = elf::derive_set(paths, mode == "rotation" ? elf::DeriveMode::rotation : elf::DeriveMode::scale, out);
        std::cerr << "wrote " << r.pairs.size() << " pairs to " << out << " (" << r.skipped.size() << " seeds skipped)\n";
    }
};

struct RectifyCmd {
    std::vector<std::string> sequences;
    std::string out;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("rectify", "Resize image sequences to 640x480 and rectify their homographies");
        cmd->add_option("sequences", sequences, "Sequence directories (1.ppm.. and H_1_k files)")->required();
        cmd->add_option("--out", out, "Output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        std::vector<elf::PairEntry> pairs;
        for (const auto& s : sequences) {
            if (!fs::is_directory(s)) throw InputError("not a directory: " + s);
            auto r = elf::rectify_sequence(s, out);
            pairs.insert(pairs.end(), r.pairs.begin(), r.pairs.end());
        }
        elf::save_manifest(fs::path(out) / "manifest.json", pairs);
        std::cerr << "wrote " << pairs.size() << " pairs to " << out << '\n';
    }
};

// ---------------------------------------------------------------- gradcheck / init-weights

struct GradcheckCmd {
    std::string arch;
    std::uint64_t seed = 1;
    std::size_t size = 0;
    double corrupt = 1.0;
    bool failed = false;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every layer VJP on random weights");
        cmd->add_option("--arch", arch, "Architecture file")->required();
        cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
        cmd->add_option("--size", size, "Square input extent (default: smallest that fits)");
        cmd->add_option("--corrupt-vjp", corrupt, "Scale conv VJPs by this factor (self-test)")->group("");
        cmd->callback([this] { run(); });
    }

    void run() {
        require_file(arch, "architecture file");
        elf::GradcheckOptions opt;
        opt.height = opt.width = size;
        opt.corrupt_conv_vjp = corrupt;
        const auto r = elf::run_gradcheck(elf::load_arch(arch), seed, opt);
        std::printf("gradcheck %s input %zux%zu seed %llu\n", arch.c_str(), r.height, r.width,
                    static_cast<unsigned long long>(seed));
        for (const auto& l : r.layers)
            std::printf("  %-12s %-8s probes %3zu  max rel err %.3e  %s\n", l.layer.c_str(), l.kind.c_str(), l.probes,
                        l.max_rel_error, l.passed ? "ok" : "FAIL");
        std::printf("  %-12s %-8s probes %3zu  max rel err %.3e  %s\n", r.chain.layer.c_str(), r.chain.kind.c_str(),
                    r.chain.probes, r.chain.max_rel_error, r.chain.passed ? "ok" : "FAIL");
        std::printf("%s\n", r.passed ? "PASS" : "FAIL");
        failed = !r.passed;
    }
};

struct InitWeightsCmd {
    std::string arch, output;
    std::uint64_t seed = 1;
    bool f32 = false;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("init-weights", "Write a randomly initialised ELFW archive for an architecture");
        cmd->add_option("--arch", arch, "Architecture file")->required();
        cmd->add_option("-o,--output", output, "Archive path")->required();
        cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
        cmd->add_flag("--f32", f32, "Store 32-bit floats");
        cmd->callback([this] { run(); });
    }

    void run() {
        require_file(arch, "architecture file");
        ensure_parent(output);
        elf::save_weights(elf::random_archive(elf::load_arch(arch), seed), output,
                          f32 ? elf::StorageType::f32 : elf::StorageType::f64);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ELF keypoint detection, description and evaluation"};
    app.require_subcommand(1);
    DetectCmd detect;
    DescribeCmd describe;
    EvalCmd eval;
    SweepCmd sweep;
    DeriveCmd derive;
    RectifyCmd rectify;
    GradcheckCmd gradcheck;
    InitWeightsCmd init;
    detect.add(app);
    describe.add(app);
    eval.add(app);
    sweep.add(app);
    derive.add(app);
    rectify.add(app);
    gradcheck.add(app);
    init.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return gradcheck.failed ? 1 : 0;
}
