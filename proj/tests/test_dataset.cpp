#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"

using elf::Homography;
using elf::Tensor;
using oracle::Gen;

namespace fs = std::filesystem;

namespace {

Eigen::Matrix3d T(double x, double y) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = x;
    m(1, 2) = y;
    return m;
}

size_t count_files(const fs::path& dir, const std::string& prefix, const std::string& ext) {
    size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        n += name.rfind(prefix, 0) == 0 && e.path().extension() == ext;
    }
    return n;
}

Tensor textured(Gen& gen, size_t c, size_t h, size_t w) {
    Tensor t({c, h, w});
    const double fx = gen.uniform(0.05, 0.2), fy = gen.uniform(0.05, 0.2);
    for (size_t k = 0; k < c; ++k)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x)
                t.at(k, y, x) = std::round(127.5 + 100 * std::sin(fx * double(x) + double(k)) * std::cos(fy * double(y)));
    return t;
}

}  // namespace

TEST(RotationHomography, MatchesMatrixComposition) {
    EXPECT_TRUE(elf::rotation_homography(0, 640, 480).matrix().isIdentity(0.0));
    for (double a : {40.0, 90.0, 123.0, 200.0}) {
        const double r = a * std::numbers::pi / 180.0;
        Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
        R << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
        const Eigen::Matrix3d want = T(320, 240) * R * T(-320, -240);
        EXPECT_TRUE(elf::rotation_homography(a, 640, 480).matrix().isApprox(want, 1e-12)) << a;
    }
    // Exact at multiples of 90 degrees.
    const auto h90 = elf::rotation_homography(90, 640, 480);
    Eigen::Matrix3d want90;
    want90 << 0, -1, 560, 1, 0, -80, 0, 0, 1;
    EXPECT_EQ(h90.matrix(), want90);
}

TEST(RotationHomography, HalfTurnFixesCentre) {
    const auto h = elf::rotation_homography(180, 640, 480);
    const auto c = elf::warp_point(h, 320, 240);
    EXPECT_EQ(c.x, 320.0);
    EXPECT_EQ(c.y, 240.0);
    const auto p = elf::warp_point(h, 10, 20);
    EXPECT_EQ(p.x, 630.0);
    EXPECT_EQ(p.y, 460.0);
}

TEST(ScaleHomography, CentralZoom) {
    EXPECT_TRUE(elf::scale_homography(1.0, 640, 480).matrix().isIdentity(0.0));
    for (double s : elf::zoom_scales()) {
        const auto h = elf::scale_homography(s, 640, 480);
        const auto c = elf::warp_point(h, 320, 240);
        EXPECT_EQ(c.x, 320.0);
        EXPECT_EQ(c.y, 240.0);
    }
    const auto h2 = elf::scale_homography(2.0, 640, 480);
    Eigen::Matrix3d want = T(320, 240) * Eigen::Vector3d(2, 2, 1).asDiagonal() * T(-320, -240);
    EXPECT_EQ(h2.matrix(), want);
    const auto p = elf::warp_point(h2, 320 + 15, 240 - 7);
    EXPECT_EQ(p.x, 320 + 30.0);
    EXPECT_EQ(p.y, 240 - 14.0);
    EXPECT_THROW(elf::scale_homography(0.0, 640, 480), std::invalid_argument);
}

TEST(RectifyHomography, ResizedFramesAgree) {
    Gen gen(60);
    // Native frames of different sizes related by a random homography.
    Eigen::Matrix3d m;
    m << 1.1, 0.05, 12, -0.03, 0.95, -7, 1e-5, -2e-5, 1;
    const Homography h(m);
    const auto s1 = elf::resize_homography(800, 600, 640, 480), s2 = elf::resize_homography(1000, 700, 640, 480);
    const auto r = elf::rectify_homography(h, s1, s2);
    for (int i = 0; i < 20; ++i) {
        const double x = gen.uniform(0, 800), y = gen.uniform(0, 600);
        const auto native = elf::warp_point(h, x, y);
        const auto via = elf::warp_point(r, x * 640.0 / 800.0, y * 480.0 / 600.0);
        EXPECT_NEAR(via.x, native.x * 640.0 / 1000.0, 1e-9);
        EXPECT_NEAR(via.y, native.y * 480.0 / 700.0, 1e-9);
    }
}

TEST(WarpImage, IdentityAndTranslation) {
    Gen gen(61);
    const auto img = textured(gen, 3, 20, 30);
    EXPECT_EQ(elf::warp_image(img, Homography(), 20, 30), img);

    Eigen::Matrix3d t = T(3, -2);
    const auto shifted = elf::warp_image(img, Homography(t), 20, 30);
    for (size_t c = 0; c < 3; ++c)
        for (size_t y = 0; y < 20; ++y)
            for (size_t x = 0; x < 30; ++x) {
                const long sx = long(x) - 3, sy = long(y) + 2;
                const bool in = sx >= 0 && sx < 30 && sy >= 0 && sy < 20;
                EXPECT_EQ(shifted.at(c, y, x), in ? img.at(c, size_t(sy), size_t(sx)) : 0.0);
            }
}

TEST(WarpImage, RotateThereAndBack) {
    Gen gen(62);
    const auto img = textured(gen, 1, 64, 64);
    const auto r = elf::rotation_homography(40, 64, 64);
    const auto there = elf::warp_image(img, r, 64, 64);
    const auto back = elf::warp_image(there, r.inverse(), 64, 64);
    // Compare inside a disc that stays within the frame under rotation.
    for (size_t y = 0; y < 64; ++y)
        for (size_t x = 0; x < 64; ++x)
            if (std::hypot(double(x) - 32, double(y) - 32) < 26) {
                EXPECT_NEAR(back.at(0, y, x), img.at(0, y, x), 12.0);
            }

    const auto q = elf::rotation_homography(90, 64, 64);
    const auto back90 = elf::warp_image(elf::warp_image(img, q, 64, 64), elf::rotation_homography(-90, 64, 64), 64, 64);
    for (size_t y = 1; y < 63; ++y)
        for (size_t x = 1; x < 63; ++x) EXPECT_NEAR(back90.at(0, y, x), img.at(0, y, x), 1e-6);
}

TEST(ImageIo, PngAndPnmRoundTrips) {
    oracle::TempDir tmp("imgio");
    Gen gen(63);
    const auto rgb = textured(gen, 3, 17, 23), gray = textured(gen, 1, 9, 5);
    elf::save_png(tmp / "rgb.png", rgb);
    elf::save_png(tmp / "gray.png", gray);
    elf::save_pgm(tmp / "gray.pgm", gray);
    EXPECT_EQ(elf::load_image(tmp / "rgb.png"), rgb);
    EXPECT_EQ(elf::load_image(tmp / "gray.png"), gray);
    EXPECT_EQ(elf::load_image(tmp / "gray.pgm"), gray);

    std::ofstream(tmp / "ascii.ppm") << "P3\n# comment\n2 1\n15\n0 15 0  15 0 15\n";
    const auto a = elf::load_image(tmp / "ascii.ppm");
    EXPECT_EQ(a.dims(), (elf::Dims{3, 1, 2}));
    EXPECT_EQ(a.at(1, 0, 0), 255.0);
    EXPECT_EQ(a.at(0, 0, 1), 255.0);

    std::ofstream(tmp / "junk.png") << "not an image";
    EXPECT_THROW(elf::load_image(tmp / "junk.png"), elf::FormatError);
    std::ofstream(tmp / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
    EXPECT_THROW(elf::load_image(tmp / "short.pgm"), elf::FormatError);
    EXPECT_THROW(elf::load_image(tmp / "missing.png"), elf::FormatError);
}

TEST(DeriveSet, RotationScaleAndEmpty) {
    oracle::TempDir tmp("derive");
    Gen gen(64);
    elf::save_png(tmp / "seed.png", textured(gen, 3, 120, 160));

    const auto rot = elf::derive_set({tmp / "seed.png"}, elf::DeriveMode::rotation, tmp / "rot");
    EXPECT_EQ(rot.pairs.size(), 6u);
    EXPECT_EQ(count_files(tmp / "rot", "rot_", ".png"), 6u);
    EXPECT_EQ(count_files(tmp / "rot", "H_ref_", ".txt"), 6u);
    const auto m = elf::load_manifest(tmp / "rot" / "manifest.json");
    ASSERT_EQ(m.pairs.size(), 6u);
    const auto angles = elf::rotation_angles();
    for (size_t i = 0; i < 6; ++i) {
        const auto h = elf::load_homography(m.resolve(m.pairs[i].homography));
        EXPECT_EQ(h.matrix(), elf::rotation_homography(angles[i], 640, 480).matrix());
        EXPECT_GT(std::abs(h.matrix().determinant()), 1e-12);
        const auto img = elf::load_image(m.resolve(m.pairs[i].image2));
        EXPECT_EQ(img.dims(), (elf::Dims{3, 480, 640}));
    }
    EXPECT_EQ(elf::load_image(m.resolve(m.pairs[0].image1)), elf::load_image(m.resolve(m.pairs[0].image2)));

    const auto sc = elf::derive_set({tmp / "seed.png"}, elf::DeriveMode::scale, tmp / "scale");
    EXPECT_EQ(sc.pairs.size(), 4u);
    EXPECT_EQ(count_files(tmp / "scale", "scale_", ".png"), 4u);

    const auto none = elf::derive_set({}, elf::DeriveMode::rotation, tmp / "none");
    EXPECT_TRUE(none.pairs.empty());
    EXPECT_TRUE(elf::load_manifest(tmp / "none" / "manifest.json").pairs.empty());

    std::ofstream(tmp / "broken.png") << "garbage";
    const auto skip = elf::derive_set({tmp / "broken.png", tmp / "seed.png"}, elf::DeriveMode::scale, tmp / "skip");
    EXPECT_EQ(skip.skipped.size(), 1u);
    EXPECT_EQ(skip.pairs.size(), 4u);
}

TEST(RectifySequence, ResizesAndRectifies) {
    oracle::TempDir tmp("rectify");
    Gen gen(65);
    const fs::path seq = tmp / "v_test";
    fs::create_directories(seq);
    // Image 2 is image 1 shifted by (8, 4) at native 320x200 resolution.
    const auto a = textured(gen, 3, 200, 320);
    Eigen::Matrix3d t = T(8, 4);
    const auto b = elf::warp_image(a, Homography(t), 200, 320);
    elf::save_png(seq / "1.png", a);
    elf::save_png(seq / "2.png", b);
    std::ofstream(seq / "H_1_2") << "1 0 8\n0 1 4\n0 0 1\n";
    const auto r = elf::rectify_sequence(seq, tmp / "out");
    ASSERT_EQ(r.pairs.size(), 1u);
    const auto h = elf::load_homography(tmp / "out" / r.pairs[0].homography);
    EXPECT_NEAR(h(0, 2), 16.0, 1e-12);
    EXPECT_NEAR(h(1, 2), 9.6, 1e-12);
    EXPECT_NEAR(h(0, 0), 1.0, 1e-12);
    EXPECT_EQ(elf::load_image(tmp / "out" / r.pairs[0].image2).dims(), (elf::Dims{3, 480, 640}));
}
