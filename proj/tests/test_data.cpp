#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "crl/data.hpp"
#include "crl/image_io.hpp"
#include "test_util.hpp"

using namespace crl;
namespace fs = std::filesystem;

namespace {

void expect_normalized(const Image& im) {
    double m = 0, v = 0;
    for (float x : im.values()) m += x;
    m /= static_cast<double>(im.size());
    for (float x : im.values()) v += (x - m) * (x - m);
    v /= static_cast<double>(im.size());
    EXPECT_NEAR(m, 0.0, 1e-4);
    EXPECT_NEAR(v, 1.0, 1e-4);
}

}  // namespace

TEST(Synthetic, DeterministicPerSeedAndIndex) {
    const auto a = synth_shapes(6, 64, 5), b = synth_shapes(6, 64, 5), c = synth_shapes(6, 64, 6);
    ASSERT_EQ(a.size(), 6u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].clean_mask, b[i].clean_mask);
        EXPECT_EQ(a[i].clean_mask, a[i].train_mask);
        EXPECT_NE(a[i].image, c[i].image);
        EXPECT_EQ(a[i].id, synth_id(i));
    }
    // Sample i does not depend on how many samples were requested.
    EXPECT_EQ(synth_shapes(3, 64, 5)[2].image, a[2].image);
    EXPECT_EQ(synth_id(7), "synth_00007");
    EXPECT_THROW(synth_shapes(0, 64, 1), ConfigError);
    EXPECT_THROW(synth_shapes(2, 16, 1), ConfigError);
}

TEST(Synthetic, ForegroundFractionAndNormalization) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto s = synth_shapes(1, 64, seed)[0];
        const double frac = static_cast<double>(s.clean_mask.count()) / static_cast<double>(s.clean_mask.size());
        ASSERT_GE(frac, 0.05) << "seed " << seed;
        ASSERT_LE(frac, 0.5) << "seed " << seed;
        if (seed % 100 == 0) expect_normalized(s.image);
    }
}

TEST(Normalize, ZeroMeanUnitVarianceAndConstantRejected) {
    Rng rng(3);
    Image im(9, 13);
    for (auto& v : im.values()) v = static_cast<float>(rng.uniform(10, 20));
    expect_normalized(normalize(im));
    EXPECT_THROW(normalize(Image(4, 4, 0.3f)), DataError);
}

TEST(Augment, IdentityWhenDisabled) {
    const auto s = synth_shapes(1, 64, 1)[0];
    Rng rng(1);
    const Sample out = augment(s, rng, AugmentConfig{0.0, 0.0});
    EXPECT_EQ(out.image, s.image);
    EXPECT_EQ(out.train_mask, s.train_mask);
}

TEST(Augment, FlipMirrorsImageAndMasksTogether) {
    auto s = synth_shapes(1, 64, 2)[0];
    s.train_mask = erode(s.clean_mask, 2);
    Rng rng(1);
    const Sample out = augment(s, rng, AugmentConfig{0.0, 1.0});
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            ASSERT_EQ(out.image(y, x), s.image(y, 63 - x));
            ASSERT_EQ(out.clean_mask(y, x), s.clean_mask(y, 63 - x));
            ASSERT_EQ(out.train_mask(y, x), s.train_mask(y, 63 - x));
        }
}

TEST(Augment, RotationKeepsMasksBinaryAndAligned) {
    const auto s = synth_shapes(1, 64, 4)[0];
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const Sample out = augment(s, rng);
        for (auto v : out.clean_mask.values()) ASSERT_LE(v, 1);
        for (auto v : out.train_mask.values()) ASSERT_LE(v, 1);
        for (float v : out.image.values()) ASSERT_TRUE(std::isfinite(v));
        EXPECT_EQ(out.clean_mask, out.train_mask);  // same warp for both masks
        // Rotation preserves area while the lobes stay inside the frame.
        const double before = static_cast<double>(s.clean_mask.count());
        EXPECT_NEAR(static_cast<double>(out.clean_mask.count()), before, 0.03 * before);
        EXPECT_GT(dice(out.clean_mask, s.clean_mask), 0.6);
    }
}

TEST(Augment, SameSeedSameDraw) {
    const auto s = synth_shapes(1, 64, 4)[0];
    Rng a(5), b(5);
    EXPECT_EQ(augment(s, a).image, augment(s, b).image);
}

TEST(Manifest, DeterministicDisjointSplit) {
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.push_back(synth_id(static_cast<std::size_t>(i)));
    const auto m1 = make_manifest(ids, 20, 10, 7, "synthetic", 64, 64);
    auto shuffled = ids;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto m2 = make_manifest(shuffled, 20, 10, 7, "synthetic", 64, 64);
    EXPECT_EQ(m1.train_ids, m2.train_ids);
    EXPECT_EQ(m1.test_ids, m2.test_ids);
    std::set<std::string> all(m1.train_ids.begin(), m1.train_ids.end());
    for (const auto& t : m1.test_ids) EXPECT_TRUE(all.insert(t).second);
    EXPECT_EQ(all.size(), 30u);
    EXPECT_NE(make_manifest(ids, 20, 10, 8, "synthetic", 64, 64).train_ids, m1.train_ids);
    EXPECT_THROW(make_manifest(ids, 25, 10, 7, "synthetic", 64, 64), ConfigError);

    const auto dir = crl::testing::temp_dir("manifest");
    save_manifest(dir / "m.json", m1);
    const auto back = load_manifest(dir / "m.json");
    EXPECT_EQ(back.train_ids, m1.train_ids);
    EXPECT_EQ(back.test_ids, m1.test_ids);
    EXPECT_EQ(back.split_seed, 7u);
}

TEST(Png, RoundTripAndMaskThreshold) {
    const auto dir = crl::testing::temp_dir("png");
    Gray8 g(5, 7);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<std::uint8_t>(i * 7);
    write_png_gray(dir / "a.png", g);
    EXPECT_EQ(read_png_gray(dir / "a.png"), g);
    Rng rng(2);
    const BinaryMask m = crl::testing::random_mask(rng, 6, 6);
    EXPECT_EQ(mask_from_gray(mask_to_gray(m)), m);
    EXPECT_THROW(read_png_gray(dir / "missing.png"), DataError);
}

TEST(DirectoryDataset, WriteScanLoad) {
    const auto dir = crl::testing::temp_dir("dirdata");
    write_synthetic_dataset(dir, 6, 64, 3, 4, 2);
    const auto ids = scan_dataset_ids(dir);
    ASSERT_EQ(ids.size(), 6u);
    const auto manifest = load_manifest(dir / "manifest.json");
    const Dataset d = load_dataset(dir, manifest);
    ASSERT_EQ(d.train.size(), 4u);
    ASSERT_EQ(d.test.size(), 2u);
    // Masks survive the PNG round trip exactly; images only up to 8-bit quantisation.
    const auto mem = synth_shapes(6, 64, 3);
    for (const auto& s : d.train) {
        const auto& ref = mem[static_cast<std::size_t>(std::stoi(s.id.substr(6)))];
        EXPECT_EQ(s.clean_mask, ref.clean_mask);
        expect_normalized(s.image);
    }
}

TEST(DirectoryDataset, ResizeOnLoad) {
    const auto dir = crl::testing::temp_dir("resize");
    write_synthetic_dataset(dir, 2, 64, 3, 1, 1);
    auto manifest = load_manifest(dir / "manifest.json");
    manifest.height = manifest.width = 32;
    const Dataset d = load_dataset(dir, manifest);
    EXPECT_EQ(d.train[0].image.height(), 32);
    EXPECT_EQ(d.train[0].clean_mask.width(), 32);
    EXPECT_EQ(resize_nearest(d.train[0].clean_mask, 32, 32), d.train[0].clean_mask);
}

TEST(DirectoryDataset, Errors) {
    const auto dir = crl::testing::temp_dir("errors");
    write_synthetic_dataset(dir, 3, 64, 3, 2, 1);
    EXPECT_THROW(scan_dataset_ids(dir / "nope"), DataError);
    fs::remove(dir / "masks" / (synth_id(1) + ".png"));
    EXPECT_THROW(scan_dataset_ids(dir), DataError);
    EXPECT_THROW(load_sample(dir, synth_id(1), 64, 64, "synthetic"), DataError);
    Gray8 flat(8, 8);
    write_png_gray(dir / "images" / "flat.png", flat);
    write_png_gray(dir / "masks" / "flat.png", flat);
    EXPECT_THROW(load_sample(dir, "flat", 8, 8, "synthetic"), DataError);
}

TEST(CorruptSamples, RecordsProvenance) {
    auto samples = synth_shapes(10, 64, 1);
    NoiseSpec spec;
    spec.ratio = 0.5;
    spec.iter_min = 2;
    spec.iter_max = 4;
    const auto log = corrupt_samples(samples, spec);
    ASSERT_EQ(log.size(), 5u);
    int corrupted = 0;
    for (const auto& s : samples) {
        corrupted += s.provenance.corrupted;
        if (!s.provenance.corrupted) EXPECT_EQ(s.train_mask, s.clean_mask);
        else EXPECT_NE(s.train_mask, s.clean_mask);
    }
    EXPECT_EQ(corrupted, 5);
    for (const auto& e : log) EXPECT_EQ(samples[e.index].id, e.id);
}
