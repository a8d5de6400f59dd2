#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

#include "crl/metrics.hpp"
#include "crl/morphology.hpp"
#include "test_util.hpp"

using namespace crl;
using crl::testing::random_mask;

namespace {

// n iterations of a 3x3 element equal one pass over the n-ball of its metric
// (Chebyshev for the square, Manhattan for the cross); outside pixels are 0.
BinaryMask ball_oracle(const BinaryMask& m, int n, StructuringElement se, bool erode_op) {
    const int h = m.height(), w = m.width();
    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool all = true, any = false;
            for (int dy = -n; dy <= n; ++dy)
                for (int dx = -n; dx <= n; ++dx) {
                    const int dist = se == StructuringElement::Square3 ? std::max(std::abs(dy), std::abs(dx))
                                                                       : std::abs(dy) + std::abs(dx);
                    if (dist > n) continue;
                    const int yy = y + dy, xx = x + dx;
                    const int v = (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0 : m(yy, xx);
                    all = all && v == 1;
                    any = any || v == 1;
                }
            out(y, x) = erode_op ? all : any;
        }
    return out;
}

bool leq(const BinaryMask& a, const BinaryMask& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > b[i]) return false;
    return true;
}

BinaryMask blob(Rng& rng, int h, int w) {
    BinaryMask m(h, w);
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w), r = rng.uniform(1, h / 2.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r;
    return m;
}

}  // namespace

TEST(Morphology, ErodeFiveByFiveAllOnes) {
    const BinaryMask ones(5, 5, std::vector<std::uint8_t>(25, 1));
    const BinaryMask e = erode(ones, 1);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) EXPECT_EQ(e(y, x), (y >= 1 && y <= 3 && x >= 1 && x <= 3) ? 1 : 0);
}

TEST(Morphology, DilateSingleCentre) {
    BinaryMask m(5, 5);
    m(2, 2) = 1;
    const BinaryMask d = dilate(m, 1);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) EXPECT_EQ(d(y, x), (y >= 1 && y <= 3 && x >= 1 && x <= 3) ? 1 : 0);
    const BinaryMask c = dilate(m, 1, StructuringElement::Cross3);
    EXPECT_EQ(c.count(), 5u);
    EXPECT_EQ(c(1, 1), 0);
}

TEST(Morphology, IdentityAndAbsorbingCases) {
    Rng rng(1);
    const BinaryMask m = random_mask(rng, 7, 9);
    EXPECT_EQ(erode(m, 0), m);
    EXPECT_EQ(dilate(m, 0), m);
    const BinaryMask zeros(6, 6);
    EXPECT_EQ(erode(zeros, 4), zeros);
    const BinaryMask ones(6, 6, std::vector<std::uint8_t>(36, 1));
    EXPECT_EQ(dilate(ones, 4), ones);
    EXPECT_THROW(erode(m, -1), ConfigError);
    EXPECT_THROW(dilate(m, -1), ConfigError);
}

TEST(Morphology, MatchesBallOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int h = static_cast<int>(rng.uniform_int(1, 20)), w = static_cast<int>(rng.uniform_int(1, 20));
        const BinaryMask m = trial % 2 ? random_mask(rng, h, w, rng.uniform(0.2, 0.9)) : blob(rng, h, w);
        const int n = static_cast<int>(rng.uniform_int(0, 6));
        for (auto se : {StructuringElement::Square3, StructuringElement::Cross3}) {
            EXPECT_EQ(erode(m, n, se), ball_oracle(m, n, se, true));
            EXPECT_EQ(dilate(m, n, se), ball_oracle(m, n, se, false));
        }
    }
}

TEST(Morphology, Containment) {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = static_cast<int>(rng.uniform_int(1, 24)), w = static_cast<int>(rng.uniform_int(1, 24));
        const BinaryMask m = trial % 2 ? random_mask(rng, h, w, rng.uniform()) : blob(rng, h, w);
        const int k = static_cast<int>(rng.uniform_int(0, 8));
        const auto se = trial % 3 ? StructuringElement::Square3 : StructuringElement::Cross3;
        EXPECT_TRUE(leq(erode(m, k, se), m));
        EXPECT_TRUE(leq(m, dilate(m, k, se)));
    }
}

TEST(Morphology, Composition) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = static_cast<int>(rng.uniform_int(1, 20)), w = static_cast<int>(rng.uniform_int(1, 20));
        const BinaryMask m = trial % 2 ? random_mask(rng, h, w, rng.uniform(0.3, 0.95)) : blob(rng, h, w);
        const int a = static_cast<int>(rng.uniform_int(0, 5)), b = static_cast<int>(rng.uniform_int(0, 5));
        const auto se = trial % 3 ? StructuringElement::Square3 : StructuringElement::Cross3;
        EXPECT_EQ(erode(erode(m, a, se), b, se), erode(m, a + b, se));
        EXPECT_EQ(dilate(dilate(m, a, se), b, se), dilate(m, a + b, se));
    }
}

TEST(Corruption, CountIsRoundHalfUp) {
    const std::vector<std::size_t> expect = {0, 99, 198, 297, 396};
    const double ratios[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    Rng rng(5);
    std::vector<BinaryMask> masks;
    for (int i = 0; i < 396; ++i) masks.push_back(blob(rng, 12, 12));
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(corrupted_count(ratios[i], 396), expect[static_cast<std::size_t>(i)]);
        NoiseSpec spec;
        spec.ratio = ratios[i];
        spec.iter_min = 1;
        spec.iter_max = 3;
        spec.seed = 17;
        EXPECT_EQ(corrupt_dataset(masks, spec).log.size(), expect[static_cast<std::size_t>(i)]);
    }
    EXPECT_EQ(corrupted_count(0.5, 3), 2u);  // 1.5 rounds up
    EXPECT_EQ(corrupted_count(0.1, 5), 1u);  // 0.5 rounds up
    EXPECT_EQ(corrupted_count(0.1, 4), 0u);
}

TEST(Corruption, UntouchedMasksAreIdenticalAndLogIsConsistent) {
    Rng rng(6);
    std::vector<BinaryMask> masks;
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) {
        masks.push_back(blob(rng, 16, 16));
        ids.push_back("s" + std::to_string(i));
    }
    NoiseSpec spec;
    spec.ratio = 0.4;
    spec.seed = 3;
    const auto r = corrupt_dataset(masks, spec, ids);
    std::set<std::size_t> touched;
    for (const auto& e : r.log) {
        touched.insert(e.index);
        EXPECT_EQ(e.id, ids[e.index]);
        EXPECT_GE(e.iterations, 5);
        EXPECT_LE(e.iterations, 15);
        const BinaryMask expect = e.op == NoiseOp::Erode ? erode(masks[e.index], e.iterations)
                                                         : dilate(masks[e.index], e.iterations);
        EXPECT_EQ(r.masks[e.index], expect);
        EXPECT_DOUBLE_EQ(e.dice_vs_clean, dice(r.masks[e.index], masks[e.index]));
    }
    EXPECT_EQ(touched.size(), 20u);
    EXPECT_TRUE(std::is_sorted(r.log.begin(), r.log.end(),
                               [](const auto& a, const auto& b) { return a.index < b.index; }));
    for (std::size_t i = 0; i < masks.size(); ++i)
        if (!touched.count(i)) EXPECT_EQ(r.masks[i], masks[i]);
}

TEST(Corruption, CorruptedMasksDifferUnlessFixedPoint) {
    Rng rng(7);
    std::vector<BinaryMask> masks;
    for (int i = 0; i < 60; ++i) masks.push_back(i % 10 == 0 ? BinaryMask(8, 8) : blob(rng, 16, 16));
    NoiseSpec spec;
    spec.ratio = 1.0;
    spec.iter_min = 1;
    spec.iter_max = 4;
    const auto r = corrupt_dataset(masks, spec);
    for (const auto& e : r.log) {
        const auto& m = masks[e.index];
        const bool fixed = m.count() == 0 || (e.op == NoiseOp::Dilate && m.count() == m.size());
        if (!fixed) EXPECT_NE(r.masks[e.index], m);
    }
}

TEST(Corruption, DeterministicAndModes) {
    Rng rng(8);
    std::vector<BinaryMask> masks;
    for (int i = 0; i < 40; ++i) masks.push_back(blob(rng, 16, 16));
    NoiseSpec spec;
    spec.ratio = 0.5;
    spec.seed = 99;
    const auto a = corrupt_dataset(masks, spec), b = corrupt_dataset(masks, spec);
    EXPECT_EQ(a.log, b.log);
    EXPECT_EQ(a.masks, b.masks);
    spec.seed = 100;
    EXPECT_NE(corrupt_dataset(masks, spec).log, a.log);

    int erodes = 0;
    for (const auto& e : a.log) erodes += e.op == NoiseOp::Erode;
    EXPECT_GT(erodes, 0);
    EXPECT_LT(erodes, static_cast<int>(a.log.size()));

    spec.mode = NoiseMode::Erode;
    for (const auto& e : corrupt_dataset(masks, spec).log) EXPECT_EQ(e.op, NoiseOp::Erode);
    spec.mode = NoiseMode::Dilate;
    for (const auto& e : corrupt_dataset(masks, spec).log) EXPECT_EQ(e.op, NoiseOp::Dilate);
}

TEST(Corruption, ZeroRatioAndValidation) {
    Rng rng(9);
    std::vector<BinaryMask> masks{blob(rng, 8, 8), blob(rng, 8, 8)};
    NoiseSpec spec;
    const auto r = corrupt_dataset(masks, spec);
    EXPECT_TRUE(r.log.empty());
    EXPECT_EQ(r.masks, masks);
    spec.ratio = 1.5;
    EXPECT_THROW(corrupt_dataset(masks, spec), ConfigError);
    spec.ratio = 0.5;
    spec.iter_min = 0;
    EXPECT_THROW(corrupt_dataset(masks, spec), ConfigError);
    spec.iter_min = 6;
    spec.iter_max = 5;
    EXPECT_THROW(spec.validate(), ConfigError);
    EXPECT_THROW(corrupt_dataset({}, NoiseSpec{}), ConfigError);
    EXPECT_EQ(parse_noise_mode("random"), NoiseMode::RandomChoice);
    EXPECT_EQ(parse_noise_mode("random-choice"), NoiseMode::RandomChoice);
    EXPECT_THROW(parse_noise_mode("blur"), ConfigError);
    EXPECT_EQ(parse_structuring_element(to_string(StructuringElement::Cross3)), StructuringElement::Cross3);
}
