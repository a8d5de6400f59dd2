#include <gtest/gtest.h>

#include <cmath>

#include "crl/correction.hpp"
#include "test_util.hpp"

using namespace crl;
using crl::testing::constant_soft;
using crl::testing::random_mask;
using crl::testing::random_soft;

namespace {

// Direct per-pixel evaluation of q_i^(1/T) / sum_j q_j^(1/T).
std::vector<double> sharpen_oracle(const std::vector<double>& q, double t) {
    std::vector<double> out(q.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) sum += out[i] = std::pow(q[i], 1.0 / t);
    for (double& v : out) v /= sum;
    return out;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

SoftLabel one_pixel(std::vector<double> v) {
    SoftLabel s(1, 1, static_cast<int>(v.size()));
    for (std::size_t c = 0; c < v.size(); ++c) s.at(0, static_cast<int>(c)) = v[c];
    return s;
}

}  // namespace

TEST(Sharpen, TemperatureOneIsIdentity) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const SoftLabel q = random_soft(rng, 4, 5, 2 + trial % 3);
        const SoftLabel s = sharpen(q, 1.0);
        for (std::size_t i = 0; i < q.values().size(); ++i) EXPECT_NEAR(s.values()[i], q.values()[i], 1e-9);
    }
}

TEST(Sharpen, KnownPixel) {
    const SoftLabel s = sharpen(one_pixel({0.6, 0.4}), 0.5);
    EXPECT_NEAR(s.at(0, 0), 0.69231, 1e-5);
    EXPECT_NEAR(s.at(0, 1), 0.30769, 1e-5);
    EXPECT_NEAR(s.at(0, 0), 0.36 / 0.52, 1e-12);
}

TEST(Sharpen, UniformIsFixedPoint) {
    for (double t : {0.1, 0.5, 2.0}) {
        const SoftLabel s = sharpen(one_pixel({0.5, 0.5}), t);
        EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
        EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);
    }
}

TEST(Sharpen, MatchesDirectPowerFormula) {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const int classes = 2 + trial % 4;
        const SoftLabel q = random_soft(rng, 1, 3, classes);
        const double t = rng.uniform(0.2, 3.0);
        const SoftLabel s = sharpen(q, t);
        for (std::size_t p = 0; p < q.pixels(); ++p) {
            const auto px = q.pixel(p);
            const auto ref = sharpen_oracle({px.begin(), px.end()}, t);
            for (int c = 0; c < classes; ++c) EXPECT_NEAR(s.at(p, c), ref[static_cast<std::size_t>(c)], 1e-12);
        }
    }
}

TEST(Sharpen, EntropyDoesNotIncreaseBelowTemperatureOne) {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + trial % 4;
        const SoftLabel q = random_soft(rng, 1, 1, classes);
        const double t = rng.uniform(0.05, 0.999);
        const SoftLabel s = sharpen(q, t);
        EXPECT_LE(entropy(s.pixel(0)), entropy(q.pixel(0)) + 1e-12);
        EXPECT_TRUE(s.is_simplex(1e-9));
    }
}

TEST(Sharpen, EntropyEqualityOnlyForUniformOrOneHot) {
    EXPECT_NEAR(entropy(sharpen(one_pixel({0.25, 0.25, 0.25, 0.25}), 0.5).pixel(0)), std::log(4.0), 1e-12);
    EXPECT_EQ(entropy(sharpen(one_pixel({0.0, 1.0}), 0.5).pixel(0)), 0.0);
    const SoftLabel q = one_pixel({0.3, 0.7});
    EXPECT_LT(entropy(sharpen(q, 0.5).pixel(0)), entropy(q.pixel(0)) - 1e-3);
}

TEST(Sharpen, ArgmaxAndOrderingPreserved) {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + trial % 4;
        const SoftLabel q = random_soft(rng, 1, 1, classes);
        const auto px = q.pixel(0);
        const auto top = std::max_element(px.begin(), px.end()) - px.begin();
        int ties = 0;
        for (double v : px) ties += v == px[static_cast<std::size_t>(top)];
        if (ties > 1) continue;  // strict maxima only
        const SoftLabel s = sharpen(q, rng.uniform(0.05, 5.0));
        const auto sp = s.pixel(0);
        EXPECT_EQ(std::max_element(sp.begin(), sp.end()) - sp.begin(), top);
        for (int a = 0; a < classes; ++a)
            for (int b = 0; b < classes; ++b)
                if (px[a] < px[b]) EXPECT_LE(sp[a], sp[b]);
    }
}

TEST(Sharpen, ZeroClassesStayZero) {
    const SoftLabel s = sharpen(one_pixel({0.0, 0.3, 0.7}), 0.5);
    EXPECT_EQ(s.at(0, 0), 0.0);
    EXPECT_NEAR(s.at(0, 1) + s.at(0, 2), 1.0, 1e-12);
}

TEST(Sharpen, SmallTemperatureApproachesOneHot) {
    const SoftLabel s = sharpen(one_pixel({0.45, 0.55}), 0.01);
    EXPECT_GT(s.at(0, 1), 1.0 - 1e-6);
}

TEST(Sharpen, RejectsBadInput) {
    EXPECT_THROW(sharpen(one_pixel({0.5, 0.5}), 0.0), ConfigError);
    EXPECT_THROW(sharpen(one_pixel({0.5, 0.5}), -1.0), ConfigError);
    EXPECT_THROW(sharpen(one_pixel({0.0, 0.0}), 0.5), ShapeError);
}

TEST(PeerAverage, ArithmeticMean) {
    const SoftLabel a = one_pixel({0.2, 0.8}), b = one_pixel({0.6, 0.4});
    const SoftLabel m = average_peer_prediction(a, b);
    EXPECT_NEAR(m.at(0, 0), 0.4, 1e-12);
    EXPECT_NEAR(m.at(0, 1), 0.6, 1e-12);
    Rng rng(5);
    const SoftLabel q = random_soft(rng, 3, 3);
    const SoftLabel same = average_peer_prediction(q, q);
    for (std::size_t i = 0; i < q.values().size(); ++i) EXPECT_NEAR(same.values()[i], q.values()[i], 1e-15);
    EXPECT_THROW(average_peer_prediction(q, random_soft(rng, 3, 4)), ShapeError);
}

TEST(CorrectedLabel, NeverReadsTargetWithTwoPeers) {
    Rng rng(6);
    const SoftLabel b = random_soft(rng, 2, 2), c = random_soft(rng, 2, 2);
    CorrectionConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const SoftLabel a = random_soft(rng, 2, 2);
        const std::array<const SoftLabel*, 3> maps{&a, &b, &c};
        const SoftLabel y = corrected_label_from(maps, Member::A, cfg);
        // Hand-built 2x2 oracle: per pixel, sharpen the mean of B and C.
        for (std::size_t p = 0; p < 4; ++p) {
            const auto ref = sharpen_oracle({(b.at(p, 0) + c.at(p, 0)) / 2, (b.at(p, 1) + c.at(p, 1)) / 2}, 0.5);
            EXPECT_NEAR(y.at(p, 0), ref[0], 1e-12);
            EXPECT_NEAR(y.at(p, 1), ref[1], 1e-12);
        }
    }
    // Without network A present at all.
    const std::array<const SoftLabel*, 3> no_a{nullptr, &b, &c};
    EXPECT_NO_THROW(corrected_label_from(no_a, Member::A, cfg));
}

TEST(CorrectedLabel, CyclicPeers) {
    Rng rng(7);
    const SoftLabel a = random_soft(rng, 2, 2), b = random_soft(rng, 2, 2), c = random_soft(rng, 2, 2);
    const std::array<const SoftLabel*, 3> maps{&a, &b, &c};
    CorrectionConfig cfg;
    cfg.temperature = 1.0;
    const SoftLabel yb = corrected_label_from(maps, Member::B, cfg);
    const SoftLabel yc = corrected_label_from(maps, Member::C, cfg);
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_NEAR(yb.values()[i], (a.values()[i] + c.values()[i]) / 2, 1e-15);
        EXPECT_NEAR(yc.values()[i], (a.values()[i] + b.values()[i]) / 2, 1e-15);
    }
    cfg.peer_count = 3;
    const SoftLabel y3 = corrected_label_from(maps, Member::A, cfg);
    for (std::size_t i = 0; i < 8; ++i)
        EXPECT_NEAR(y3.values()[i], (a.values()[i] + b.values()[i] + c.values()[i]) / 3, 1e-15);
}

TEST(CorrectedLabel, UniformAndNearOneHotPeers) {
    const SoftLabel u = constant_soft(3, 3, 0.5);
    const std::array<const SoftLabel*, 3> maps{nullptr, &u, &u};
    const SoftLabel y = corrected_label_from(maps, Member::A, CorrectionConfig{});
    for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.5);

    Rng rng(8);
    const BinaryMask m = random_mask(rng, 4, 4);
    const SoftLabel oh = SoftLabel::one_hot(m, 1e-7);
    const std::array<const SoftLabel*, 3> peers{nullptr, &oh, &oh};
    const SoftLabel y2 = corrected_label_from(peers, Member::A, CorrectionConfig{});
    for (std::size_t i = 0; i < oh.values().size(); ++i) EXPECT_NEAR(y2.values()[i], oh.values()[i], 1e-6);
    EXPECT_EQ(y2.argmax(), m);
}

TEST(CorrectedLabel, HardTargetsAreOneHot) {
    Rng rng(9);
    const SoftLabel b = random_soft(rng, 3, 3), c = random_soft(rng, 3, 3);
    const std::array<const SoftLabel*, 3> maps{nullptr, &b, &c};
    CorrectionConfig cfg;
    cfg.hard_targets = true;
    const SoftLabel y = corrected_label_from(maps, Member::A, cfg);
    for (double v : y.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_TRUE(y.is_simplex());
}

TEST(CorrectedLabel, FromNetworksUsesPeersOnly) {
    ModelConfig mc;
    TriNet tri(mc, 11);
    Rng rng(10);
    std::vector<Image> imgs;
    for (int i = 0; i < 2; ++i) {
        Image im(16, 16);
        for (std::size_t p = 0; p < im.size(); ++p) im[p] = static_cast<float>(rng.normal());
        imgs.push_back(im);
    }
    const auto before = corrected_label(tri, Member::A, imgs, CorrectionConfig{});
    // Perturb A only: its corrected labels must not move.
    for (auto* p : tri[Member::A].unet().parameters()) p->value.array() += 0.5f;
    const auto after = corrected_label(tri, Member::A, imgs, CorrectionConfig{});
    for (std::size_t i = 0; i < before.size(); ++i)
        for (std::size_t k = 0; k < before[i].values().size(); ++k)
            EXPECT_EQ(before[i].values()[k], after[i].values()[k]);
    // The corrected label equals sharpen(mean of peer predictions).
    const auto pb = tri[Member::B].predict_proba(imgs), pc = tri[Member::C].predict_proba(imgs);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        const SoftLabel ref = sharpen(average_peer_prediction(pb[i], pc[i]), 0.5);
        for (std::size_t k = 0; k < ref.values().size(); ++k) EXPECT_NEAR(after[i].values()[k], ref.values()[k], 1e-12);
    }
}

TEST(JointLoss, Endpoints) {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const SoftLabel pred = random_soft(rng, 3, 4);
        const BinaryMask noisy = random_mask(rng, 3, 4);
        const SoftLabel corr = random_soft(rng, 3, 4);
        EXPECT_NEAR(joint_loss(pred, noisy, corr, 1.0), cross_entropy(pred, noisy), 1e-9);
        EXPECT_NEAR(joint_loss(pred, noisy, corr, 0.0), soft_cross_entropy(pred, corr), 1e-9);
    }
}

TEST(JointLoss, LinearInAlpha) {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const SoftLabel pred = random_soft(rng, 3, 4);
        const BinaryMask noisy = random_mask(rng, 3, 4);
        const SoftLabel corr = random_soft(rng, 3, 4);
        const double l0 = joint_loss(pred, noisy, corr, 0.0), l1 = joint_loss(pred, noisy, corr, 1.0);
        const double a = rng.uniform(), b = rng.uniform();
        EXPECT_NEAR(joint_loss(pred, noisy, corr, a), a * l1 + (1 - a) * l0, 1e-9);
        const double mix = 0.3 * a + 0.7 * b;
        EXPECT_NEAR(joint_loss(pred, noisy, corr, mix),
                    0.3 * joint_loss(pred, noisy, corr, a) + 0.7 * joint_loss(pred, noisy, corr, b), 1e-9);
    }
}

TEST(JointLoss, ConvexCombinationExample) {
    // p(true) = exp(-0.8) against the noisy mask, exp(-0.4) against the corrected one.
    const BinaryMask noisy(1, 1, std::vector<std::uint8_t>{1});
    SoftLabel pred(1, 1, 2);
    pred.at(0, 1) = std::exp(-0.8);
    pred.at(0, 0) = 1 - pred.at(0, 1);
    SoftLabel corr(1, 1, 2);
    // Choose a soft target t with -t log p1 - (1-t) log p0 = 0.4.
    const double l1 = 0.8, l0 = -std::log(pred.at(0, 0));
    const double t = (0.4 - l0) / (l1 - l0);
    corr.at(0, 1) = t;
    corr.at(0, 0) = 1 - t;
    EXPECT_NEAR(joint_loss(pred, noisy, corr, 0.5), 0.6, 1e-12);
}

TEST(JointLoss, AgreeingOneHotTargetsReduceToPlainCrossEntropy) {
    Rng rng(14);
    const SoftLabel pred = random_soft(rng, 4, 4);
    const BinaryMask m = random_mask(rng, 4, 4);
    const SoftLabel corr = SoftLabel::one_hot(m);
    EXPECT_NEAR(joint_loss(pred, m, corr, 0.5), cross_entropy(pred, m), 1e-12);
}

TEST(JointLoss, Validation) {
    Rng rng(15);
    const SoftLabel pred = random_soft(rng, 2, 2);
    const BinaryMask m = random_mask(rng, 2, 2);
    EXPECT_THROW(joint_loss(pred, m, pred, 1.5), ConfigError);
    EXPECT_THROW(joint_loss(pred, m, pred, -0.1), ConfigError);
    EXPECT_THROW(joint_loss(pred, random_mask(rng, 2, 3), pred, 0.5), ShapeError);
    EXPECT_THROW(joint_loss(pred, m, random_soft(rng, 3, 2), 0.5), ShapeError);
}

TEST(CorrectionConfig, Validation) {
    CorrectionConfig c;
    EXPECT_NO_THROW(c.validate());
    c.temperature = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.jo_start_epoch = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.peer_count = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_jo_scope("all_samples"), JoScope::AllSamples);
    EXPECT_EQ(to_string(JoScope::UnselectedOnly), "unselected_only");
    EXPECT_THROW(parse_jo_scope("some"), ConfigError);
}
