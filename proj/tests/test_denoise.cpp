#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ppinet/denoise.hpp"

using namespace ppinet;

namespace {

Sketch sketch_of(int k) {
    Sketch s{"k" + std::to_string(k), {}};
    for (int i = 0; i < k; ++i)
        s.primitives.emplace_back(kind_from_index(i % kNumKinds),
                                  ParamVector{0.1 + 0.05 * i, 0.2, 0.3, 0.4, 0.5, 0.6});
    return s;
}

}  // namespace

TEST(FlipLabels, ExtremesAndRate) {
    std::vector<PrimitiveKind> kinds;
    for (int i = 0; i < 400; ++i) kinds.push_back(kind_from_index(i % kNumKinds));
    EXPECT_EQ(flip_labels(kinds, 0.0, std::uint64_t{3}), kinds);
    const auto all = flip_labels(kinds, 1.0, std::uint64_t{3});
    for (std::size_t i = 0; i < kinds.size(); ++i) EXPECT_NE(all[i], kinds[i]);

    std::vector<PrimitiveKind> many(100000, PrimitiveKind::Line);
    const auto out = flip_labels(many, 0.4, std::uint64_t{17});
    int flipped = 0;
    int to_kind[kNumKinds] = {0, 0, 0, 0};
    for (auto k : out) {
        flipped += k != PrimitiveKind::Line;
        ++to_kind[kind_index(k)];
    }
    EXPECT_NEAR(flipped / 1e5, 0.4, 0.01);
    // flips spread evenly over the other kinds
    for (int k = 1; k < kNumKinds; ++k) EXPECT_NEAR(to_kind[k] / static_cast<double>(flipped), 1.0 / 3.0, 0.02);
    EXPECT_THROW(flip_labels(kinds, 1.5, std::uint64_t{1}), Error);
}

TEST(NoiseParams, LambdaZeroIsIdentity) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 200; ++t) {
        const auto k = kind_from_index(t % kNumKinds);
        const auto prim = Primitive(k, {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)});
        EXPECT_EQ(noise_params(prim.params, k, 0.0, static_cast<std::uint64_t>(t)), prim.params);
    }
}

TEST(NoiseParams, HandExampleWithClamp) {
    const ParamVector p{0.2, 0.3, 0.8, 0.9, 0, 0};
    const ParamVector noise{1, 1, 1, 1, 1, 1};
    const auto out = noise_params_with(p, PrimitiveKind::Line, 0.3, noise);
    EXPECT_NEAR(out[0], 0.5, 1e-15);
    EXPECT_NEAR(out[1], 0.6, 1e-15);
    EXPECT_EQ(out[2], 1.0);
    EXPECT_EQ(out[3], 1.0);
    EXPECT_EQ(out[4], 0.0);
    EXPECT_EQ(out[5], 0.0);
}

TEST(NoiseParams, PaddingSlotsStayZeroAndRangeHolds) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 1000; ++t) {
        const auto pt = noise_params(ParamVector{0.5, 0.5, 0, 0, 0, 0}, PrimitiveKind::Point, 0.3, rng);
        for (int i = 2; i < kNumParams; ++i) EXPECT_EQ(pt[i], 0.0);
        const auto arc = noise_params(ParamVector{0.1, 0.9, 0.5, 0.5, 0.9, 0.1}, PrimitiveKind::Arc, 0.3, rng);
        for (double v : arc) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(BuildGroups, ZeroGroupsIsEmpty) {
    DenoiseConfig cfg;
    cfg.groups = 0;
    const auto b = build_groups({sketch_of(7), sketch_of(9)}, cfg, 1);
    EXPECT_EQ(b.groups, 0);
    EXPECT_EQ(b.group_size, 0);
    ASSERT_EQ(b.images.size(), 2u);
    EXPECT_TRUE(b.images[0].slots.empty());
}

TEST(BuildGroups, SevenObjectsThreeGroupsBatchMaxNine) {
    const auto b = build_groups({sketch_of(7), sketch_of(9)}, DenoiseConfig{}, 5);
    EXPECT_EQ(b.groups, 3);
    EXPECT_EQ(b.group_size, 9);
    const auto& im = b.images[0];
    ASSERT_EQ(im.slots.size(), 27u);
    int active = 0;
    for (const auto& s : im.slots) active += !s.padding();
    EXPECT_EQ(active, 21);
    for (int g = 0; g < 3; ++g) {
        for (int s = 0; s < 7; ++s) EXPECT_EQ(im.slot(g, s).gt_index, s);
        for (int s = 7; s < 9; ++s) EXPECT_TRUE(im.slot(g, s).padding());
    }
}

TEST(BuildGroups, DeterministicPerSeed) {
    const std::vector<Sketch> batch{sketch_of(6), sketch_of(11)};
    const auto a = build_groups(batch, DenoiseConfig{}, 77), b = build_groups(batch, DenoiseConfig{}, 77);
    const auto c = build_groups(batch, DenoiseConfig{}, 78);
    bool differs = false;
    for (std::size_t i = 0; i < a.images.size(); ++i)
        for (std::size_t s = 0; s < a.images[i].slots.size(); ++s) {
            EXPECT_EQ(a.images[i].slots[s].label, b.images[i].slots[s].label);
            EXPECT_EQ(a.images[i].slots[s].params, b.images[i].slots[s].params);
            differs |= a.images[i].slots[s].params != c.images[i].slots[s].params;
        }
    EXPECT_TRUE(differs);
}

TEST(BuildGroups, AblationSwitches) {
    DenoiseConfig cfg;
    cfg.label_noise = false;
    cfg.param_noise = false;
    const auto s = sketch_of(8);
    const auto b = build_groups({s}, cfg, 2);
    for (const auto& slot : b.images[0].slots) {
        EXPECT_EQ(slot.label, kind_index(s.primitives[slot.gt_index].kind));
        EXPECT_EQ(slot.params, s.primitives[slot.gt_index].params);
    }
}

TEST(AttentionMask, TwoGroupsOfTwoThreeQueries) {
    const auto a = build_attention_mask(2, 2, 3);
    ASSERT_EQ(a.rows(), 7);
    // matching rows cannot see any denoise column, but see each other
    for (int i = 4; i < 7; ++i) {
        for (int j = 0; j < 4; ++j) EXPECT_EQ(a(i, j), 1);
        for (int j = 4; j < 7; ++j) EXPECT_EQ(a(i, j), 0);
    }
    EXPECT_EQ(a(0, 1), 0);
    EXPECT_EQ(a(0, 2), 1);
    EXPECT_EQ(a(2, 1), 1);
    EXPECT_EQ(a(3, 2), 0);
    // denoise queries may look at the matching part
    for (int i = 0; i < 4; ++i)
        for (int j = 4; j < 7; ++j) EXPECT_EQ(a(i, j), 0);
}

TEST(AttentionMask, NoGroupsIsAllVisible) {
    const auto a = build_attention_mask(0, 0, 20);
    EXPECT_EQ(a.rows(), 20);
    EXPECT_EQ(a.sum(), 0);
}

TEST(AttentionMask, PaddingBlockedBothWays) {
    const auto a = build_attention_mask(2, 3, 2, 2);
    for (int pad : {2, 5}) {
        for (int j = 0; j < a.cols(); ++j) EXPECT_EQ(a(pad, j), 1);
        for (int i = 0; i < a.rows(); ++i) EXPECT_EQ(a(i, pad), 1);
    }
    const auto open = build_attention_mask(2, 3, 2, 2, false);
    EXPECT_EQ(open(0, 3), 0);
    EXPECT_EQ(open(6, 0), 0);
    EXPECT_EQ(open(6, 2), 1);
}

TEST(AttentionMask, ActiveSlotsMapOntoGroundTruth) {
    // every active slot maps to a distinct (group, gt) pair and every pair is covered
    const auto b = build_groups({sketch_of(6), sketch_of(10)}, DenoiseConfig{}, 9);
    for (const auto& im : b.images) {
        std::set<std::pair<int, int>> seen;
        for (int g = 0; g < im.groups; ++g)
            for (int s = 0; s < im.group_size; ++s)
                if (!im.slot(g, s).padding()) EXPECT_TRUE(seen.insert({g, im.slot(g, s).gt_index}).second);
        EXPECT_EQ(seen.size(), static_cast<std::size_t>(im.groups * im.active));
    }
}
