#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>

#include "oracles.hpp"
#include "ppinet/dataset.hpp"

using namespace ppinet;

namespace {

Sketch lines(int n) {
    Sketch s{"lines", {}};
    for (int i = 0; i < n; ++i) s.primitives.emplace_back(PrimitiveKind::Line, ParamVector{0.1 * i, 0, 0.1 * i, 0.5, 0, 0});
    return s;
}

void expect_sketch_near(const Sketch& a, const Sketch& b, double tol) {
    ASSERT_EQ(a.primitives.size(), b.primitives.size());
    for (std::size_t i = 0; i < a.primitives.size(); ++i) {
        EXPECT_EQ(a.primitives[i].kind, b.primitives[i].kind);
        for (int c = 0; c < kNumParams; ++c) EXPECT_NEAR(a.primitives[i].params[c], b.primitives[i].params[c], tol);
    }
}

}  // namespace

TEST(Normalize, SingleLine) {
    const auto s = normalize_sketch({"a", {Primitive(PrimitiveKind::Line, {0, 0, 2, 0, 0, 0})}});
    EXPECT_EQ(s.primitives[0].params, (ParamVector{0, 0.5, 1, 0.5, 0, 0}));
}

TEST(Normalize, SingleCircle) {
    const auto s = normalize_sketch({"c", {Primitive(PrimitiveKind::Circle, {10, 10, 1, 0, 0, 0})}});
    EXPECT_NEAR(s.primitives[0].params[0], 0.5, 1e-15);
    EXPECT_NEAR(s.primitives[0].params[1], 0.5, 1e-15);
    EXPECT_NEAR(s.primitives[0].params[2], 0.5, 1e-15);
}

TEST(Normalize, DegenerateExtentThrows) {
    EXPECT_THROW(normalize_sketch({"p", {Primitive(PrimitiveKind::Point, {0.3, 0.3, 0, 0, 0, 0})}}),
                 DegenerateExtentError);
    EXPECT_THROW(normalize_sketch({"e", {}}), DegenerateExtentError);
}

TEST(Normalize, IdempotentOnGeneratedSketches) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto s = generate_sketch(seed);
        expect_sketch_near(normalize_sketch(s), s, 1e-12);
    }
}

TEST(Normalize, CommutesWithTranslationAndScale) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> shift(-5, 5), scale(0.2, 7);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = generate_sketch(seed);
        const double tx = shift(rng), ty = shift(rng), k = scale(rng);
        Sketch moved{s.id, {}};
        for (const auto& p : s.primitives) {
            ParamVector q = p.params;
            if (p.kind == PrimitiveKind::Circle) {
                q = {q[0] * k + tx, q[1] * k + ty, q[2] * k, 0, 0, 0};
            } else {
                const auto m = param_mask(p.kind);
                for (int i = 0; i < kNumParams; i += 2)
                    if (m[i]) {
                        q[i] = q[i] * k + tx;
                        q[i + 1] = q[i + 1] * k + ty;
                    }
            }
            Primitive moved_p;
            moved_p.kind = p.kind;
            moved_p.params = q;
            moved.primitives.push_back(moved_p);
        }
        expect_sketch_near(normalize_sketch(moved), normalize_sketch(s), 1e-9);
    }
}

TEST(Filter, CountBoundaries) {
    EXPECT_EQ(filter_sketch(lines(5)).reason, FilterReason::TooFew);
    EXPECT_TRUE(filter_sketch(lines(6)).accepted);
    EXPECT_TRUE(filter_sketch(lines(16)).accepted);
    EXPECT_EQ(filter_sketch(lines(17)).reason, FilterReason::TooMany);
}

TEST(Generator, DeterministicPerSeed) {
    EXPECT_EQ(generate_sketch(1), generate_sketch(1));
    EXPECT_EQ(corpus_to_json({generate_sketch(1)}).dump(), corpus_to_json({generate_sketch(1)}).dump());
    EXPECT_NE(generate_sketch(1), generate_sketch(2));
    EXPECT_EQ(generate_sketch(7).id, "gen-7");
}

TEST(Generator, TenThousandSeedsPassFilterAndLinesDominate) {
    std::map<PrimitiveKind, long> freq;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const auto s = generate_sketch(seed);
        ASSERT_TRUE(filter_sketch(s).accepted) << s.id;
        for (const auto& p : s.primitives) {
            ASSERT_TRUE(is_normalized(p)) << s.id;
            ++freq[p.kind];
        }
    }
    for (auto k : {PrimitiveKind::Circle, PrimitiveKind::Arc, PrimitiveKind::Point})
        EXPECT_GT(freq[PrimitiveKind::Line], freq[k]);
}

TEST(Split, PureFunctionWithRoughFractions) {
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 20000; ++i) {
        const std::string id = "gen-" + std::to_string(i);
        const auto s = assign_split(id, 42);
        EXPECT_EQ(s, assign_split(id, 42));
        ++counts[static_cast<int>(s)];
    }
    EXPECT_NEAR(counts[0] / 20000.0, 0.925, 0.01);
    EXPECT_NEAR(counts[1] / 20000.0, 0.025, 0.005);
    EXPECT_NEAR(counts[2] / 20000.0, 0.05, 0.006);
    EXPECT_THROW(assign_split("x", 0, CorpusSplit{0.5, 0.1, 0.1}), Error);
}

TEST(Corpus, ThreeValidRecords) {
    const std::string text = corpus_to_json({generate_sketch(1), generate_sketch(2), generate_sketch(3)}).dump();
    const auto r = load_corpus_string(text);
    EXPECT_EQ(r.sketches.size(), 3u);
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_EQ(r.sketches[1].id, "gen-2");
}

TEST(Corpus, UnsupportedKindSkipped) {
    auto j = corpus_to_json({generate_sketch(1), generate_sketch(2)});
    j[0]["primitives"][0]["kind"] = "spline";
    const auto r = load_corpus_string(j.dump());
    EXPECT_EQ(r.sketches.size(), 1u);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_THROW(load_corpus_string(j.dump(), LoadOptions{true, true, true}), SchemaError);
}

TEST(Corpus, EmptyFileIsEmptyStream) {
    EXPECT_TRUE(load_corpus_string("").sketches.empty());
    EXPECT_TRUE(load_corpus_string("  \n").sketches.empty());
    EXPECT_TRUE(load_corpus_string("[]").sketches.empty());
    EXPECT_THROW(load_corpus_string("{"), SchemaError);
    EXPECT_THROW(load_corpus_string("{}"), SchemaError);
}

TEST(Corpus, TooFewPrimitivesSkipped) {
    auto s = generate_sketch(3);
    s.primitives.resize(5);
    EXPECT_EQ(load_corpus_string(corpus_to_json({s}).dump()).skipped, 1u);
}

TEST(Corpus, FileRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "ppinet_dataset_test";
    std::filesystem::create_directories(dir);
    const auto sketches = generate_corpus(100, 20);
    save_corpus(dir / "c.json", sketches);
    const auto back = load_corpus(dir / "c.json", LoadOptions{true, false, true});
    EXPECT_EQ(back.sketches, sketches);
    EXPECT_THROW(load_corpus(dir / "missing.json"), IoError);
    std::filesystem::remove_all(dir);
}
