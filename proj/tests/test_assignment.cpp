#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "ppinet/assignment.hpp"
#include "ppinet/numcore/gradcheck.hpp"

using namespace ppinet;
using M = nc::Matrix<double>;

namespace {

DecoderRow row_of(const std::array<double, kNumKinds>& probs, const ParamVector& params) {
    DecoderRow r;
    r.probs = probs;
    r.params = params;
    return r;
}

DecoderOutput random_rows(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    DecoderOutput out;
    for (int i = 0; i < n; ++i)
        out.push_back(row_of({u(rng), u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)}));
    return out;
}

std::vector<Primitive> random_gts(std::mt19937_64& rng, int k) {
    std::vector<Primitive> out;
    for (int i = 0; i < k; ++i) out.push_back(oracle::random_primitive(rng));
    return out;
}

// GT nudged by up to `amount` on its active slots, kept inside [0,1].
ParamVector nudge(std::mt19937_64& rng, const Primitive& gt, double amount) {
    std::uniform_real_distribution<double> u(-amount, amount);
    ParamVector p = gt.params;
    for (auto& v : p) v = std::clamp(v + u(rng), 0.01, 0.99);
    return p;
}

M params_matrix(const std::vector<ParamVector>& rows) {
    M m(static_cast<Eigen::Index>(rows.size()), kNumParams);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < kNumParams; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][c];
    return m;
}

}  // namespace

TEST(ClassificationCost, HalfProbabilityAndMonotone) {
    EXPECT_NEAR(classification_cost({0.5, 0.1, 0.1, 0.1}, PrimitiveKind::Line), -0.08664, 5e-6);
    EXPECT_NEAR(classification_cost({0.5, 0.1, 0.1, 0.1}, PrimitiveKind::Line), oracle::focal_cost(0.5), 1e-15);
    double prev = classification_cost({0.01, 0, 0, 0}, PrimitiveKind::Line);
    for (double p = 0.02; p < 0.995; p += 0.01) {
        const double c = classification_cost({0, 0, p, 0}, PrimitiveKind::Arc);
        EXPECT_NEAR(c, oracle::focal_cost(p), 1e-12);
        EXPECT_LT(c, classification_cost({p, 0, 0, 0}, PrimitiveKind::Circle) + 1e-12);
        EXPECT_LT(c, prev);
        prev = c;
    }
    // clamped ends stay finite
    EXPECT_TRUE(std::isfinite(classification_cost({0, 0, 0, 0}, PrimitiveKind::Point)));
    EXPECT_TRUE(std::isfinite(classification_cost({1, 1, 1, 1}, PrimitiveKind::Point)));
}

TEST(L1Cost, HandCases) {
    EXPECT_NEAR(l1_cost({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), 0.0, 0.0);
    EXPECT_NEAR(l1_cost({0.2, 0.2, 0.3, 0.4, 0.5, 0.6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), 0.1, 1e-15);
    // unused slots of the GT are zero, so a prediction is charged for leaving them set
    EXPECT_NEAR(l1_cost({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0, 0, 0, 0}), 2.0, 1e-15);
}

TEST(ChamferCost, MinimumOverKinds) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 100; ++t) {
        const auto gt = oracle::random_primitive(rng);
        const auto pred = nudge(rng, gt, 0.2);
        double best = 1e9;
        for (auto k : kAllKinds) best = std::min(best, oracle::chamfer(sample_points<double>(k, pred), sample_points(gt)));
        EXPECT_NEAR(chamfer_cost(pred, gt), best, 1e-12);
    }
    const Primitive c(PrimitiveKind::Circle, {0.5, 0.5, 0.2, 0, 0, 0});
    EXPECT_NEAR(chamfer_cost(c.params, c), 0.0, 1e-15);
}

TEST(CostMatrix, MatchesIndependentRecomputation) {
    std::mt19937_64 rng(3);
    const auto preds = random_rows(rng, 5);
    const auto gts = random_gts(rng, 3);
    const auto c = cost_matrix(preds, gts);
    ASSERT_EQ(c.rows(), 3);
    ASSERT_EQ(c.cols(), 5);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 5; ++i) {
            double l1 = 0.0;
            for (int s = 0; s < kNumParams; ++s) l1 += std::abs(preds[i].params[s] - gts[j].params[s]);
            double cd = 1e9;
            for (auto k : kAllKinds)
                cd = std::min(cd, oracle::chamfer(sample_points<double>(k, preds[i].params), sample_points(gts[j])));
            const double want = 2.0 * oracle::focal_cost(preds[i].probs[kind_index(gts[j].kind)]) + 2.0 * l1 + 5.0 * cd;
            EXPECT_NEAR(c(j, i), want, 1e-12) << j << "," << i;
        }
    EXPECT_EQ(cost_matrix(preds, gts, CostWeights{0, 0, 0}), Eigen::MatrixXd::Zero(3, 5));
    EXPECT_THROW(cost_matrix(random_rows(rng, 2), gts), SizeError);
    EXPECT_EQ(cost_matrix(preds, {}).rows(), 0);
}

TEST(Hungarian, SmallCases) {
    Eigen::MatrixXd one(1, 1);
    one << 4.5;
    auto a = hungarian(one);
    EXPECT_EQ(a.query_of, std::vector<int>{0});
    EXPECT_EQ(a.total, 4.5);
    Eigen::MatrixXd two(2, 2);
    two << 1, 2, 2, 1;
    a = hungarian(two);
    EXPECT_EQ(a.query_of, (std::vector<int>{0, 1}));
    EXPECT_EQ(a.total, 2.0);
    Eigen::MatrixXd wide(2, 4);
    wide << 5, 4, 1, 9, 5, 4, 0, 9;
    a = hungarian(wide);
    EXPECT_EQ(a.query_of, (std::vector<int>{1, 2}));
    EXPECT_EQ(hungarian(Eigen::MatrixXd(0, 3)).query_of.size(), 0u);
}

TEST(Hungarian, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int t = 0; t < 300; ++t) {
        const int k = 1 + static_cast<int>(rng() % 5), n = k + static_cast<int>(rng() % 3);
        Eigen::MatrixXd c(k, n);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
        const auto got = hungarian(c);
        const auto want = oracle::exhaustive_assignment(c);
        EXPECT_NEAR(got.total, want.total, 1e-12);
        EXPECT_EQ(got.query_of, want.cols);
    }
}

TEST(Hungarian, IntegerTiesGiveLexicographicallySmallest) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 300; ++t) {
        const int k = 1 + static_cast<int>(rng() % 5), n = k + static_cast<int>(rng() % 3);
        Eigen::MatrixXd c(k, n);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<double>(rng() % 3);
        const auto got = hungarian(c);
        const auto want = oracle::exhaustive_assignment(c);
        EXPECT_EQ(got.total, want.total);
        EXPECT_EQ(got.query_of, want.cols);
    }
    EXPECT_EQ(hungarian(Eigen::MatrixXd::Zero(3, 6)).query_of, (std::vector<int>{0, 1, 2}));
}

TEST(Hungarian, RowConstantInvariance) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        Eigen::MatrixXd c(4, 6);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
        Eigen::MatrixXd shifted = c;
        double added = 0.0;
        for (int r = 0; r < 4; ++r) {
            const double s = 10.0 * u(rng);
            shifted.row(r).array() += s;
            added += s;
        }
        const auto a = hungarian(c), b = hungarian(shifted);
        EXPECT_EQ(a.query_of, b.query_of);
        EXPECT_NEAR(b.total, a.total + added, 1e-10);
    }
}

TEST(Hungarian, Errors) {
    EXPECT_THROW(hungarian(Eigen::MatrixXd::Zero(3, 2)), SizeError);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
    c(1, 0) = std::nan("");
    EXPECT_THROW(hungarian(c), NonFiniteCostError);
    c(1, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(hungarian(c), NonFiniteCostError);
}

TEST(Losses, FocalValuesAtHalfProbability) {
    nc::Graph<double> g;
    auto logits = g.leaf(M::Zero(1, 4));
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(1, 4);
    t(0, 2) = 1.0;
    const double v = focal_loss_rows(logits, {0}, t).scalar();
    const double ln2 = std::log(2.0);
    EXPECT_NEAR(v, 0.25 * 0.25 * ln2 + 3 * 0.75 * 0.25 * ln2, 1e-15);
    EXPECT_NEAR(v, oracle::focal_loss(0.5, 1) + 3 * oracle::focal_loss(0.5, 0), 1e-15);
}

TEST(Losses, ZeroAtPerfectPrediction) {
    std::mt19937_64 rng(2);
    const auto gts = random_gts(rng, 5);
    nc::Graph<double> g;
    M lg = M::Constant(5, 4, -40.0);
    std::vector<ParamVector> ps;
    for (int r = 0; r < 5; ++r) {
        lg(r, kind_index(gts[r].kind)) = 40.0;
        ps.push_back(gts[r].params);
    }
    auto logits = g.leaf(lg), params = g.leaf(params_matrix(ps));
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(5, 4);
    for (int r = 0; r < 5; ++r) t(r, kind_index(gts[r].kind)) = 1.0;
    const std::vector<int> rows{0, 1, 2, 3, 4};
    EXPECT_LT(focal_loss_rows(logits, rows, t).scalar(), 1e-30);
    EXPECT_EQ(masked_l1_rows(params, rows, gts).scalar(), 0.0);
    EXPECT_NEAR(chamfer_rows(params, rows, gts).scalar(), 0.0, 1e-12);
}

TEST(Losses, MaskedL1IgnoresUnusedSlots) {
    nc::Graph<double> g;
    const std::vector<Primitive> gts{Primitive(PrimitiveKind::Point, {0.3, 0.4, 0, 0, 0, 0}),
                                     Primitive(PrimitiveKind::Line, {0.1, 0.2, 0.3, 0.4, 0, 0})};
    auto params = g.leaf(params_matrix({{0.3, 0.4, 0.9, 0.9, 0.9, 0.9}, {0.2, 0.2, 0.3, 0.4, 0.7, 0.7}}));
    EXPECT_NEAR(masked_l1_rows(params, {0, 1}, gts).scalar(), 0.1, 1e-15);
    g.backward(masked_l1_rows(params, {0, 1}, gts));
    const M grad = g.leaf_grad(params);
    EXPECT_EQ(grad(0, 2), 0.0);
    EXPECT_EQ(grad(1, 0), 1.0);
    EXPECT_EQ(grad(1, 4), 0.0);
}

TEST(Losses, GradientChecks) {
    std::mt19937_64 rng(5);
    const auto gts = random_gts(rng, 4);
    std::vector<ParamVector> ps;
    for (const auto& gt : gts) ps.push_back(nudge(rng, gt, 0.05));
    ps.push_back(ParamVector{0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
    const std::vector<int> rows{4, 0, 2, 1};
    const std::vector<Primitive> targets{gts[3], gts[0], gts[2], gts[1]};
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(4, 4);
    for (int r = 0; r < 4; ++r) t(r, kind_index(targets[r].kind)) = 1.0;

    M lg(5, 4);
    std::uniform_real_distribution<double> u(-3, 3);
    for (Eigen::Index i = 0; i < lg.size(); ++i) lg.data()[i] = u(rng);
    EXPECT_LT(nc::grad_check([&](nc::Graph<double>&, const auto& in) { return focal_loss_rows(in[0], rows, t); },
                             {lg}),
              1e-4);
    EXPECT_LT(nc::grad_check([&](nc::Graph<double>&, const auto& in) { return masked_l1_rows(in[0], rows, targets); },
                             {params_matrix(ps)}, 1e-6),
              1e-4);
    EXPECT_LT(nc::grad_check([&](nc::Graph<double>&, const auto& in) { return chamfer_rows(in[0], rows, targets); },
                             {params_matrix(ps)}, 1e-6),
              1e-4);
}

TEST(SetLoss, NoDenoiseTotalIsWeightedMatchingPart) {
    std::mt19937_64 rng(8);
    const auto gts = random_gts(rng, 3);
    nc::Graph<double> g;
    M lg(6, 4), pm(6, 6);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (Eigen::Index i = 0; i < lg.size(); ++i) lg.data()[i] = u(rng) * 4 - 2;
    for (Eigen::Index i = 0; i < pm.size(); ++i) pm.data()[i] = u(rng);
    ForwardOutput<double> f{g.leaf(lg), g.leaf(pm), 0, 6};
    const auto a = match_predictions(f, gts);
    const auto l = set_loss(f, gts, a, nullptr, CostWeights{}, 3.0);
    EXPECT_FALSE(l.denoise.has_value());
    EXPECT_NEAR(l.total.scalar(), 2 * l.match.cls.scalar() + 2 * l.match.param.scalar() + 5 * l.match.cd.scalar(),
                1e-12);
    // unmatched queries push every kind probability down
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(6, 4);
    for (int j = 0; j < 3; ++j) t(a.query_of[j], kind_index(gts[j].kind)) = 1.0;
    EXPECT_NEAR(l.match.cls.scalar(), focal_loss_rows(f.logits, {0, 1, 2, 3, 4, 5}, t).scalar() / 3.0, 1e-12);
}

TEST(SetLoss, DenoisePartInvariantToGroupOrder) {
    std::mt19937_64 rng(10);
    Sketch s{"s", random_gts(rng, 3)};
    const auto batch = build_groups({s}, DenoiseConfig{}, 4);
    const auto& dn = batch.images[0];
    const int dn_rows = dn.groups * dn.group_size;
    std::uniform_real_distribution<double> u(0.05, 0.95);
    M lg(dn_rows + 4, 4), pm(dn_rows + 4, 6);
    for (Eigen::Index i = 0; i < lg.size(); ++i) lg.data()[i] = u(rng) * 4 - 2;
    for (Eigen::Index i = 0; i < pm.size(); ++i) pm.data()[i] = u(rng);

    // reverse the group order in both the slots and the output rows
    DenoiseGroups rev = dn;
    M lg2 = lg, pm2 = pm;
    for (int gi = 0; gi < dn.groups; ++gi)
        for (int si = 0; si < dn.group_size; ++si) {
            const int from = gi * dn.group_size + si, to = (dn.groups - 1 - gi) * dn.group_size + si;
            rev.slots[to] = dn.slots[from];
            lg2.row(to) = lg.row(from);
            pm2.row(to) = pm.row(from);
        }
    nc::Graph<double> g;
    ForwardOutput<double> f1{g.leaf(lg), g.leaf(pm), dn_rows, 4}, f2{g.leaf(lg2), g.leaf(pm2), dn_rows, 4};
    const auto a = match_predictions(f1, s.primitives);
    const auto l1 = set_loss(f1, s.primitives, a, &dn, CostWeights{}, 3.0);
    const auto l2 = set_loss(f2, s.primitives, a, &rev, CostWeights{}, 3.0);
    ASSERT_TRUE(l1.denoise.has_value());
    EXPECT_NEAR(l1.total.scalar(), l2.total.scalar(), 1e-12);
    EXPECT_NEAR(l1.denoise->cd.scalar(), l2.denoise->cd.scalar(), 1e-12);
}
