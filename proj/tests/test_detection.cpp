#include "czsr/detection.hpp"

#include "czsr/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using czsr::background_weight;
using czsr::BackgroundNorm;
using czsr::Box;
using czsr::Detection;
using czsr::GroundTruthBox;
using czsr::iou;
using czsr::Matrix;
using czsr::nms;
using czsr::recall_at_k;
using czsr::Vector;

TEST(BackgroundWeight, SingleUnitRowIsItsOwnBackground) {
    Matrix w(1, 3);
    w << 0.6, 0.8, 0.0;
    const Vector bg = background_weight(w);
    EXPECT_TRUE(bg.isApprox(w.row(0).transpose(), 1e-12));
}

TEST(BackgroundWeight, TwoOrthonormalRows) {
    Matrix w(2, 2);
    w << 1, 0, 0, 1;
    const Vector bg = background_weight(w);
    // sum (1,1), squared norm 2 -> (0.5, 0.5)
    EXPECT_NEAR(bg[0], 0.5, 1e-12);
    EXPECT_NEAR(bg[1], 0.5, 1e-12);
}

TEST(BackgroundWeight, RejectsUnnormalizedRows) {
    Matrix w(2, 2);
    w << 2, 0, 0, 2;
    EXPECT_THROW(background_weight(w), std::invalid_argument);
}

TEST(BackgroundWeight, PlainNormVariant) {
    Matrix w(2, 2);
    w << 1, 0, 0, 1;
    const Vector bg = background_weight(w, BackgroundNorm::plain);
    // sum (1,1), norm sqrt(2) -> unit vector along the diagonal
    EXPECT_NEAR(bg.norm(), 1.0, 1e-12);
    EXPECT_NEAR(bg[0], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(BackgroundWeight, RejectsCancellingRows) {
    Matrix w(2, 2);
    w << 1, 0, -1, 0;
    EXPECT_THROW(background_weight(w), std::invalid_argument);
}

TEST(Iou, IdenticalAndDisjoint) {
    const Box a{0, 0, 2, 2};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, {10, 10, 2, 2}), 0.0);
}

TEST(Iou, HandComputedOverlap) {
    EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 2, 2}), 1.0 / 7.0, 1e-12);
}

TEST(Iou, SymmetricAndBounded) {
    auto rng = czsr::make_stream(61, "test.det");
    std::uniform_real_distribution<double> pos(-50.0, 50.0);
    std::uniform_real_distribution<double> size(1.0, 40.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const Box a{pos(rng), pos(rng), size(rng), size(rng)};
        const Box b{pos(rng), pos(rng), size(rng), size(rng)};
        const double ab = iou(a, b);
        EXPECT_DOUBLE_EQ(ab, iou(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
    }
}

TEST(Nms, SingleDetectionKept) {
    const std::vector<Detection> kept = nms({{{0, 0, 2, 2}, 0, 0.9}}, 0.4);
    ASSERT_EQ(kept.size(), 1u);
}

TEST(Nms, SuppressesOverlappingSameClassPair) {
    // (0,0,3,2) vs (1,0,3,2): intersection 4, union 8 -> IoU exactly 0.5 > 0.4.
    std::vector<Detection> dets = {
        {{0, 0, 3, 2}, 1, 0.9},
        {{1, 0, 3, 2}, 1, 0.7},
    };
    ASSERT_NEAR(iou(dets[0].box, dets[1].box), 0.5, 1e-12);
    const auto kept = nms(dets, 0.4);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
}

TEST(Nms, KeepsCrossClassOverlaps) {
    std::vector<Detection> dets = {
        {{0, 0, 2, 2}, 0, 0.9},
        {{0, 0, 2, 2}, 1, 0.8},
    };
    EXPECT_EQ(nms(dets, 0.4).size(), 2u);
}

TEST(Nms, OutputIsAntichainSubsetOfInput) {
    auto rng = czsr::make_stream(62, "test.det");
    std::uniform_real_distribution<double> pos(0.0, 20.0);
    std::uniform_real_distribution<double> size(2.0, 15.0);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 12; ++i) {
            dets.push_back({{pos(rng), pos(rng), size(rng), size(rng)}, cls(rng), score(rng)});
        }
        const auto kept = nms(dets, 0.4);
        EXPECT_LE(kept.size(), dets.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            for (std::size_t j = i + 1; j < kept.size(); ++j) {
                if (kept[i].class_id == kept[j].class_id) {
                    EXPECT_LE(iou(kept[i].box, kept[j].box), 0.4);
                }
            }
        }
    }
}

TEST(Nms, TiesKeepEarlierInputOrder) {
    std::vector<Detection> dets = {
        {{0, 0, 3, 2}, 1, 0.9},
        {{1, 0, 3, 2}, 1, 0.9},
    };
    const auto kept = nms(dets, 0.4);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_DOUBLE_EQ(kept[0].box.x, 0.0);
}

TEST(RecallAtK, PerfectDetectionsRecallEverything) {
    const std::vector<GroundTruthBox> gts = {{{0, 0, 4, 4}, 0}, {{10, 10, 4, 4}, 1}};
    std::vector<Detection> dets;
    for (const auto& gt : gts) dets.push_back({gt.box, gt.class_id, 0.9});
    EXPECT_DOUBLE_EQ(recall_at_k({dets}, {gts}, 0.5, 100, {0, 1}), 1.0);
}

TEST(RecallAtK, NoDetectionsRecallNothing) {
    const std::vector<GroundTruthBox> gts = {{{0, 0, 4, 4}, 0}};
    EXPECT_DOUBLE_EQ(recall_at_k({{}}, {gts}, 0.5, 100, {0}), 0.0);
}

TEST(RecallAtK, ThresholdSeparatesPointFourFromPointFive) {
    // One detection at IoU ~0.45 against its ground truth: recalled at 0.4,
    // missed at 0.5. Second ground truth unmatched.
    const Box gt_box{0, 0, 10, 10};
    // (0,0,10,10) vs (3.8,0,10,10): intersection 62, union 138 -> IoU 0.449.
    const Box near_box{3.8, 0, 10, 10};
    ASSERT_NEAR(iou(gt_box, near_box), 0.449, 0.002);
    const std::vector<GroundTruthBox> gts = {{gt_box, 0}, {{50, 50, 5, 5}, 0}};
    const std::vector<Detection> dets = {{near_box, 0, 0.9}};
    EXPECT_DOUBLE_EQ(recall_at_k({dets}, {gts}, 0.4, 100, {0}), 0.5);
    EXPECT_DOUBLE_EQ(recall_at_k({dets}, {gts}, 0.5, 100, {0}), 0.0);
}

TEST(RecallAtK, OneToOneMatchingClaimsBestOverlapFirst) {
    // Two detections, one ground truth: only one may claim it.
    const std::vector<GroundTruthBox> gts = {{{0, 0, 10, 10}, 0}};
    const std::vector<Detection> dets = {
        {{0, 0, 10, 10}, 0, 0.9},
        {{1, 0, 10, 10}, 0, 0.8},
    };
    EXPECT_DOUBLE_EQ(recall_at_k({dets}, {gts}, 0.5, 100, {0}), 1.0);
    // And a detection of the wrong class never claims it.
    const std::vector<Detection> wrong = {{{0, 0, 10, 10}, 1, 0.9}};
    EXPECT_DOUBLE_EQ(recall_at_k({wrong}, {gts}, 0.5, 100, {0}), 0.0);
}

TEST(RecallAtK, RejectsEmptyRestriction) {
    const std::vector<GroundTruthBox> gts = {{{0, 0, 4, 4}, 0}};
    EXPECT_THROW(recall_at_k({{}}, {gts}, 0.5, 100, {4}), std::invalid_argument);
}

TEST(RecallAtK, MonotoneInKAndThreshold) {
    auto rng = czsr::make_stream(63, "test.det");
    std::uniform_real_distribution<double> pos(0.0, 60.0);
    std::uniform_real_distribution<double> jitter(-3.0, 3.0);
    std::uniform_real_distribution<double> size(5.0, 20.0);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, 2);

    std::vector<std::vector<GroundTruthBox>> gts(50);
    std::vector<std::vector<Detection>> dets(50);
    for (int img = 0; img < 50; ++img) {
        for (int g = 0; g < 4; ++g) {
            const Box b{pos(rng), pos(rng), size(rng), size(rng)};
            const int c = cls(rng);
            gts[img].push_back({b, c});
            // Jittered detection, sometimes the wrong class.
            const Box d{b.x + jitter(rng), b.y + jitter(rng), b.w, b.h};
            dets[img].push_back({d, cls(rng) == 0 ? c : cls(rng), score(rng)});
        }
    }
    const std::vector<int> all = {0, 1, 2};
    double prev = -1.0;
    for (int k : {1, 2, 4, 8}) {
        const double r = recall_at_k(dets, gts, 0.4, k, all);
        EXPECT_GE(r, prev);
        prev = r;
    }
    for (int k : {1, 3, 6}) {
        EXPECT_GE(recall_at_k(dets, gts, 0.4, k, all), recall_at_k(dets, gts, 0.5, k, all));
    }
}

// detect_scene plumbing on a miniature world: two classes plus background.
struct DetectFixture {
    czsr::LabelSpace labels{{"a", "b"}, {"a"}};
    czsr::RelationGraph graph;
    Matrix weights;
    Vector w_bg;
    czsr::GeomEmbedConfig geom;
    czsr::RelNetParams relnet;

    DetectFixture() {
        graph = czsr::RelationGraph::build(labels, {{"a", "on", "b", 5}}, 0, 4);
        weights.resize(2, 2);
        weights << 1, 0, 0, 1;
        w_bg = background_weight(weights);
        geom.dims_per_component = 2;
        relnet = czsr::RelNetParams::init(geom, graph.predicate_count(), 4, 17);
    }
};

TEST(DetectScene, AllProposalsBelowThresholdGiveEmptyOutput) {
    DetectFixture fx;
    std::vector<czsr::Proposal> proposals = {{{0, 0, 5, 5}, 0.05}, {{4, 4, 5, 5}, 0.07}};
    std::vector<Vector> features = {Vector::Zero(2), Vector::Zero(2)};
    czsr::DetectConfig cfg;
    EXPECT_TRUE(czsr::detect_scene(proposals, features, fx.weights, fx.w_bg, fx.relnet,
                                   fx.geom, fx.graph, cfg)
                    .empty());
}

TEST(DetectScene, OutputCappedByMaxRegions) {
    DetectFixture fx;
    std::vector<czsr::Proposal> proposals;
    std::vector<Vector> features;
    auto rng = czsr::make_stream(64, "test.det");
    std::uniform_real_distribution<double> pos(0.0, 500.0);
    for (int i = 0; i < 30; ++i) {
        proposals.push_back({{pos(rng), pos(rng), 10, 10}, 0.5});
        features.push_back((Vector(2) << 1.0, 0.0).finished());
    }
    czsr::DetectConfig cfg;
    cfg.max_regions = 7;
    const auto dets = czsr::detect_scene(proposals, features, fx.weights, fx.w_bg, fx.relnet,
                                         fx.geom, fx.graph, cfg);
    EXPECT_LE(dets.size(), 7u);
}

TEST(DetectScene, GammaZeroEqualsUnaryOnlyPipeline) {
    DetectFixture fx;
    std::vector<czsr::Proposal> proposals;
    std::vector<Vector> features;
    auto rng = czsr::make_stream(65, "test.det");
    std::uniform_real_distribution<double> pos(0.0, 300.0);
    std::uniform_real_distribution<double> feat(-1.0, 1.0);
    for (int i = 0; i < 12; ++i) {
        proposals.push_back({{pos(rng), pos(rng), 12, 9}, 0.6});
        features.push_back((Vector(2) << feat(rng), feat(rng)).finished());
    }
    czsr::DetectConfig zero;
    zero.inference.gamma = 0.0;
    const auto with_crf = czsr::detect_scene(proposals, features, fx.weights, fx.w_bg,
                                             fx.relnet, fx.geom, fx.graph, zero);

    // Unary-only reference: classify each surviving proposal independently.
    std::vector<Detection> expected;
    Matrix extended(3, 2);
    extended.topRows(2) = fx.weights;
    extended.row(2) = fx.w_bg.transpose();
    for (std::size_t p = 0; p < proposals.size(); ++p) {
        const Vector lp = czsr::unary_log_probs(extended, features[p], {0, 1, 2});
        int best = 0;
        for (int c = 1; c < 3; ++c) {
            if (lp[c] > lp[best]) best = c;
        }
        if (best == 2) continue;
        expected.push_back({proposals[p].box, best, std::exp(lp[best])});
    }
    expected = czsr::nms(expected, zero.nms_iou);

    ASSERT_EQ(with_crf.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(with_crf[i].class_id, expected[i].class_id);
        EXPECT_NEAR(with_crf[i].score, expected[i].score, 1e-9);
        EXPECT_DOUBLE_EQ(with_crf[i].box.x, expected[i].box.x);
    }
}

}  // namespace
