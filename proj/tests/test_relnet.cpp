#include "czsr/relnet.hpp"

#include "czsr/rng.hpp"
#include "czsr/synthworld.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using czsr::Box;
using czsr::GeomEmbedConfig;
using czsr::LabelSpace;
using czsr::Matrix;
using czsr::RelationGraph;
using czsr::RelNetGrad;
using czsr::RelNetParams;
using czsr::Scene;
using czsr::TrainConfig;
using czsr::Vector;

GeomEmbedConfig small_geom() {
    GeomEmbedConfig cfg;
    cfg.dims_per_component = 2;  // input width 8
    return cfg;
}

LabelSpace abc_labels() {
    return LabelSpace({"a", "b", "c", "u"}, {"a", "b", "c"});
}

// a-(r0)->b, a-(r1)->b, b-(r0)->c, c-(r1)->a
RelationGraph abc_graph(const LabelSpace& labels) {
    return RelationGraph::build(labels,
                                {{"a", "r0", "b", 5},
                                 {"a", "r1", "b", 5},
                                 {"b", "r0", "c", 5},
                                 {"c", "r1", "a", 5}},
                                0, 10);
}

RelNetParams constant_output_params(const GeomEmbedConfig& cfg, const Vector& out) {
    RelNetParams p;
    const int hidden = 4;
    p.w1 = Matrix::Zero(hidden, cfg.output_dim());
    p.b1 = Vector::Zero(hidden);
    p.w2 = Matrix::Zero(out.size(), hidden);
    p.b2 = out;
    return p;
}

Scene two_region_scene(const LabelSpace& labels) {
    Scene scene;
    scene.id = "s";
    czsr::Region r0;
    r0.box = {0, 0, 10, 10};
    r0.label = labels.index("a");
    czsr::Region r1;
    r1.box = {5, 12, 8, 20};
    r1.label = labels.index("b");
    scene.regions = {r0, r1};
    return scene;
}

TEST(RelationPotentials, ZeroParametersGiveZeroPotentials) {
    const GeomEmbedConfig cfg = small_geom();
    const RelNetParams p = constant_output_params(cfg, Vector::Zero(3));
    const Vector out = relation_potentials(p, cfg, {0, 0, 4, 4}, {9, 1, 2, 7});
    ASSERT_EQ(out.size(), 3);
    EXPECT_DOUBLE_EQ(out.minCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(out.maxCoeff(), 0.0);
}

TEST(RelationPotentials, HandComposedScalarNet) {
    // One hidden unit, one relation: out = 2 * relu(x0 + 0.5) + 0.25 where x0
    // is the first embedding slot.
    const GeomEmbedConfig cfg = small_geom();
    RelNetParams p;
    p.w1 = Matrix::Zero(1, cfg.output_dim());
    p.w1(0, 0) = 1.0;
    p.b1 = Vector::Constant(1, 0.5);
    p.w2 = Matrix::Constant(1, 1, 2.0);
    p.b2 = Vector::Constant(1, 0.25);
    const Box bi{0, 0, 1, 1};
    const Box bj{3, 0, 2, 4};
    const Vector embedded = czsr::embed_pair_geometry(bi, bj, cfg);
    const double expected = 2.0 * std::max(0.0, embedded[0] + 0.5) + 0.25;
    const Vector out = relation_potentials(p, cfg, bi, bj);
    ASSERT_EQ(out.size(), 1);
    EXPECT_DOUBLE_EQ(out[0], expected);
}

TEST(RelationPotentials, OutputLengthMatchesRelationCount) {
    const GeomEmbedConfig cfg = small_geom();
    for (int k : {1, 3, 7}) {
        const RelNetParams p = RelNetParams::init(cfg, k, 16, 42);
        EXPECT_EQ(relation_potentials(p, cfg, {0, 0, 4, 4}, {2, 2, 4, 4}).size(), k);
    }
}

TEST(RelationPotentials, RejectsShapeMismatch) {
    const GeomEmbedConfig cfg = small_geom();
    RelNetParams p = RelNetParams::init(cfg, 2, 8, 0);
    GeomEmbedConfig wider = cfg;
    wider.dims_per_component = 4;
    EXPECT_THROW(relation_potentials(p, wider, {0, 0, 4, 4}, {2, 2, 4, 4}),
                 std::invalid_argument);
}

TEST(PairwisePotential, MaskedSumMatchesManualRecomputation) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 7);
    const Box bi{0, 0, 10, 10};
    const Box bj{4, 4, 6, 14};
    for (int ci = 0; ci < labels.size(); ++ci) {
        for (int cj = 0; cj < labels.size(); ++cj) {
            const Vector pots = relation_potentials(p, cfg, bi, bj);
            double manual = 0.0;
            for (int k : graph.relations_between(ci, cj)) manual += pots[k];
            EXPECT_DOUBLE_EQ(czsr::pairwise_potential(p, cfg, graph, ci, cj, bi, bj), manual);
        }
    }
}

TEST(PairwisePotential, EmptyEdgeSetGivesZero) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 7);
    // (b, a) has no edges.
    EXPECT_DOUBLE_EQ(czsr::pairwise_potential(p, cfg, graph, labels.index("b"),
                                              labels.index("a"), {0, 0, 4, 4}, {1, 1, 4, 4}),
                     0.0);
}

TEST(PairwisePotential, TwoAdmittedPredicatesSum) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    Vector fixed(graph.predicate_count());
    fixed << 0.3, 0.5;
    const RelNetParams p = constant_output_params(cfg, fixed);
    // (a, b) admits both predicates.
    EXPECT_NEAR(czsr::pairwise_potential(p, cfg, graph, labels.index("a"), labels.index("b"),
                                         {0, 0, 4, 4}, {1, 1, 4, 4}),
                0.8, 1e-15);
    // Directed: (b, a) admits none, asymmetry is expected.
    EXPECT_DOUBLE_EQ(czsr::pairwise_potential(p, cfg, graph, labels.index("b"),
                                              labels.index("a"), {0, 0, 4, 4}, {1, 1, 4, 4}),
                     0.0);
}

TEST(PseudoLikelihood, SingleRegionWithoutUnaryIsLogSeenCount) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 1);
    Scene scene = two_region_scene(labels);
    scene.regions.resize(1);
    const double loss = czsr::pseudo_likelihood_loss(scene, p, cfg, graph, nullptr, 1.0);
    EXPECT_NEAR(loss, std::log(3.0), 1e-12);
}

TEST(PseudoLikelihood, GammaZeroWithUnaryIsSeenCrossEntropy) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 2);
    const Scene scene = two_region_scene(labels);

    Matrix unary(2, labels.size());
    unary << 0.2, -0.4, 1.1, 9.0,  // unseen column value must never be read
        -0.3, 0.8, 0.1, -9.0;
    const double loss = czsr::pseudo_likelihood_loss(scene, p, cfg, graph, &unary, 0.0);

    double expected = 0.0;
    for (int i = 0; i < 2; ++i) {
        double denom = 0.0;
        for (int c : labels.seen()) denom += std::exp(unary(i, c));
        expected += std::log(denom) - unary(i, scene.regions[i].label);
    }
    EXPECT_NEAR(loss, expected, 1e-12);
}

TEST(PseudoLikelihood, TwoRegionSceneMatchesDirectEnumeration) {
    // Fix the net so every relation potential is a known constant, then
    // evaluate the conditional by brute force.
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    Vector fixed(graph.predicate_count());
    fixed << 0.7, -0.2;
    const RelNetParams p = constant_output_params(cfg, fixed);
    const Scene scene = two_region_scene(labels);
    const double gamma = 0.8;

    auto phi = [&](int ci, int cj) {
        double v = 0.0;
        for (int k : graph.relations_between(ci, cj)) v += fixed[k];
        return v;
    };
    double expected = 0.0;
    const int c0 = scene.regions[0].label;
    const int c1 = scene.regions[1].label;
    {
        // Region 0 conditioned on c1.
        double num = gamma * (phi(c0, c1) + phi(c1, c0));
        double denom = 0.0;
        for (int c : labels.seen()) denom += std::exp(gamma * (phi(c, c1) + phi(c1, c)));
        expected += std::log(denom) - num;
    }
    {
        double num = gamma * (phi(c1, c0) + phi(c0, c1));
        double denom = 0.0;
        for (int c : labels.seen()) denom += std::exp(gamma * (phi(c, c0) + phi(c0, c)));
        expected += std::log(denom) - num;
    }
    const double loss = czsr::pseudo_likelihood_loss(scene, p, cfg, graph, nullptr, gamma);
    EXPECT_NEAR(loss, expected, 1e-12);
}

TEST(PseudoLikelihood, AlwaysNonNegative) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    auto rng = czsr::make_stream(11, "test.relnet");
    std::uniform_real_distribution<double> pos(0.0, 100.0);
    std::uniform_real_distribution<double> size(2.0, 50.0);
    std::uniform_int_distribution<int> n_regions(1, 4);
    std::uniform_int_distribution<int> label(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const RelNetParams p =
            RelNetParams::init(cfg, graph.predicate_count(), 16, 100 + trial);
        Scene scene;
        const int n = n_regions(rng);
        for (int i = 0; i < n; ++i) {
            czsr::Region r;
            r.box = {pos(rng), pos(rng), size(rng), size(rng)};
            r.label = label(rng);
            scene.regions.push_back(r);
        }
        EXPECT_GE(czsr::pseudo_likelihood_loss(scene, p, cfg, graph, nullptr, 1.0), 0.0);
    }
}

TEST(PseudoLikelihood, RejectsUnseenLabels) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 5);
    Scene scene = two_region_scene(labels);
    scene.regions[1].label = labels.index("u");
    EXPECT_THROW(czsr::pseudo_likelihood_loss(scene, p, cfg, graph, nullptr, 1.0),
                 std::invalid_argument);
}

// Central finite differences over every parameter entry.
RelNetGrad finite_difference_grad(const Scene& scene, RelNetParams params,
                                  const GeomEmbedConfig& cfg, const RelationGraph& graph,
                                  const Matrix* unary, double gamma, double step) {
    RelNetGrad fd = RelNetGrad::zeros_like(params);
    auto probe = [&](double* value, double* slot) {
        const double saved = *value;
        *value = saved + step;
        const double up = czsr::pseudo_likelihood_loss(scene, params, cfg, graph, unary, gamma);
        *value = saved - step;
        const double down = czsr::pseudo_likelihood_loss(scene, params, cfg, graph, unary, gamma);
        *value = saved;
        *slot = (up - down) / (2.0 * step);
    };
    for (Eigen::Index i = 0; i < params.w1.size(); ++i) probe(params.w1.data() + i, fd.w1.data() + i);
    for (Eigen::Index i = 0; i < params.b1.size(); ++i) probe(params.b1.data() + i, fd.b1.data() + i);
    for (Eigen::Index i = 0; i < params.w2.size(); ++i) probe(params.w2.data() + i, fd.w2.data() + i);
    for (Eigen::Index i = 0; i < params.b2.size(); ++i) probe(params.b2.data() + i, fd.b2.data() + i);
    for (Eigen::Index i = 0; i < params.appearance_proj.size(); ++i) {
        probe(params.appearance_proj.data() + i, fd.appearance_proj.data() + i);
    }
    return fd;
}

double relative_error(const RelNetGrad& a, const RelNetGrad& b) {
    double num = 0.0;
    double den = 0.0;
    auto acc = [&](const Matrix& x, const Matrix& y) {
        num += (x - y).squaredNorm();
        den += std::max(x.squaredNorm(), y.squaredNorm());
    };
    acc(a.w1, b.w1);
    acc(a.b1, b.b1);
    acc(a.w2, b.w2);
    acc(a.b2, b.b2);
    if (a.appearance_proj.size() > 0) acc(a.appearance_proj, b.appearance_proj);
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

TEST(LossGradients, MatchCentralFiniteDifferences) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    auto rng = czsr::make_stream(13, "test.relnet.fd");
    std::uniform_real_distribution<double> pos(0.0, 60.0);
    std::uniform_real_distribution<double> size(2.0, 40.0);
    std::uniform_real_distribution<double> theta(-1.0, 1.0);
    std::uniform_int_distribution<int> n_regions(1, 3);
    std::uniform_int_distribution<int> label(0, 2);
    std::uniform_int_distribution<int> coin(0, 1);

    for (int draw = 0; draw < 20; ++draw) {
        const bool appearance = draw >= 17;  // a few draws exercise the +GA path
        const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 6,
                                                  1000 + draw, appearance ? 3 : 0, 5);
        Scene scene;
        const int n = n_regions(rng);
        for (int i = 0; i < n; ++i) {
            czsr::Region r;
            r.box = {pos(rng), pos(rng), size(rng), size(rng)};
            r.label = label(rng);
            r.feature = Vector(5);
            for (int d = 0; d < 5; ++d) r.feature[d] = theta(rng);
            scene.regions.push_back(r);
        }
        Matrix unary(n, labels.size());
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < labels.size(); ++c) unary(i, c) = theta(rng);
        }
        const Matrix* unary_ptr = coin(rng) == 0 ? nullptr : &unary;
        const double gamma = coin(rng) == 0 ? 1.0 : 0.5;

        const RelNetGrad analytic =
            czsr::loss_gradients(scene, p, cfg, graph, unary_ptr, gamma);
        const RelNetGrad fd =
            finite_difference_grad(scene, p, cfg, graph, unary_ptr, gamma, 1e-5);
        EXPECT_LE(relative_error(analytic, fd), 1e-4) << "draw " << draw;
    }
}

TEST(LossGradients, GammaZeroHasZeroGradient) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 3);
    const Scene scene = two_region_scene(labels);
    const RelNetGrad g = czsr::loss_gradients(scene, p, cfg, graph, nullptr, 0.0);
    EXPECT_DOUBLE_EQ(g.w1.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(g.w2.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(g.b1.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(g.b2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LossGradients, DuplicatedSceneDoublesTheGradient) {
    const GeomEmbedConfig cfg = small_geom();
    const LabelSpace labels = abc_labels();
    const RelationGraph graph = abc_graph(labels);
    const RelNetParams p = RelNetParams::init(cfg, graph.predicate_count(), 16, 4);
    const Scene scene = two_region_scene(labels);
    const RelNetGrad single = czsr::loss_gradients(scene, p, cfg, graph, nullptr, 1.0);
    RelNetGrad batch = czsr::loss_gradients(scene, p, cfg, graph, nullptr, 1.0);
    batch.add_scaled(czsr::loss_gradients(scene, p, cfg, graph, nullptr, 1.0), 1.0);
    EXPECT_NEAR((batch.w1 - 2.0 * single.w1).cwiseAbs().maxCoeff(), 0.0, 1e-15);
    EXPECT_NEAR((batch.w2 - 2.0 * single.w2).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(SgdMomentum, ZeroGradientZeroDecayLeavesParametersUnchanged) {
    const GeomEmbedConfig cfg = small_geom();
    const RelNetParams reference = RelNetParams::init(cfg, 2, 8, 9);
    RelNetParams p = reference;
    czsr::SgdMomentum opt(p);
    opt.step(p, RelNetGrad::zeros_like(p), 0.1, 0.9, 0.0);
    EXPECT_TRUE(p.w1.isApprox(reference.w1, 0.0));
    EXPECT_TRUE(p.b1.isApprox(reference.b1, 0.0));
    EXPECT_TRUE(p.w2.isApprox(reference.w2, 0.0));
    EXPECT_TRUE(p.b2.isApprox(reference.b2, 0.0));
}

std::vector<Scene> tiny_training_set() {
    czsr::WorldConfig wc;
    wc.n_classes = 10;
    wc.n_seen = 8;
    wc.feature_dim = 8;
    wc.embed_dim = 8;
    wc.n_predicates = 3;
    wc.edge_density = 0.15;
    wc.seed = 21;
    const czsr::World world = czsr::gen_world(wc);
    return czsr::gen_scenes(world, 60, 2, 4, 21, true);
}

czsr::RelationGraph tiny_training_graph() {
    czsr::WorldConfig wc;
    wc.n_classes = 10;
    wc.n_seen = 8;
    wc.feature_dim = 8;
    wc.embed_dim = 8;
    wc.n_predicates = 3;
    wc.edge_density = 0.15;
    wc.seed = 21;
    return czsr::gen_world(wc).graph;
}

TEST(TrainRelnet, DeterministicGivenSeed) {
    const GeomEmbedConfig cfg = small_geom();
    const auto dataset = tiny_training_set();
    const auto graph = tiny_training_graph();
    TrainConfig tc;
    tc.iterations = 25;
    tc.batch_size = 4;
    tc.hidden_dim = 16;
    tc.seed = 77;
    const RelNetParams a = czsr::train_relnet(dataset, graph, cfg, tc);
    const RelNetParams b = czsr::train_relnet(dataset, graph, cfg, tc);
    EXPECT_TRUE(a.w1.isApprox(b.w1, 0.0));
    EXPECT_TRUE(a.b1.isApprox(b.b1, 0.0));
    EXPECT_TRUE(a.w2.isApprox(b.w2, 0.0));
    EXPECT_TRUE(a.b2.isApprox(b.b2, 0.0));
}

TEST(TrainRelnet, LossDropsOverFirstHundredIterations) {
    const GeomEmbedConfig cfg = small_geom();
    const auto dataset = tiny_training_set();
    const auto graph = tiny_training_graph();
    TrainConfig tc;
    tc.iterations = 100;
    tc.batch_size = 8;
    tc.hidden_dim = 32;
    tc.learning_rate = 0.01;
    tc.seed = 5;
    std::vector<double> loss_log;
    czsr::train_relnet(dataset, graph, cfg, tc, nullptr, &loss_log);
    ASSERT_EQ(loss_log.size(), 100u);
    EXPECT_LT(loss_log.back(), loss_log.front());
}

TEST(TrainRelnet, LearningRateScheduleHasStagedDrops) {
    TrainConfig tc;
    tc.iterations = 60;
    EXPECT_EQ(tc.effective_decay_steps(), (std::vector<int>{20, 40}));
    EXPECT_DOUBLE_EQ(tc.learning_rate, 0.005);
    EXPECT_DOUBLE_EQ(tc.decay_factor, 0.1);
    EXPECT_DOUBLE_EQ(tc.momentum, 0.9);
    EXPECT_DOUBLE_EQ(tc.weight_decay, 1e-4);
    EXPECT_EQ(tc.batch_size, 8);
}

TEST(TrainRelnet, AbortsOnNonFiniteLoss) {
    const GeomEmbedConfig cfg = small_geom();
    const auto dataset = tiny_training_set();
    const auto graph = tiny_training_graph();
    TrainConfig tc;
    tc.iterations = 40;
    tc.batch_size = 2;
    tc.hidden_dim = 16;
    tc.learning_rate = 1e120;  // divergence on purpose
    tc.weight_decay = 0.0;
    tc.seed = 6;
    EXPECT_THROW(czsr::train_relnet(dataset, graph, cfg, tc), std::runtime_error);
}

TEST(TrainRelnet, IncludeUnaryRequiresUnaries) {
    const GeomEmbedConfig cfg = small_geom();
    const auto dataset = tiny_training_set();
    const auto graph = tiny_training_graph();
    TrainConfig tc;
    tc.include_unary = true;
    tc.iterations = 1;
    EXPECT_THROW(czsr::train_relnet(dataset, graph, cfg, tc), std::invalid_argument);
}

}  // namespace
