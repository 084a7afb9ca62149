#pragma once

#include "czsr/kgraph.hpp"
#include "czsr/rng.hpp"
#include "czsr/types.hpp"
#include "czsr/zsl.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace czsr {

/// Synthetic-world shape. confusable_pairs lists (unseen, seen) class index
/// pairs whose prototypes are made near-collinear; when empty, every unseen
/// class is paired with a distinct seen class.
struct WorldConfig {
    int n_classes = 40;
    int n_seen = 30;
    int feature_dim = 32;
    int embed_dim = 32;
    int n_predicates = 6;
    double edge_density = 0.08;
    double prototype_separation = 1.0;
    double ambiguity_rate = 0.8;
    std::vector<std::pair<int, int>> confusable_pairs;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_classes < 2) throw std::invalid_argument("WorldConfig: n_classes must be >= 2");
        if (n_seen < 1 || n_seen >= n_classes) {
            throw std::invalid_argument("WorldConfig: need 1 <= n_seen < n_classes");
        }
        if (feature_dim < 2 || embed_dim < 2) {
            throw std::invalid_argument("WorldConfig: feature_dim and embed_dim must be >= 2");
        }
        if (n_predicates < 1) throw std::invalid_argument("WorldConfig: n_predicates must be >= 1");
        if (edge_density < 0.0 || edge_density > 1.0) {
            throw std::invalid_argument("WorldConfig: edge_density must be in [0, 1]");
        }
        if (ambiguity_rate < 0.0 || ambiguity_rate > 1.0) {
            throw std::invalid_argument("WorldConfig: ambiguity_rate must be in [0, 1]");
        }
        if (!(prototype_separation > 0.0) || prototype_separation > 1.0) {
            throw std::invalid_argument("WorldConfig: prototype_separation must be in (0, 1]");
        }
    }
};

/// A generated world: label space, embeddings, relation graph, per-class
/// feature prototypes (unit rows) and the ideal seen classifier.
struct World {
    WorldConfig config;
    LabelSpace labels;
    EmbeddingTable embeddings;
    RelationGraph graph;
    Matrix prototypes;       // |C| x d_f, unit rows
    Matrix seen_classifier;  // |S| x d_f, prototype rows of the seen classes
    std::vector<std::pair<int, int>> confusable;  // resolved (unseen, seen)
    std::vector<int> pattern_of_predicate;        // graph predicate index -> geometry pattern
};

namespace detail {

// Canonical spatial configurations a predicate can map to:
// (|dx|/w, |dy|/h, log(w_obj/w_subj), log(h_obj/h_subj)).
inline const std::array<std::array<double, 4>, 8>& geometry_patterns() {
    static const std::array<std::array<double, 4>, 8> patterns = {{
        {0.05, 1.10, 0.90, 0.60},
        {0.05, 0.05, -0.80, -0.80},
        {0.90, 0.05, 0.00, 0.00},
        {0.05, 1.00, 0.30, 0.30},
        {1.50, 0.50, -0.50, -0.50},
        {0.30, 0.80, 1.20, 0.20},
        {0.60, 0.60, 0.50, -0.50},
        {0.10, 0.30, -1.20, 0.40},
    }};
    return patterns;
}

inline std::vector<std::string> predicate_names(int n) {
    static const std::vector<std::string> stock = {"on",    "in",    "holding", "wearing",
                                                   "riding", "near",  "above",   "carrying",
                                                   "beside", "under", "behind",  "at"};
    std::vector<std::string> names;
    for (int k = 0; k < n; ++k) {
        names.push_back(k < static_cast<int>(stock.size()) ? stock[k]
                                                           : "rel" + std::to_string(k));
    }
    return names;
}

inline Vector random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = gauss(rng);
    const double n = v.norm();
    return n > 0.0 ? Vector(v / n) : random_unit(rng, dim);
}

}  // namespace detail

/// Deterministically generates a world from the config. Prototypes are unit
/// vectors with pairwise overlap controlled by prototype_separation;
/// confusable pairs are overridden to be near-collinear so their features
/// cannot be told apart, and each one is given a discriminating edge
/// (unseen, predicate, anchor) that its seen partner lacks. Seen-class
/// embeddings track their prototypes tightly while unseen embeddings are
/// noisier, mirroring the seen bias of classifiers fit on real data.
inline World gen_world(const WorldConfig& cfg) {
    cfg.validate();
    const int n_unseen = cfg.n_classes - cfg.n_seen;

    std::vector<std::string> names;
    std::vector<std::string> seen_names;
    for (int i = 0; i < cfg.n_seen; ++i) {
        names.push_back("seen_" + std::to_string(i));
        seen_names.push_back(names.back());
    }
    for (int i = 0; i < n_unseen; ++i) names.push_back("unseen_" + std::to_string(i));
    LabelSpace labels(names, seen_names);

    std::vector<std::pair<int, int>> confusable = cfg.confusable_pairs;
    if (confusable.empty()) {
        for (int i = 0; i < n_unseen; ++i) confusable.push_back({cfg.n_seen + i, i % cfg.n_seen});
    }
    for (const auto& [u, s] : confusable) {
        labels.check_index(u);
        labels.check_index(s);
        if (labels.is_seen(u) || !labels.is_seen(s)) {
            throw std::invalid_argument("WorldConfig: confusable pairs must be (unseen, seen)");
        }
    }

    // Prototypes: separated base directions blended with a shared direction.
    auto proto_rng = make_stream(cfg.seed, "world.proto");
    Matrix base(cfg.n_classes, cfg.feature_dim);
    if (cfg.n_classes <= cfg.feature_dim) {
        Matrix gauss(cfg.feature_dim, cfg.n_classes);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Eigen::Index c = 0; c < gauss.cols(); ++c) {
            for (Eigen::Index r = 0; r < gauss.rows(); ++r) gauss(r, c) = dist(proto_rng);
        }
        Eigen::HouseholderQR<Matrix> qr(gauss);
        Matrix q = qr.householderQ() * Matrix::Identity(cfg.feature_dim, cfg.n_classes);
        base = q.transpose();
    } else {
        for (int c = 0; c < cfg.n_classes; ++c) {
            base.row(c) = detail::random_unit(proto_rng, cfg.feature_dim).transpose();
        }
    }
    const Vector shared = detail::random_unit(proto_rng, cfg.feature_dim);
    Matrix prototypes(cfg.n_classes, cfg.feature_dim);
    for (int c = 0; c < cfg.n_classes; ++c) {
        Vector p = cfg.prototype_separation * base.row(c).transpose() +
                   (1.0 - cfg.prototype_separation) * shared;
        prototypes.row(c) = p.transpose() / p.norm();
    }
    const double collinear_eps = 0.08;
    for (const auto& [u, s] : confusable) {
        Vector p = prototypes.row(s).transpose() +
                   collinear_eps * detail::random_unit(proto_rng, cfg.feature_dim);
        prototypes.row(u) = p.transpose() / p.norm();
    }

    // Embeddings correlated with prototypes; unseen ones drift more.
    auto emb_rng = make_stream(cfg.seed, "world.embed");
    Matrix embed_map;
    if (cfg.embed_dim == cfg.feature_dim) {
        embed_map = Matrix::Identity(cfg.embed_dim, cfg.feature_dim);
    } else {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(cfg.feature_dim));
        embed_map.resize(cfg.embed_dim, cfg.feature_dim);
        for (Eigen::Index r = 0; r < embed_map.rows(); ++r) {
            for (Eigen::Index c = 0; c < embed_map.cols(); ++c) embed_map(r, c) = dist(emb_rng);
        }
    }
    Matrix embeddings(cfg.n_classes, cfg.embed_dim);
    for (int c = 0; c < cfg.n_classes; ++c) {
        const double sigma = labels.is_seen(c) ? 0.05 : 0.35;
        Vector e = embed_map * prototypes.row(c).transpose() +
                   sigma * detail::random_unit(emb_rng, cfg.embed_dim);
        embeddings.row(c) = e.transpose() / e.norm();
    }

    // Relation triples: density-sampled ordered pairs, a guaranteed seen-seen
    // edge per predicate, and one discriminating edge per confusable pair.
    auto edge_rng = make_stream(cfg.seed, "world.edges");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::set<std::tuple<int, int, int>> edges;  // (subject, predicate, object)
    for (int m = 0; m < cfg.n_classes; ++m) {
        for (int n = 0; n < cfg.n_classes; ++n) {
            if (m == n) continue;
            for (int k = 0; k < cfg.n_predicates; ++k) {
                if (unit(edge_rng) < cfg.edge_density) edges.insert({m, k, n});
            }
        }
    }
    for (int k = 0; k < cfg.n_predicates && cfg.n_seen >= 2; ++k) {
        const int a = (2 * k) % cfg.n_seen;
        int b = (2 * k + 1) % cfg.n_seen;
        if (b == a) b = (b + 1) % cfg.n_seen;
        edges.insert({a, k, b});
    }
    for (std::size_t p = 0; p < confusable.size(); ++p) {
        const auto& [u, s] = confusable[p];
        const int predicate = static_cast<int>(p) % cfg.n_predicates;
        int anchor = static_cast<int>((p * 7 + 3) % cfg.n_seen);
        if (anchor == s) anchor = (anchor + 1) % cfg.n_seen;
        edges.insert({u, predicate, anchor});
        edges.erase({s, predicate, anchor});
    }

    const std::vector<std::string> pred_names = detail::predicate_names(cfg.n_predicates);
    std::vector<Triple> triples;
    for (const auto& [m, k, n] : edges) {
        triples.push_back({names[m], pred_names[k], names[n], 1});
    }
    // Make sure every predicate name survives the top-K relation selection
    // even if density sampling skipped it entirely.
    for (const auto& pn : pred_names) {
        bool present = false;
        for (const auto& t : triples) present = present || t.predicate == pn;
        if (!present && cfg.n_seen >= 2) triples.push_back({names[0], pn, names[1], 1});
    }
    RelationGraph graph = RelationGraph::build(labels, triples, 0, cfg.n_predicates);

    std::vector<int> pattern_of_predicate(graph.predicate_count());
    const auto& patterns = detail::geometry_patterns();
    for (int k = 0; k < graph.predicate_count(); ++k) {
        // Pattern identity follows the canonical predicate name order, not the
        // frequency-ranked order the graph stores.
        const auto it = std::find(pred_names.begin(), pred_names.end(), graph.relations().name(k));
        pattern_of_predicate[k] =
            static_cast<int>(it - pred_names.begin()) % static_cast<int>(patterns.size());
    }

    World world;
    world.config = cfg;
    world.labels = labels;
    world.embeddings = EmbeddingTable{embeddings};
    world.graph = std::move(graph);
    world.prototypes = prototypes;
    Matrix w_seen(cfg.n_seen, cfg.feature_dim);
    for (int s = 0; s < cfg.n_seen; ++s) w_seen.row(s) = prototypes.row(labels.seen()[s]);
    world.seen_classifier = std::move(w_seen);
    world.confusable = std::move(confusable);
    world.pattern_of_predicate = std::move(pattern_of_predicate);
    return world;
}

/// Generates labeled scenes. Object pairs co-occur along graph edges and
/// their boxes follow the predicate's geometry pattern, so geometry carries
/// the relation signal. Features are prototype + isotropic noise
/// (sigma = 0.1); an ambiguity_rate fraction of confusable unseen objects get
/// the midpoint of the pair's prototypes instead, making them unresolvable
/// from the feature alone. seen_only restricts sampling to seen-seen edges
/// (the training regime).
inline std::vector<Scene> gen_scenes(const World& world, int n_scenes, int min_objects,
                                     int max_objects, std::uint64_t seed, bool seen_only) {
    if (n_scenes < 0) throw std::invalid_argument("gen_scenes: n_scenes must be >= 0");
    if (min_objects < 2 || max_objects < min_objects) {
        throw std::invalid_argument("gen_scenes: need 2 <= min_objects <= max_objects");
    }
    const LabelSpace& labels = world.labels;
    const double feature_noise = 0.1;

    std::vector<std::tuple<int, int, int>> all_edges;
    std::vector<std::tuple<int, int, int>> train_edges;
    std::vector<std::tuple<int, int, int>> unseen_edges;
    for (const auto& [pair, preds] : world.graph.edges()) {
        for (int k : preds) {
            all_edges.push_back({pair.first, k, pair.second});
            if (labels.is_seen(pair.first) && labels.is_seen(pair.second)) {
                train_edges.push_back({pair.first, k, pair.second});
            } else {
                unseen_edges.push_back({pair.first, k, pair.second});
            }
        }
    }
    const auto& pool = seen_only ? train_edges : all_edges;
    if (pool.empty()) throw std::invalid_argument("gen_scenes: relation graph has no usable edges");

    std::map<int, int> partner_of;  // unseen class -> confusable seen class
    for (const auto& [u, s] : world.confusable) partner_of[u] = s;

    auto rng = make_stream(seed, seen_only ? "scenes.train" : "scenes.test");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto sample_feature = [&](int cls) {
        Vector f = world.prototypes.row(cls).transpose();
        auto it = partner_of.find(cls);
        if (it != partner_of.end() && unit(rng) < world.config.ambiguity_rate) {
            f = 0.5 * (world.prototypes.row(cls) + world.prototypes.row(it->second)).transpose();
        }
        for (Eigen::Index d = 0; d < f.size(); ++d) f[d] += feature_noise * gauss(rng);
        return f;
    };

    const auto& patterns = detail::geometry_patterns();
    auto place_subject = [&]() {
        Box b;
        b.x = 600.0 * unit(rng);
        b.y = 400.0 * unit(rng);
        b.w = std::exp(std::log(30.0) + (std::log(150.0) - std::log(30.0)) * unit(rng));
        b.h = std::exp(std::log(30.0) + (std::log(150.0) - std::log(30.0)) * unit(rng));
        return b;
    };
    auto place_object = [&](const Box& subject, int predicate) {
        const auto& p = patterns[world.pattern_of_predicate[predicate]];
        Box b;
        b.x = subject.x + (p[0] + 0.08 * gauss(rng)) * subject.w;
        b.y = subject.y + (p[1] + 0.08 * gauss(rng)) * subject.h;
        b.w = subject.w * std::exp(p[2] + 0.08 * gauss(rng));
        b.h = subject.h * std::exp(p[3] + 0.08 * gauss(rng));
        return b;
    };

    std::uniform_int_distribution<int> n_obj_dist(min_objects, max_objects);
    std::uniform_int_distribution<std::size_t> pick_pool(0, pool.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_unseen(
        0, unseen_edges.empty() ? 0 : unseen_edges.size() - 1);
    std::uniform_int_distribution<int> pick_seen_class(0, static_cast<int>(labels.seen().size()) - 1);

    std::vector<Scene> scenes;
    scenes.reserve(n_scenes);
    for (int sc = 0; sc < n_scenes; ++sc) {
        Scene scene;
        scene.id = (seen_only ? "train_" : "test_") + std::to_string(sc);
        const int target = n_obj_dist(rng);
        bool first_pair = true;
        while (scene.size() + 1 < target || scene.regions.empty()) {
            std::tuple<int, int, int> edge;
            if (!seen_only && first_pair && !unseen_edges.empty()) {
                edge = unseen_edges[pick_unseen(rng)];
            } else {
                edge = pool[pick_pool(rng)];
            }
            first_pair = false;
            const auto& [subj_cls, predicate, obj_cls] = edge;
            Region subject;
            subject.box = place_subject();
            subject.label = subj_cls;
            subject.feature = sample_feature(subj_cls);
            Region object;
            object.box = place_object(subject.box, predicate);
            object.label = obj_cls;
            object.feature = sample_feature(obj_cls);
            scene.regions.push_back(std::move(subject));
            scene.regions.push_back(std::move(object));
        }
        if (scene.size() < target) {
            Region extra;
            extra.box = place_subject();
            extra.label = labels.seen()[pick_seen_class(rng)];
            extra.feature = sample_feature(extra.label);
            scene.regions.push_back(std::move(extra));
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace czsr
