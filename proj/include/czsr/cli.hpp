#pragma once

#include "czsr/crf.hpp"
#include "czsr/detection.hpp"
#include "czsr/geometry.hpp"
#include "czsr/io.hpp"
#include "czsr/kgraph.hpp"
#include "czsr/metrics.hpp"
#include "czsr/parallel.hpp"
#include "czsr/relnet.hpp"
#include "czsr/rng.hpp"
#include "czsr/synthworld.hpp"
#include "czsr/types.hpp"
#include "czsr/zsl.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace czsr::cli {

enum class Method { we, conse, gcn, sync };

inline Method parse_method(const std::string& name) {
    if (name == "we") return Method::we;
    if (name == "conse") return Method::conse;
    if (name == "gcn") return Method::gcn;
    if (name == "sync") return Method::sync;
    throw std::invalid_argument("unknown method '" + name + "' (expected we|conse|gcn|sync)");
}

/// Per-method gamma defaults from the dev-set selection protocol.
inline double default_gamma(Method m) { return m == Method::sync ? 0.5 : 1.0; }

inline std::vector<int> all_class_indices(const LabelSpace& labels) {
    std::vector<int> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

inline std::vector<int> restrict_for_setting(const LabelSpace& labels, const std::string& setting) {
    if (setting == "classic") return labels.unseen();
    if (setting == "generalized") return all_class_indices(labels);
    throw std::invalid_argument("unknown setting '" + setting + "' (expected classic|generalized)");
}

// ---------------------------------------------------------------------------
// Unary provider shared by infer and eval-time reranking
// ---------------------------------------------------------------------------

struct UnaryModel {
    Method method = Method::we;
    Matrix weights;       // |C| x d, bound to the label space
    Matrix seen_weights;  // |S| x d_f, conse only
    int conse_top_t = 0;

    /// theta over `restrict` for one region feature.
    Vector log_probs(const LabelSpace& labels, const Vector& feature,
                     const std::vector<int>& restrict_classes) const {
        if (method != Method::conse) {
            return unary_log_probs(weights, feature, restrict_classes);
        }
        std::vector<int> seen_rows(seen_weights.rows());
        std::iota(seen_rows.begin(), seen_rows.end(), 0);
        Vector seen_probs = unary_log_probs(seen_weights, feature, seen_rows).array().exp();
        const EmbeddingTable table{weights};
        ConseResult conse = conse_infer(seen_probs, table, labels, restrict_classes, conse_top_t);
        Vector direction = conse.combined / conse.combined.norm();
        return unary_log_probs(weights, direction, restrict_classes);
    }
};

// ---------------------------------------------------------------------------
// Records from unary scores and mean-field states
// ---------------------------------------------------------------------------

inline EvalRecord unary_record(const std::string& region_id, int ground_truth,
                               const Vector& theta, const std::vector<int>& restrict_classes) {
    std::vector<int> slots(restrict_classes.size());
    std::iota(slots.begin(), slots.end(), 0);
    std::sort(slots.begin(), slots.end(), [&](int a, int b) {
        if (theta[a] != theta[b]) return theta[a] > theta[b];
        return restrict_classes[a] < restrict_classes[b];
    });
    EvalRecord record;
    record.region_id = region_id;
    record.ground_truth = ground_truth;
    for (int s : slots) record.ranked.push_back({restrict_classes[s], std::exp(theta[s])});
    return record;
}

inline EvalRecord context_record(const std::string& region_id, int ground_truth,
                                 const MeanFieldState& state, int region,
                                 const std::vector<int>& restrict_classes) {
    const auto& cand = state.candidates[region];
    std::vector<int> slots(cand.size());
    std::iota(slots.begin(), slots.end(), 0);
    std::sort(slots.begin(), slots.end(), [&](int a, int b) {
        if (state.q[region][a] != state.q[region][b]) {
            return state.q[region][a] > state.q[region][b];
        }
        return restrict_classes[cand[a]] < restrict_classes[cand[b]];
    });
    EvalRecord record;
    record.region_id = region_id;
    record.ground_truth = ground_truth;
    for (int s : slots) {
        record.ranked.push_back({restrict_classes[cand[s]], state.q[region][s]});
    }
    return record;
}

// ---------------------------------------------------------------------------
// build-graph
// ---------------------------------------------------------------------------

struct BuildGraphOptions {
    std::string triples_path;
    std::string out_path;
    std::string classes_path;  // optional; derived from the triples when empty
    std::int64_t min_count = 20;
    int top_relations = 20;
};

inline int cmd_build_graph(const BuildGraphOptions& opt) {
    const std::vector<Triple> triples = io::load_triples_csv(opt.triples_path);
    LabelSpace labels;
    if (!opt.classes_path.empty()) {
        std::vector<std::string> names;
        for (const std::string& line : io::read_lines(opt.classes_path)) {
            if (!line.empty()) names.push_back(line);
        }
        labels = LabelSpace(names, names);
    } else {
        std::set<std::string> names;
        for (const Triple& t : triples) {
            names.insert(t.subject);
            names.insert(t.object);
        }
        if (names.empty()) names.insert("none");
        std::vector<std::string> ordered(names.begin(), names.end());
        labels = LabelSpace(ordered, ordered);
    }
    const RelationGraph graph =
        RelationGraph::build(labels, triples, opt.min_count, opt.top_relations);
    io::save_graph_json(opt.out_path, graph);
    std::cout << "wrote " << opt.out_path << ": " << graph.predicate_count() << " relations, "
              << graph.edge_count() << " edges\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string out_dir;
    WorldConfig world;
    int train_scenes = 2000;
    int test_scenes = 500;
    int min_objects = 2;
    int max_objects = 5;
};

inline WordGraph make_word_graph(const World& world) {
    WordGraph wg;
    const LabelSpace& labels = world.labels;
    for (int c = 0; c < labels.size(); ++c) {
        wg.nodes.push_back({labels.name(c), world.embeddings.vectors.row(c).transpose()});
    }
    std::set<std::pair<int, int>> edges;
    auto add_edge = [&edges](int a, int b) {
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
    };
    for (const auto& [u, s] : world.confusable) add_edge(u, s);
    // Two nearest neighbors per class by embedding cosine.
    for (int c = 0; c < labels.size(); ++c) {
        std::vector<int> order;
        for (int d = 0; d < labels.size(); ++d) {
            if (d != c) order.push_back(d);
        }
        const Matrix& e = world.embeddings.vectors;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double ca = e.row(c).dot(e.row(a)) / (e.row(c).norm() * e.row(a).norm());
            const double cb = e.row(c).dot(e.row(b)) / (e.row(c).norm() * e.row(b).norm());
            if (ca != cb) return ca > cb;
            return a < b;
        });
        for (int n = 0; n < 2 && n < static_cast<int>(order.size()); ++n) add_edge(c, order[n]);
    }
    for (const auto& [a, b] : edges) wg.edges.push_back({a, b});
    return wg;
}

inline std::vector<ProposalSet> make_proposals(const World& world,
                                               const std::vector<Scene>& scenes,
                                               std::uint64_t seed) {
    auto rng = make_stream(seed, "synth.proposals");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<ProposalSet> sets;
    for (const Scene& scene : scenes) {
        ProposalSet set;
        set.image_id = scene.id;
        for (const Region& r : scene.regions) {
            for (double jitter : {0.05, 0.15}) {
                Proposal p;
                p.box.x = r.box.x + jitter * r.box.w * gauss(rng);
                p.box.y = r.box.y + jitter * r.box.h * gauss(rng);
                p.box.w = std::max(1.0, r.box.w * std::exp(2.0 * jitter * gauss(rng)));
                p.box.h = std::max(1.0, r.box.h * std::exp(2.0 * jitter * gauss(rng)));
                p.objectness = 0.2 + 0.75 * unit(rng);
                set.proposals.push_back(p);
            }
        }
        for (int extra = 0; extra < 2; ++extra) {
            Proposal p;
            p.box.x = 600.0 * unit(rng);
            p.box.y = 400.0 * unit(rng);
            p.box.w = 20.0 + 120.0 * unit(rng);
            p.box.h = 20.0 + 120.0 * unit(rng);
            p.objectness = 0.5 * unit(rng);  // some fall below the 0.07 filter
            set.proposals.push_back(p);
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

inline int cmd_synth(const SynthOptions& opt) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    const World world = gen_world(opt.world);
    const std::vector<Scene> train =
        gen_scenes(world, opt.train_scenes, opt.min_objects, opt.max_objects, opt.world.seed, true);
    const std::vector<Scene> test =
        gen_scenes(world, opt.test_scenes, opt.min_objects, opt.max_objects, opt.world.seed, false);

    const auto path = [&](const char* name) { return (fs::path(opt.out_dir) / name).string(); };
    io::save_scenes_json(path("scenes_train.json"), world.labels, train);
    io::save_scenes_json(path("scenes_test.json"), world.labels, test);
    io::save_graph_json(path("graph.json"), world.graph);
    io::save_matrix_csv(path("embeddings.csv"), world.labels.names(), world.embeddings.vectors);
    std::vector<std::string> seen_names;
    for (int c : world.labels.seen()) seen_names.push_back(world.labels.name(c));
    io::save_matrix_csv(path("classifier_seen.csv"), seen_names, world.seen_classifier);
    io::save_word_graph_json(path("wordgraph.json"), make_word_graph(world));
    io::save_proposals_jsonl(path("proposals.jsonl"), make_proposals(world, test, opt.world.seed));

    std::cout << "wrote " << opt.out_dir << ": " << world.labels.size() << " classes ("
              << world.labels.seen().size() << " seen), " << world.graph.edge_count()
              << " graph edges, " << train.size() << " train / " << test.size()
              << " test scenes\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-relnet
// ---------------------------------------------------------------------------

struct TrainRelnetOptions {
    std::string scenes_path;
    std::string graph_path;
    std::string out_path;
    std::string weights_path;  // unary source, only with include_unary
    TrainConfig train;
    GeomEmbedConfig geom;
};

inline int cmd_train_relnet(const TrainRelnetOptions& opt) {
    const io::ScenesFile scenes = io::load_scenes_json(opt.scenes_path);
    const RelationGraph graph = io::load_graph_json(opt.graph_path, scenes.labels);

    std::vector<Matrix> unaries;
    const std::vector<Matrix>* unaries_ptr = nullptr;
    if (opt.train.include_unary) {
        if (opt.weights_path.empty()) {
            throw std::invalid_argument("--include-unary requires --weights");
        }
        const io::NamedMatrix named = io::load_matrix_csv(opt.weights_path);
        std::vector<std::string> seen_names;
        for (int c : scenes.labels.seen()) seen_names.push_back(scenes.labels.name(c));
        const Matrix w_seen = io::bind_rows(named, seen_names);
        for (const Scene& scene : scenes.scenes) {
            Matrix theta = Matrix::Zero(scene.size(), scenes.labels.size());
            std::vector<int> seen_rows(w_seen.rows());
            std::iota(seen_rows.begin(), seen_rows.end(), 0);
            for (int i = 0; i < scene.size(); ++i) {
                const Vector lp = unary_log_probs(w_seen, scene.regions[i].feature, seen_rows);
                for (std::size_t s = 0; s < scenes.labels.seen().size(); ++s) {
                    theta(i, scenes.labels.seen()[s]) = lp[s];
                }
            }
            unaries.push_back(std::move(theta));
        }
        unaries_ptr = &unaries;
    }

    std::vector<double> loss_log;
    const RelNetParams params =
        train_relnet(scenes.scenes, graph, opt.geom, opt.train, unaries_ptr, &loss_log);
    io::save_relnet_json(opt.out_path, params, opt.geom);
    std::cout << "wrote " << opt.out_path << ": loss " << io::format_double(loss_log.front())
              << " -> " << io::format_double(loss_log.back()) << " over " << loss_log.size()
              << " iterations\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

struct SynthesizeOptions {
    std::string method = "we";
    std::string embeddings_path;
    std::string labels_path;  // scenes file carrying the label space
    std::string out_path;
    std::string seen_weights_path;  // gcn, sync
    std::string word_graph_path;    // gcn
    GcnConfig gcn;
    int phantoms = 0;  // 0 -> one per seen class
    double ridge = 1e-6;
    std::string similarity = "cosine";
    double bandwidth = 1.0;
    int conse_top_t = 0;  // recorded for symmetry; conse needs no fit
};

inline int cmd_synthesize(const SynthesizeOptions& opt) {
    const Method method = parse_method(opt.method);
    const io::ScenesFile scenes = io::load_scenes_json(opt.labels_path);
    const LabelSpace& labels = scenes.labels;
    const io::NamedMatrix named_emb = io::load_matrix_csv(opt.embeddings_path);
    const EmbeddingTable emb{io::bind_rows(named_emb, labels.names())};
    emb.validate(labels);

    auto load_seen_weights = [&]() {
        if (opt.seen_weights_path.empty()) {
            throw std::invalid_argument("method '" + opt.method + "' requires --seen-weights");
        }
        std::vector<std::string> seen_names;
        for (int c : labels.seen()) seen_names.push_back(labels.name(c));
        return io::bind_rows(io::load_matrix_csv(opt.seen_weights_path), seen_names);
    };

    Matrix weights;
    if (method == Method::we || method == Method::conse) {
        weights = we_weights(emb);
    } else if (method == Method::gcn) {
        if (opt.word_graph_path.empty()) {
            throw std::invalid_argument("method 'gcn' requires --wordgraph");
        }
        const WordGraph wg = io::load_word_graph_json(opt.word_graph_path);
        weights = gcn_synthesize(wg, labels, load_seen_weights(), opt.gcn);
    } else {
        const Matrix w_seen = load_seen_weights();
        Matrix seen_emb(labels.seen().size(), emb.dim());
        for (std::size_t s = 0; s < labels.seen().size(); ++s) {
            seen_emb.row(s) = emb.vectors.row(labels.seen()[s]);
        }
        Matrix unseen_emb(labels.unseen().size(), emb.dim());
        for (std::size_t u = 0; u < labels.unseen().size(); ++u) {
            unseen_emb.row(u) = emb.vectors.row(labels.unseen()[u]);
        }
        Matrix phantoms = seen_emb;
        if (opt.phantoms > 0 && opt.phantoms < phantoms.rows()) {
            phantoms = seen_emb.topRows(opt.phantoms);
        }
        const SimilarityMode mode =
            opt.similarity == "rbf" ? SimilarityMode::rbf : SimilarityMode::cosine;
        const Matrix s_seen = build_similarity(seen_emb, phantoms, mode, opt.bandwidth, true);
        const Matrix s_unseen = build_similarity(unseen_emb, phantoms, mode, opt.bandwidth, true);
        const SyncResult sync = sync_synthesize(s_seen, s_unseen, w_seen, opt.ridge);
        weights.resize(labels.size(), w_seen.cols());
        for (std::size_t s = 0; s < labels.seen().size(); ++s) {
            weights.row(labels.seen()[s]) = w_seen.row(s);
        }
        for (std::size_t u = 0; u < labels.unseen().size(); ++u) {
            weights.row(labels.unseen()[u]) = sync.w_unseen.row(u);
        }
    }

    io::save_matrix_csv(opt.out_path, labels.names(), weights);
    std::cout << "wrote " << opt.out_path << ": " << weights.rows() << " classifier rows ("
              << opt.method << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferOptions {
    std::string scenes_path;
    std::string graph_path;
    std::string relnet_path;
    std::string weights_path;
    std::string seen_weights_path;  // conse
    std::string method = "we";
    std::string setting = "generalized";
    std::string out_dir;
    std::optional<double> gamma;
    int top_k = 5;
    int threads = 1;
    int conse_top_t = 0;
};

inline int cmd_infer(const InferOptions& opt) {
    namespace fs = std::filesystem;
    const Method method = parse_method(opt.method);
    const io::ScenesFile scenes = io::load_scenes_json(opt.scenes_path);
    const LabelSpace& labels = scenes.labels;
    const RelationGraph graph = io::load_graph_json(opt.graph_path, labels);
    const io::RelNetFile relnet = io::load_relnet_json(opt.relnet_path);
    if (relnet.params.relation_count() != graph.predicate_count()) {
        throw std::invalid_argument("relation net was trained for a different relation count");
    }

    UnaryModel unary;
    unary.method = method;
    unary.weights = io::bind_rows(io::load_matrix_csv(opt.weights_path), labels.names());
    unary.conse_top_t = opt.conse_top_t;
    if (method == Method::conse) {
        if (opt.seen_weights_path.empty()) {
            throw std::invalid_argument("method 'conse' requires --seen-weights");
        }
        std::vector<std::string> seen_names;
        for (int c : labels.seen()) seen_names.push_back(labels.name(c));
        unary.seen_weights = io::bind_rows(io::load_matrix_csv(opt.seen_weights_path), seen_names);
    }

    const std::vector<int> restrict_classes = restrict_for_setting(labels, opt.setting);
    InferenceConfig cfg;
    cfg.gamma = opt.gamma.value_or(default_gamma(method));
    cfg.top_k = opt.top_k;

    struct SceneRecords {
        std::vector<EvalRecord> unary;
        std::vector<EvalRecord> context;
    };
    std::vector<SceneRecords> results(scenes.scenes.size());
    relnet.params.validate_shapes(relnet.geom);

    parallel_for(static_cast<int>(scenes.scenes.size()), opt.threads, [&](int sc) {
        const Scene& scene = scenes.scenes[sc];
        const int n = scene.size();
        if (n == 0) return;
        Matrix theta(n, restrict_classes.size());
        for (int i = 0; i < n; ++i) {
            theta.row(i) =
                unary.log_probs(labels, scene.regions[i].feature, restrict_classes).transpose();
        }

        // Relation potentials per ordered region pair, shared across classes.
        std::vector<std::vector<Vector>> pots(n, std::vector<Vector>(n));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                pots[i][j] = detail::relnet_forward(
                                 relnet.params,
                                 detail::assemble_relnet_input(relnet.params, relnet.geom,
                                                               scene.regions[i].box,
                                                               scene.regions[j].box,
                                                               &scene.regions[i].feature,
                                                               &scene.regions[j].feature))
                                 .out;
            }
        }
        PairwisePotential phi = [&](int i, int j, int a, int b) {
            double v = 0.0;
            for (int k : graph.relations_between(restrict_classes[a], restrict_classes[b])) {
                v += pots[i][j][k];
            }
            return v;
        };
        const MeanFieldState state = mean_field(theta, phi, cfg);

        for (int i = 0; i < n; ++i) {
            if (scene.regions[i].label < 0) continue;  // context-only region
            const std::string region_id = scene.id + "#" + std::to_string(i);
            results[sc].unary.push_back(
                unary_record(region_id, scene.regions[i].label, theta.row(i), restrict_classes));
            results[sc].context.push_back(
                context_record(region_id, scene.regions[i].label, state, i, restrict_classes));
        }
    });

    std::vector<EvalRecord> unary_records;
    std::vector<EvalRecord> context_records;
    for (const auto& r : results) {
        unary_records.insert(unary_records.end(), r.unary.begin(), r.unary.end());
        context_records.insert(context_records.end(), r.context.begin(), r.context.end());
    }
    fs::create_directories(opt.out_dir);
    const auto path = [&](const char* name) { return (fs::path(opt.out_dir) / name).string(); };
    io::save_records_jsonl(path("records_unary.jsonl"), labels, unary_records);
    io::save_records_jsonl(path("records_context.jsonl"), labels, context_records);
    std::cout << "wrote " << opt.out_dir << ": " << unary_records.size()
              << " records per variant (gamma " << io::format_double(cfg.gamma) << ", K "
              << cfg.top_k << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectOptions {
    std::string scenes_path;
    std::string proposals_path;
    std::string graph_path;
    std::string relnet_path;
    std::string weights_path;
    std::string method = "we";
    std::string out_dir;
    std::optional<double> gamma;
    int top_k = 5;
    int threads = 1;
    DetectConfig detect;
};

inline int cmd_detect(const DetectOptions& opt) {
    namespace fs = std::filesystem;
    const io::ScenesFile scenes = io::load_scenes_json(opt.scenes_path);
    const LabelSpace& labels = scenes.labels;
    const RelationGraph graph = io::load_graph_json(opt.graph_path, labels);
    const io::RelNetFile relnet = io::load_relnet_json(opt.relnet_path);
    const std::vector<ProposalSet> proposal_sets = io::load_proposals_jsonl(opt.proposals_path);

    Matrix weights = io::bind_rows(io::load_matrix_csv(opt.weights_path), labels.names());
    for (Eigen::Index r = 0; r < weights.rows(); ++r) {
        const double norm = weights.row(r).norm();
        if (!(norm > 0.0)) throw std::invalid_argument("classifier row " + std::to_string(r) +
                                                       " is the zero vector");
        weights.row(r) /= norm;
    }
    const Vector w_bg = background_weight(weights, opt.detect.background_norm);

    DetectConfig cfg = opt.detect;
    cfg.inference.gamma = opt.gamma.value_or(default_gamma(parse_method(opt.method)));
    cfg.inference.top_k = opt.top_k;

    std::map<std::string, const Scene*> scene_by_id;
    for (const Scene& s : scenes.scenes) scene_by_id[s.id] = &s;

    fs::create_directories(opt.out_dir);
    const auto out_path = [&](const char* name) {
        return (fs::path(opt.out_dir) / name).string();
    };

    std::vector<std::pair<std::string, std::vector<Detection>>> per_image(proposal_sets.size());
    std::vector<std::vector<GroundTruthBox>> ground_truth(proposal_sets.size());
    parallel_for(static_cast<int>(proposal_sets.size()), opt.threads, [&](int idx) {
        const ProposalSet& set = proposal_sets[idx];
        auto it = scene_by_id.find(set.image_id);
        if (it == scene_by_id.end()) {
            throw std::invalid_argument("proposals reference unknown image '" + set.image_id + "'");
        }
        const Scene& scene = *it->second;
        // Feature stand-in for the out-of-scope extractor: take the feature of
        // the best-overlapping annotated region (IoU >= 0.5), otherwise a zero
        // vector, which scores uniformly across classes.
        std::vector<Vector> features;
        features.reserve(set.proposals.size());
        for (const Proposal& p : set.proposals) {
            int best = -1;
            double best_iou = 0.5;
            for (int r = 0; r < scene.size(); ++r) {
                const double overlap = iou(p.box, scene.regions[r].box);
                if (overlap >= best_iou) {
                    best_iou = overlap;
                    best = r;
                }
            }
            features.push_back(best >= 0 ? scene.regions[best].feature
                                         : Vector::Zero(weights.cols()));
        }
        per_image[idx] = {set.image_id,
                          detect_scene(set.proposals, features, weights, w_bg, relnet.params,
                                       relnet.geom, graph, cfg)};
        for (const Region& r : scene.regions) {
            if (r.label >= 0) ground_truth[idx].push_back({r.box, r.label});
        }
    });

    io::save_detections_csv(out_path("detections.csv"), labels, per_image);

    std::vector<std::vector<Detection>> dets_only;
    for (const auto& [id, dets] : per_image) dets_only.push_back(dets);
    std::ostringstream report;
    report << "restrict,iou,recall\n";
    std::ostringstream table;
    for (double threshold : {0.4, 0.5}) {
        const double unseen =
            recall_at_k(dets_only, ground_truth, threshold, 100, labels.unseen());
        const double seen = recall_at_k(dets_only, ground_truth, threshold, 100, labels.seen());
        const double hm = harmonic_mean(unseen, seen);
        report << "unseen," << io::format_double(threshold) << "," << io::format_double(unseen)
               << "\n";
        report << "seen," << io::format_double(threshold) << "," << io::format_double(seen) << "\n";
        report << "harmonic_mean," << io::format_double(threshold) << "," << io::format_double(hm)
               << "\n";
        char line[160];
        std::snprintf(line, sizeof(line),
                      "recall@100 iou %.1f: unseen %.1f seen %.1f hm %.1f\n", threshold,
                      100.0 * unseen, 100.0 * seen, 100.0 * hm);
        table << line;
    }
    io::write_file(out_path("recall.csv"), report.str());
    std::cout << table.str();
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string records_path;
    std::string context_path;  // optional second record set
    std::string scenes_path;
    std::string graph_path;  // required for the improvement report
    std::string setting = "generalized";
    std::vector<int> k_list = {1, 5};
    std::string out_dir;
};

inline int cmd_eval(const EvalOptions& opt) {
    namespace fs = std::filesystem;
    const io::ScenesFile scenes = io::load_scenes_json(opt.scenes_path);
    const LabelSpace& labels = scenes.labels;

    std::vector<std::pair<std::string, std::vector<EvalRecord>>> record_sets;
    record_sets.push_back({"unary", io::load_records_jsonl(opt.records_path, labels)});
    if (!opt.context_path.empty()) {
        record_sets.push_back({"context", io::load_records_jsonl(opt.context_path, labels)});
    }

    std::vector<std::pair<std::string, std::vector<int>>> restrictions;
    restrictions.push_back({"unseen", labels.unseen()});
    if (opt.setting == "generalized") {
        restrictions.push_back({"seen", labels.seen()});
        restrictions.push_back({"all", all_class_indices(labels)});
    } else if (opt.setting != "classic") {
        throw std::invalid_argument("unknown setting '" + opt.setting + "'");
    }

    auto has_records = [](const std::vector<EvalRecord>& records, const std::vector<int>& gt) {
        for (const auto& r : records) {
            if (std::find(gt.begin(), gt.end(), r.ground_truth) != gt.end()) return true;
        }
        return false;
    };

    std::ostringstream csv;
    csv << "records,restrict,k,per_instance_topk,per_class_top1\n";
    for (const auto& [tag, records] : record_sets) {
        std::map<std::string, double> top1_pi;
        for (const auto& [restrict_name, restrict_gt] : restrictions) {
            if (!has_records(records, restrict_gt)) continue;
            const double pc = per_class_accuracy(records, restrict_gt);
            for (int k : opt.k_list) {
                const double pi = topk_accuracy(records, k, restrict_gt);
                if (k == 1) top1_pi[restrict_name] = pi;
                csv << tag << "," << restrict_name << "," << k << "," << io::format_double(pi)
                    << "," << io::format_double(pc) << "\n";
                char line[160];
                std::snprintf(line, sizeof(line), "%s %s top-%d: per-ins %.1f per-cls %.1f\n",
                              tag.c_str(), restrict_name.c_str(), k, 100.0 * pi, 100.0 * pc);
                std::cout << line;
            }
        }
        if (opt.setting == "generalized" && top1_pi.count("seen") && top1_pi.count("unseen")) {
            const double hm = harmonic_mean(top1_pi["unseen"], top1_pi["seen"]);
            csv << tag << ",harmonic_mean,1," << io::format_double(hm) << ","
                << io::format_double(hm) << "\n";
            char line[160];
            std::snprintf(line, sizeof(line), "%s harmonic mean (top-1 per-ins): %.1f\n",
                          tag.c_str(), 100.0 * hm);
            std::cout << line;
        }
    }

    fs::create_directories(opt.out_dir);
    io::write_file((fs::path(opt.out_dir) / "metrics.csv").string(), csv.str());

    if (record_sets.size() == 2) {
        if (opt.graph_path.empty()) {
            throw std::invalid_argument("--context requires --graph for the improvement report");
        }
        const RelationGraph graph = io::load_graph_json(opt.graph_path, labels);
        const auto rows =
            improvement_report(record_sets[0].second, record_sets[1].second, graph);
        io::save_improvement_csv((fs::path(opt.out_dir) / "improvement.csv").string(), labels,
                                 rows);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"context-aware zero-shot recognition pipeline"};
    app.require_subcommand(1);

    BuildGraphOptions bg;
    auto* build_graph = app.add_subcommand("build-graph", "build the relation graph from triples");
    build_graph->add_option("--triples", bg.triples_path, "triple-count CSV")->required();
    build_graph->add_option("--out", bg.out_path, "output graph JSON")->required();
    build_graph->add_option("--classes", bg.classes_path, "class list file (one name per line)");
    build_graph->add_option("--min-count", bg.min_count, "strict occurrence threshold");
    build_graph->add_option("--top-relations", bg.top_relations, "number of predicates kept");

    SynthOptions sy;
    auto* synth = app.add_subcommand("synth", "generate a synthetic world and scenes");
    synth->add_option("--out", sy.out_dir, "output directory")->required();
    synth->add_option("--seed", sy.world.seed, "world seed");
    synth->add_option("--classes", sy.world.n_classes, "total classes");
    synth->add_option("--seen", sy.world.n_seen, "seen classes");
    synth->add_option("--feature-dim", sy.world.feature_dim, "region feature dimension");
    synth->add_option("--embed-dim", sy.world.embed_dim, "word embedding dimension");
    synth->add_option("--predicates", sy.world.n_predicates, "number of predicates");
    synth->add_option("--edge-density", sy.world.edge_density, "relation edge density");
    synth->add_option("--separation", sy.world.prototype_separation, "prototype separation");
    synth->add_option("--ambiguity", sy.world.ambiguity_rate, "ambiguous unseen-object rate");
    synth->add_option("--train-scenes", sy.train_scenes, "training scene count");
    synth->add_option("--test-scenes", sy.test_scenes, "test scene count");
    synth->add_option("--min-objects", sy.min_objects, "min objects per scene");
    synth->add_option("--max-objects", sy.max_objects, "max objects per scene");

    TrainRelnetOptions tr;
    auto* train = app.add_subcommand("train-relnet", "train the relationship inference module");
    train->add_option("--scenes", tr.scenes_path, "labeled scenes JSON")->required();
    train->add_option("--graph", tr.graph_path, "relation graph JSON")->required();
    train->add_option("--out", tr.out_path, "output parameter file")->required();
    train->add_option("--iters", tr.train.iterations, "SGD iterations");
    train->add_option("--batch", tr.train.batch_size, "scenes per batch");
    train->add_option("--lr", tr.train.learning_rate, "initial learning rate");
    train->add_option("--momentum", tr.train.momentum, "SGD momentum");
    train->add_option("--weight-decay", tr.train.weight_decay, "weight decay");
    train->add_option("--gamma", tr.train.gamma, "pairwise weight in the loss");
    train->add_option("--hidden", tr.train.hidden_dim, "MLP hidden width");
    train->add_option("--geom-dims", tr.geom.dims_per_component, "embedding dims per component");
    train->add_option("--seed", tr.train.seed, "training seed");
    train->add_flag("--include-unary", tr.train.include_unary, "keep unary terms in the loss");
    train->add_option("--weights", tr.weights_path, "seen classifier CSV for unary terms");

    SynthesizeOptions sz;
    auto* synthesize = app.add_subcommand("synthesize", "produce the full classifier matrix");
    synthesize->add_option("--method", sz.method, "we|conse|gcn|sync")->required();
    synthesize->add_option("--embeddings", sz.embeddings_path, "embedding CSV")->required();
    synthesize->add_option("--labels", sz.labels_path, "scenes JSON carrying the label space")
        ->required();
    synthesize->add_option("--out", sz.out_path, "output classifier CSV")->required();
    synthesize->add_option("--seen-weights", sz.seen_weights_path, "seen classifier CSV");
    synthesize->add_option("--wordgraph", sz.word_graph_path, "word graph JSON (gcn)");
    synthesize->add_option("--gcn-hidden", sz.gcn.hidden_dim, "gcn hidden width");
    synthesize->add_option("--gcn-iters", sz.gcn.iterations, "gcn training iterations");
    synthesize->add_option("--gcn-lr", sz.gcn.learning_rate, "gcn learning rate");
    synthesize->add_option("--gcn-dropout", sz.gcn.dropout_rate, "gcn dropout rate");
    synthesize->add_option("--seed", sz.gcn.seed, "gcn seed");
    synthesize->add_option("--phantoms", sz.phantoms, "phantom count (sync)");
    synthesize->add_option("--ridge", sz.ridge, "ridge for the sync solve");
    synthesize->add_option("--sim-mode", sz.similarity, "cosine|rbf");
    synthesize->add_option("--sim-bandwidth", sz.bandwidth, "rbf bandwidth");

    InferOptions in;
    auto* infer = app.add_subcommand("infer", "run unary and context-aware inference");
    infer->add_option("--scenes", in.scenes_path, "scenes JSON")->required();
    infer->add_option("--graph", in.graph_path, "relation graph JSON")->required();
    infer->add_option("--relnet", in.relnet_path, "relation net parameters")->required();
    infer->add_option("--weights", in.weights_path, "classifier CSV")->required();
    infer->add_option("--seen-weights", in.seen_weights_path, "seen classifier CSV (conse)");
    infer->add_option("--method", in.method, "we|conse|gcn|sync")->required();
    infer->add_option("--setting", in.setting, "classic|generalized");
    infer->add_option("--out", in.out_dir, "output directory")->required();
    double infer_gamma = -1.0;
    auto* infer_gamma_opt = infer->add_option("--gamma", infer_gamma, "pairwise weight");
    infer->add_option("--topk", in.top_k, "candidates per region");
    infer->add_option("--threads", in.threads, "worker threads");
    infer->add_option("--conse-top-t", in.conse_top_t, "conse combination truncation");

    DetectOptions de;
    auto* detect = app.add_subcommand("detect", "zero-shot detection over proposals");
    detect->add_option("--scenes", de.scenes_path, "scenes JSON with ground truth")->required();
    detect->add_option("--proposals", de.proposals_path, "proposals JSONL")->required();
    detect->add_option("--graph", de.graph_path, "relation graph JSON")->required();
    detect->add_option("--relnet", de.relnet_path, "relation net parameters")->required();
    detect->add_option("--weights", de.weights_path, "classifier CSV")->required();
    detect->add_option("--method", de.method, "we|conse|gcn|sync (sets the gamma default)");
    detect->add_option("--out", de.out_dir, "output directory")->required();
    double detect_gamma = -1.0;
    auto* detect_gamma_opt = detect->add_option("--gamma", detect_gamma, "pairwise weight");
    detect->add_option("--topk", de.top_k, "candidates per region");
    detect->add_option("--threads", de.threads, "worker threads");
    detect->add_option("--nms-iou", de.detect.nms_iou, "NMS IoU threshold");
    detect->add_option("--score-threshold", de.detect.proposal_score_threshold,
                       "objectness filter");
    detect->add_option("--max-regions", de.detect.max_regions, "regions kept for inference");
    bool bg_plain_norm = false;
    detect->add_flag("--bg-plain-norm", bg_plain_norm,
                     "divide the background weight by the plain norm instead of the squared norm");

    EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "recognition metrics and improvement report");
    eval->add_option("--records", ev.records_path, "records JSONL")->required();
    eval->add_option("--context", ev.context_path, "context records JSONL");
    eval->add_option("--scenes", ev.scenes_path, "scenes JSON carrying the label space")
        ->required();
    eval->add_option("--graph", ev.graph_path, "relation graph JSON (improvement report)");
    eval->add_option("--setting", ev.setting, "classic|generalized");
    eval->add_option("--k", ev.k_list, "top-k list")->delimiter(',');
    eval->add_option("--out", ev.out_dir, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*build_graph) return cmd_build_graph(bg);
        if (*synth) return cmd_synth(sy);
        if (*train) return cmd_train_relnet(tr);
        if (*synthesize) return cmd_synthesize(sz);
        if (*infer) {
            if (!infer_gamma_opt->empty()) in.gamma = infer_gamma;
            return cmd_infer(in);
        }
        if (*detect) {
            if (!detect_gamma_opt->empty()) de.gamma = detect_gamma;
            if (bg_plain_norm) de.detect.background_norm = BackgroundNorm::plain;
            return cmd_detect(de);
        }
        if (*eval) return cmd_eval(ev);
    } catch (const std::exception& e) {
        std::cerr << "czsr: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace czsr::cli
