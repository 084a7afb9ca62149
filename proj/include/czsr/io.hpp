#pragma once

#include "czsr/detection.hpp"
#include "czsr/geometry.hpp"
#include "czsr/kgraph.hpp"
#include "czsr/metrics.hpp"
#include "czsr/relnet.hpp"
#include "czsr/types.hpp"
#include "czsr/zsl.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace czsr::io {

using nlohmann::json;

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// Formats are strict: every object must carry exactly the declared keys
// (optional ones may be absent, never unknown ones).
inline void require_keys(const json& j, const std::string& what,
                         const std::vector<std::string>& required,
                         const std::vector<std::string>& optional = {}) {
    if (!j.is_object()) throw std::runtime_error(what + ": expected a JSON object");
    for (const auto& key : required) {
        if (!j.contains(key)) throw std::runtime_error(what + ": missing field '" + key + "'");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        bool known = false;
        for (const auto& k : required) known = known || k == key;
        for (const auto& k : optional) known = known || k == key;
        if (!known) throw std::runtime_error(what + ": unknown field '" + key + "'");
    }
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(current);
            current.clear();
        } else if (c != '\r') {
            current += c;
        }
    }
    fields.push_back(current);
    return fields;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// ---------------------------------------------------------------------------
// Triple counts: CSV with header subject,predicate,object,count
// ---------------------------------------------------------------------------

inline std::vector<Triple> load_triples_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error(path + ": empty triples file");
    const auto header = split_csv_line(lines[0]);
    const std::vector<std::string> expected = {"subject", "predicate", "object", "count"};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (i >= header.size() || header[i] != expected[i]) {
            throw std::runtime_error(path + ": missing or misplaced column '" + expected[i] + "'");
        }
    }
    if (header.size() != expected.size()) {
        throw std::runtime_error(path + ": unexpected extra column '" + header[expected.size()] + "'");
    }
    std::vector<Triple> triples;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split_csv_line(lines[ln]);
        if (fields.size() != 4) {
            throw std::runtime_error(path + ":" + std::to_string(ln + 1) + ": expected 4 fields");
        }
        Triple t;
        t.subject = fields[0];
        t.predicate = fields[1];
        t.object = fields[2];
        try {
            std::size_t used = 0;
            t.count = std::stoll(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(ln + 1) + ": bad count '" +
                                     fields[3] + "'");
        }
        triples.push_back(std::move(t));
    }
    return triples;
}

// ---------------------------------------------------------------------------
// Relation graph: {"relations": [names], "edges": [{"s","p","o"}]}
// ---------------------------------------------------------------------------

inline void save_graph_json(const std::string& path, const RelationGraph& graph) {
    json j;
    j["relations"] = graph.relations().names();
    json edges = json::array();
    for (const auto& [pair, preds] : graph.edges()) {
        for (int k : preds) {
            edges.push_back({{"s", graph.labels().name(pair.first)},
                             {"p", graph.relations().name(k)},
                             {"o", graph.labels().name(pair.second)}});
        }
    }
    j["edges"] = std::move(edges);
    write_file(path, j.dump(2) + "\n");
}

inline RelationGraph load_graph_json(const std::string& path, const LabelSpace& labels) {
    const json j = json::parse(read_file(path));
    require_keys(j, path, {"relations", "edges"});
    std::vector<std::string> relation_names;
    for (const auto& r : j.at("relations")) relation_names.push_back(r.get<std::string>());
    RelationSet relations(relation_names);
    std::map<std::pair<int, int>, std::vector<int>> edges;
    for (const auto& e : j.at("edges")) {
        require_keys(e, path + " edge", {"s", "p", "o"});
        const int s = labels.index(e.at("s").get<std::string>());
        const int o = labels.index(e.at("o").get<std::string>());
        const int p = relations.index(e.at("p").get<std::string>());
        edges[{s, o}].push_back(p);
    }
    return RelationGraph(labels, std::move(relations), std::move(edges));
}

// ---------------------------------------------------------------------------
// Named row matrices (embeddings, classifiers): CSV class,v0,v1,...
// ---------------------------------------------------------------------------

struct NamedMatrix {
    std::vector<std::string> names;
    Matrix values;
};

inline void save_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                            const Matrix& values) {
    if (static_cast<Eigen::Index>(names.size()) != values.rows()) {
        throw std::invalid_argument("save_matrix_csv: one name per row required");
    }
    std::ostringstream out;
    out << "class";
    for (Eigen::Index d = 0; d < values.cols(); ++d) out << ",v" << d;
    out << "\n";
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        out << names[r];
        for (Eigen::Index d = 0; d < values.cols(); ++d) out << "," << format_double(values(r, d));
        out << "\n";
    }
    write_file(path, out.str());
}

inline NamedMatrix load_matrix_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error(path + ": empty matrix file");
    const auto header = split_csv_line(lines[0]);
    if (header.empty() || header[0] != "class") {
        throw std::runtime_error(path + ": missing column 'class'");
    }
    for (std::size_t d = 1; d < header.size(); ++d) {
        if (header[d] != "v" + std::to_string(d - 1)) {
            throw std::runtime_error(path + ": bad column '" + header[d] + "', expected v" +
                                     std::to_string(d - 1));
        }
    }
    const int dim = static_cast<int>(header.size()) - 1;
    if (dim < 1) throw std::runtime_error(path + ": no value columns");
    NamedMatrix m;
    std::vector<std::vector<double>> rows;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split_csv_line(lines[ln]);
        if (static_cast<int>(fields.size()) != dim + 1) {
            throw std::runtime_error(path + ":" + std::to_string(ln + 1) + ": expected " +
                                     std::to_string(dim + 1) + " fields");
        }
        m.names.push_back(fields[0]);
        std::vector<double> row(dim);
        for (int d = 0; d < dim; ++d) {
            try {
                std::size_t used = 0;
                row[d] = std::stod(fields[d + 1], &used);
                if (used != fields[d + 1].size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw std::runtime_error(path + ":" + std::to_string(ln + 1) + ": bad number '" +
                                         fields[d + 1] + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    m.values.resize(rows.size(), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int d = 0; d < dim; ++d) m.values(r, d) = rows[r][d];
    }
    return m;
}

/// Reorders the named rows to match `order`; every requested name must be
/// present exactly once.
inline Matrix bind_rows(const NamedMatrix& m, const std::vector<std::string>& order) {
    Matrix out(order.size(), m.values.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        int found = -1;
        for (std::size_t r = 0; r < m.names.size(); ++r) {
            if (m.names[r] == order[i]) {
                if (found >= 0) throw std::runtime_error("duplicate row for class '" + order[i] + "'");
                found = static_cast<int>(r);
            }
        }
        if (found < 0) throw std::runtime_error("missing row for class '" + order[i] + "'");
        out.row(i) = m.values.row(found);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenes: label space plus regions with boxes, features and optional labels
// ---------------------------------------------------------------------------

struct ScenesFile {
    LabelSpace labels;
    std::vector<Scene> scenes;
};

inline void save_scenes_json(const std::string& path, const LabelSpace& labels,
                             const std::vector<Scene>& scenes) {
    json j;
    j["classes"] = labels.names();
    json seen = json::array();
    for (int c : labels.seen()) seen.push_back(labels.name(c));
    j["seen"] = std::move(seen);
    json jscenes = json::array();
    for (const Scene& scene : scenes) {
        json regions = json::array();
        for (const Region& r : scene.regions) {
            json region;
            region["box"] = {r.box.x, r.box.y, r.box.w, r.box.h};
            region["feature"] = std::vector<double>(r.feature.data(),
                                                    r.feature.data() + r.feature.size());
            if (r.label >= 0) region["label"] = labels.name(r.label);
            regions.push_back(std::move(region));
        }
        jscenes.push_back({{"id", scene.id}, {"regions", std::move(regions)}});
    }
    j["scenes"] = std::move(jscenes);
    write_file(path, j.dump(2) + "\n");
}

inline ScenesFile load_scenes_json(const std::string& path) {
    const json j = json::parse(read_file(path));
    require_keys(j, path, {"classes", "seen", "scenes"});
    std::vector<std::string> classes;
    for (const auto& c : j.at("classes")) classes.push_back(c.get<std::string>());
    std::vector<std::string> seen;
    for (const auto& c : j.at("seen")) seen.push_back(c.get<std::string>());
    ScenesFile file{LabelSpace(classes, seen), {}};
    for (const auto& js : j.at("scenes")) {
        require_keys(js, path + " scene", {"id", "regions"});
        Scene scene;
        scene.id = js.at("id").get<std::string>();
        for (const auto& jr : js.at("regions")) {
            require_keys(jr, path + " region", {"box", "feature"}, {"label"});
            const auto& box = jr.at("box");
            if (!box.is_array() || box.size() != 4) {
                throw std::runtime_error(path + ": region box must be [x, y, w, h]");
            }
            Region region;
            region.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                          box[3].get<double>()};
            check_box(region.box, path.c_str());
            const auto& feat = jr.at("feature");
            region.feature.resize(feat.size());
            for (std::size_t d = 0; d < feat.size(); ++d) region.feature[d] = feat[d].get<double>();
            if (jr.contains("label")) region.label = file.labels.index(jr.at("label").get<std::string>());
            scene.regions.push_back(std::move(region));
        }
        file.scenes.push_back(std::move(scene));
    }
    return file;
}

// ---------------------------------------------------------------------------
// Word graph: {"nodes": [{"name", "embedding"}], "edges": [[a, b]]}
// ---------------------------------------------------------------------------

inline void save_word_graph_json(const std::string& path, const WordGraph& graph) {
    json j;
    json nodes = json::array();
    for (const auto& n : graph.nodes) {
        nodes.push_back({{"name", n.name},
                         {"embedding", std::vector<double>(n.embedding.data(),
                                                           n.embedding.data() + n.embedding.size())}});
    }
    j["nodes"] = std::move(nodes);
    json edges = json::array();
    for (const auto& [a, b] : graph.edges) {
        edges.push_back({graph.nodes[a].name, graph.nodes[b].name});
    }
    j["edges"] = std::move(edges);
    write_file(path, j.dump(2) + "\n");
}

inline WordGraph load_word_graph_json(const std::string& path) {
    const json j = json::parse(read_file(path));
    require_keys(j, path, {"nodes", "edges"});
    WordGraph graph;
    for (const auto& jn : j.at("nodes")) {
        require_keys(jn, path + " node", {"name", "embedding"});
        WordGraph::Node node;
        node.name = jn.at("name").get<std::string>();
        const auto& emb = jn.at("embedding");
        node.embedding.resize(emb.size());
        for (std::size_t d = 0; d < emb.size(); ++d) node.embedding[d] = emb[d].get<double>();
        graph.nodes.push_back(std::move(node));
    }
    for (const auto& je : j.at("edges")) {
        if (!je.is_array() || je.size() != 2) {
            throw std::runtime_error(path + ": edge must be a [a, b] pair");
        }
        const int a = graph.node_index(je[0].get<std::string>());
        const int b = graph.node_index(je[1].get<std::string>());
        if (a < 0 || b < 0) {
            throw std::runtime_error(path + ": edge references unknown node");
        }
        graph.edges.push_back({a, b});
    }
    return graph;
}

// ---------------------------------------------------------------------------
// Relation net parameters: named arrays with a dimension header
// ---------------------------------------------------------------------------

struct RelNetFile {
    RelNetParams params;
    GeomEmbedConfig geom;
};

inline void save_relnet_json(const std::string& path, const RelNetParams& params,
                             const GeomEmbedConfig& geom) {
    params.validate_shapes(geom);
    auto flat = [](const Matrix& m) {
        std::vector<double> v;
        v.reserve(m.size());
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
        }
        return v;
    };
    json j;
    j["header"] = {{"version", 1},
                   {"input_dim", params.input_dim()},
                   {"hidden_dim", params.hidden_dim()},
                   {"relation_count", params.relation_count()},
                   {"appearance_dim", static_cast<int>(params.appearance_proj.rows())},
                   {"feature_dim", static_cast<int>(params.appearance_proj.cols())}};
    j["geom"] = {{"dims_per_component", geom.dims_per_component},
                 {"wavelength_base", geom.wavelength_base},
                 {"clamp_eps", geom.clamp_eps}};
    j["layer1_w"] = flat(params.w1);
    j["layer1_b"] = std::vector<double>(params.b1.data(), params.b1.data() + params.b1.size());
    j["layer2_w"] = flat(params.w2);
    j["layer2_b"] = std::vector<double>(params.b2.data(), params.b2.data() + params.b2.size());
    if (params.has_appearance()) j["appearance_proj"] = flat(params.appearance_proj);
    write_file(path, j.dump(2) + "\n");
}

inline RelNetFile load_relnet_json(const std::string& path) {
    const json j = json::parse(read_file(path));
    require_keys(j, path, {"header", "geom", "layer1_w", "layer1_b", "layer2_w", "layer2_b"},
                 {"appearance_proj"});
    const json& h = j.at("header");
    require_keys(h, path + " header",
                 {"version", "input_dim", "hidden_dim", "relation_count", "appearance_dim",
                  "feature_dim"});
    if (h.at("version").get<int>() != 1) {
        throw std::runtime_error(path + ": unsupported version " +
                                 std::to_string(h.at("version").get<int>()));
    }
    const json& g = j.at("geom");
    require_keys(g, path + " geom", {"dims_per_component", "wavelength_base", "clamp_eps"});
    RelNetFile file;
    file.geom.dims_per_component = g.at("dims_per_component").get<int>();
    file.geom.wavelength_base = g.at("wavelength_base").get<double>();
    file.geom.clamp_eps = g.at("clamp_eps").get<double>();

    const int in_dim = h.at("input_dim").get<int>();
    const int hidden = h.at("hidden_dim").get<int>();
    const int n_rel = h.at("relation_count").get<int>();
    const int app_dim = h.at("appearance_dim").get<int>();
    const int feat_dim = h.at("feature_dim").get<int>();
    auto unflatten = [&path](const json& arr, Eigen::Index rows, Eigen::Index cols,
                             const char* name) {
        if (static_cast<Eigen::Index>(arr.size()) != rows * cols) {
            throw std::runtime_error(path + ": '" + name + "' has wrong length");
        }
        Matrix m(rows, cols);
        std::size_t i = 0;
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = arr[i++].get<double>();
        }
        return m;
    };
    file.params.w1 = unflatten(j.at("layer1_w"), hidden, in_dim, "layer1_w");
    file.params.w2 = unflatten(j.at("layer2_w"), n_rel, hidden, "layer2_w");
    file.params.b1 = unflatten(j.at("layer1_b"), hidden, 1, "layer1_b").col(0);
    file.params.b2 = unflatten(j.at("layer2_b"), n_rel, 1, "layer2_b").col(0);
    if (app_dim > 0) {
        if (!j.contains("appearance_proj")) {
            throw std::runtime_error(path + ": header declares appearance mode but "
                                            "'appearance_proj' is missing");
        }
        file.params.appearance_proj =
            unflatten(j.at("appearance_proj"), app_dim, feat_dim, "appearance_proj");
    }
    file.params.validate_shapes(file.geom);
    return file;
}

// ---------------------------------------------------------------------------
// Proposals: JSON lines {"image_id", "proposals": [{"box", "score"}]}
// ---------------------------------------------------------------------------

inline std::vector<ProposalSet> load_proposals_jsonl(const std::string& path) {
    std::vector<ProposalSet> sets;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        require_keys(j, path, {"image_id", "proposals"});
        ProposalSet set;
        set.image_id = j.at("image_id").get<std::string>();
        for (const auto& jp : j.at("proposals")) {
            require_keys(jp, path + " proposal", {"box", "score"});
            const auto& box = jp.at("box");
            if (!box.is_array() || box.size() != 4) {
                throw std::runtime_error(path + ": proposal box must be [x, y, w, h]");
            }
            Proposal p;
            p.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                     box[3].get<double>()};
            check_box(p.box, path.c_str());
            p.objectness = jp.at("score").get<double>();
            set.proposals.push_back(p);
        }
        sets.push_back(std::move(set));
    }
    return sets;
}

inline void save_proposals_jsonl(const std::string& path, const std::vector<ProposalSet>& sets) {
    std::ostringstream out;
    for (const auto& set : sets) {
        json j;
        j["image_id"] = set.image_id;
        json props = json::array();
        for (const auto& p : set.proposals) {
            props.push_back({{"box", {p.box.x, p.box.y, p.box.w, p.box.h}}, {"score", p.objectness}});
        }
        j["proposals"] = std::move(props);
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Evaluation records: JSON lines {"region_id", "gt", "ranked"}
// ---------------------------------------------------------------------------

inline void save_records_jsonl(const std::string& path, const LabelSpace& labels,
                               const std::vector<EvalRecord>& records) {
    std::ostringstream out;
    for (const auto& r : records) {
        json ranked = json::array();
        for (const auto& p : r.ranked) {
            ranked.push_back({{"class", labels.name(p.class_id)}, {"score", p.score}});
        }
        json j;
        j["region_id"] = r.region_id;
        j["gt"] = labels.name(r.ground_truth);
        j["ranked"] = std::move(ranked);
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

inline std::vector<EvalRecord> load_records_jsonl(const std::string& path,
                                                  const LabelSpace& labels) {
    std::vector<EvalRecord> records;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        require_keys(j, path, {"region_id", "gt", "ranked"});
        EvalRecord r;
        r.region_id = j.at("region_id").get<std::string>();
        r.ground_truth = labels.index(j.at("gt").get<std::string>());
        double prev = std::numeric_limits<double>::infinity();
        for (const auto& jp : j.at("ranked")) {
            require_keys(jp, path + " ranked entry", {"class", "score"});
            RankedPrediction p;
            p.class_id = labels.index(jp.at("class").get<std::string>());
            p.score = jp.at("score").get<double>();
            if (p.score > prev) {
                throw std::runtime_error(path + ": ranked list not sorted by descending score");
            }
            prev = p.score;
            r.ranked.push_back(p);
        }
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Detections: CSV image_id,class,score,x,y,w,h
// ---------------------------------------------------------------------------

inline void save_detections_csv(
    const std::string& path, const LabelSpace& labels,
    const std::vector<std::pair<std::string, std::vector<Detection>>>& per_image) {
    std::ostringstream out;
    out << "image_id,class,score,x,y,w,h\n";
    for (const auto& [image_id, dets] : per_image) {
        for (const auto& d : dets) {
            out << image_id << "," << labels.name(d.class_id) << "," << format_double(d.score)
                << "," << format_double(d.box.x) << "," << format_double(d.box.y) << ","
                << format_double(d.box.w) << "," << format_double(d.box.h) << "\n";
        }
    }
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Improvement analysis: CSV class,delta,degree,frequency
// ---------------------------------------------------------------------------

inline void save_improvement_csv(const std::string& path, const LabelSpace& labels,
                                 const std::vector<ImprovementRow>& rows) {
    std::ostringstream out;
    out << "class,delta,degree,frequency\n";
    for (const auto& row : rows) {
        out << labels.name(row.class_id) << "," << format_double(row.delta) << "," << row.degree
            << "," << row.frequency << "\n";
    }
    write_file(path, out.str());
}

}  // namespace czsr::io
