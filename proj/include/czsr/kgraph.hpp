#pragma once

#include "czsr/types.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace czsr {

/// Ordered set of predicate names; the index of a predicate is stable after
/// construction.
class RelationSet {
public:
    RelationSet() = default;

    explicit RelationSet(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            for (std::size_t j = i + 1; j < names_.size(); ++j) {
                if (names_[i] == names_[j]) {
                    throw std::invalid_argument("RelationSet: duplicate predicate '" + names_[i] + "'");
                }
            }
        }
    }

    int size() const { return static_cast<int>(names_.size()); }

    const std::string& name(int k) const {
        check_index(k);
        return names_[k];
    }

    const std::vector<std::string>& names() const { return names_; }

    int index(const std::string& name) const {
        for (int k = 0; k < size(); ++k) {
            if (names_[k] == name) return k;
        }
        throw std::invalid_argument("RelationSet: unknown predicate '" + name + "'");
    }

    void check_index(int k) const {
        if (k < 0 || k >= size()) {
            throw std::out_of_range("RelationSet: predicate index " + std::to_string(k) +
                                    " out of range [0, " + std::to_string(size()) + ")");
        }
    }

private:
    std::vector<std::string> names_;
};

/// One <subject, predicate, object> observation with its occurrence count.
struct Triple {
    std::string subject;
    std::string predicate;
    std::string object;
    std::int64_t count = 0;
};

/// Directed multigraph of admissible <subject, predicate, object> tuples over
/// the label space. Immutable after construction; safe to share across
/// threads for read access.
class RelationGraph {
public:
    RelationGraph() = default;

    RelationGraph(LabelSpace labels, RelationSet relations,
                  std::map<std::pair<int, int>, std::vector<int>> edges)
        : labels_(std::move(labels)), relations_(std::move(relations)), edges_(std::move(edges)) {
        for (auto& [pair, preds] : edges_) {
            labels_.check_index(pair.first);
            labels_.check_index(pair.second);
            std::sort(preds.begin(), preds.end());
            preds.erase(std::unique(preds.begin(), preds.end()), preds.end());
            for (int k : preds) relations_.check_index(k);
            edge_count_ += static_cast<int>(preds.size());
        }
    }

    /// Builds the graph from raw annotation counts: keep the top_relations
    /// predicates with the highest summed counts (ties broken by predicate
    /// name), then admit a tuple iff its total count is strictly greater than
    /// min_count. Duplicate triples are summed before thresholding.
    static RelationGraph build(const LabelSpace& labels, const std::vector<Triple>& triples,
                               std::int64_t min_count, int top_relations) {
        if (min_count < 0) throw std::invalid_argument("build_graph: min_count must be >= 0");
        if (top_relations < 1) throw std::invalid_argument("build_graph: top_relations must be >= 1");

        // Merge duplicates; keyed by name so the result cannot depend on
        // input order.
        std::map<std::tuple<std::string, std::string, std::string>, std::int64_t> merged;
        std::map<std::string, std::int64_t> predicate_totals;
        for (const auto& t : triples) {
            if (!labels.contains(t.subject)) {
                throw std::invalid_argument("build_graph: unknown class name '" + t.subject + "'");
            }
            if (!labels.contains(t.object)) {
                throw std::invalid_argument("build_graph: unknown class name '" + t.object + "'");
            }
            if (t.count < 0) throw std::invalid_argument("build_graph: negative count");
            merged[{t.subject, t.predicate, t.object}] += t.count;
            predicate_totals[t.predicate] += t.count;
        }

        std::vector<std::pair<std::string, std::int64_t>> ranked(predicate_totals.begin(),
                                                                 predicate_totals.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (static_cast<int>(ranked.size()) > top_relations) ranked.resize(top_relations);

        std::vector<std::string> predicate_names;
        predicate_names.reserve(ranked.size());
        for (const auto& [name, total] : ranked) predicate_names.push_back(name);
        RelationSet relations(std::move(predicate_names));

        std::map<std::pair<int, int>, std::vector<int>> edges;
        for (const auto& [key, count] : merged) {
            if (count <= min_count) continue;
            const auto& [subj, pred, obj] = key;
            bool kept = false;
            for (int k = 0; k < relations.size(); ++k) {
                if (relations.name(k) == pred) {
                    edges[{labels.index(subj), labels.index(obj)}].push_back(k);
                    kept = true;
                    break;
                }
            }
            (void)kept;
        }
        return RelationGraph(labels, std::move(relations), std::move(edges));
    }

    const LabelSpace& labels() const { return labels_; }
    const RelationSet& relations() const { return relations_; }
    int predicate_count() const { return relations_.size(); }
    int edge_count() const { return edge_count_; }

    /// True iff <subject, predicate, object> is an edge. Direction-sensitive.
    bool has_relation(int subject, int predicate, int object) const {
        labels_.check_index(subject);
        labels_.check_index(object);
        relations_.check_index(predicate);
        auto it = edges_.find({subject, object});
        if (it == edges_.end()) return false;
        return std::binary_search(it->second.begin(), it->second.end(), predicate);
    }

    /// All predicate indices admitted for the ordered pair; |result| = K_mn.
    std::vector<int> relations_between(int subject, int object) const {
        labels_.check_index(subject);
        labels_.check_index(object);
        auto it = edges_.find({subject, object});
        if (it == edges_.end()) return {};
        return it->second;
    }

    /// Number of edges incident to the class as subject or object; a
    /// self-loop edge contributes once.
    int class_degree(int c) const {
        labels_.check_index(c);
        int degree = 0;
        for (const auto& [pair, preds] : edges_) {
            if (pair.first == c || pair.second == c) {
                degree += static_cast<int>(preds.size());
            }
        }
        return degree;
    }

    const std::map<std::pair<int, int>, std::vector<int>>& edges() const { return edges_; }

private:
    LabelSpace labels_;
    RelationSet relations_;
    std::map<std::pair<int, int>, std::vector<int>> edges_;
    int edge_count_ = 0;
};

}  // namespace czsr
