#pragma once

#include "czsr/kgraph.hpp"
#include "czsr/types.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace czsr {

struct RankedPrediction {
    int class_id = -1;
    double score = 0.0;
};

/// One region's evaluation row: ground truth plus the ranked predictions,
/// scores descending.
struct EvalRecord {
    std::string region_id;
    int ground_truth = -1;
    std::vector<RankedPrediction> ranked;
};

namespace detail {

inline bool in_restriction(const std::vector<int>& restrict_classes, int c) {
    return std::find(restrict_classes.begin(), restrict_classes.end(), c) !=
           restrict_classes.end();
}

}  // namespace detail

/// Fraction of records (with ground truth in the restriction) whose top-1
/// prediction is correct.
inline double per_instance_accuracy(const std::vector<EvalRecord>& records,
                                    const std::vector<int>& restrict_gt) {
    long total = 0;
    long correct = 0;
    for (const auto& r : records) {
        if (!detail::in_restriction(restrict_gt, r.ground_truth)) continue;
        ++total;
        if (!r.ranked.empty() && r.ranked.front().class_id == r.ground_truth) ++correct;
    }
    if (total == 0) throw std::invalid_argument("per_instance_accuracy: empty restriction");
    return static_cast<double>(correct) / static_cast<double>(total);
}

/// Unweighted mean of per-class top-1 accuracy over classes with at least one
/// instance in the restriction.
inline double per_class_accuracy(const std::vector<EvalRecord>& records,
                                 const std::vector<int>& restrict_gt) {
    std::map<int, std::pair<long, long>> by_class;  // class -> (correct, total)
    for (const auto& r : records) {
        if (!detail::in_restriction(restrict_gt, r.ground_truth)) continue;
        auto& [correct, total] = by_class[r.ground_truth];
        ++total;
        if (!r.ranked.empty() && r.ranked.front().class_id == r.ground_truth) ++correct;
    }
    if (by_class.empty()) throw std::invalid_argument("per_class_accuracy: empty restriction");
    double sum = 0.0;
    for (const auto& [cls, counts] : by_class) {
        sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    return sum / static_cast<double>(by_class.size());
}

/// 2ab / (a + b); 0 when both sides are 0.
inline double harmonic_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) throw std::invalid_argument("harmonic_mean: inputs must be >= 0");
    if (a + b == 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

/// Fraction of records whose ground truth appears among the top-k ranked
/// predictions.
inline double topk_accuracy(const std::vector<EvalRecord>& records, int k,
                            const std::vector<int>& restrict_gt) {
    if (k < 1) throw std::invalid_argument("topk_accuracy: k must be >= 1");
    long total = 0;
    long hit = 0;
    for (const auto& r : records) {
        if (!detail::in_restriction(restrict_gt, r.ground_truth)) continue;
        ++total;
        const int limit = std::min<int>(k, static_cast<int>(r.ranked.size()));
        for (int i = 0; i < limit; ++i) {
            if (r.ranked[i].class_id == r.ground_truth) {
                ++hit;
                break;
            }
        }
    }
    if (total == 0) throw std::invalid_argument("topk_accuracy: empty restriction");
    return static_cast<double>(hit) / static_cast<double>(total);
}

/// One row of the per-class improvement analysis: accuracy delta between the
/// context and base runs joined with the class's graph degree and test
/// frequency.
struct ImprovementRow {
    int class_id = -1;
    double delta = 0.0;
    int degree = 0;
    long frequency = 0;
};

/// Per-class accuracy deltas (context minus base) for every class with at
/// least one test instance. Both record sets must cover the same regions.
inline std::vector<ImprovementRow> improvement_report(const std::vector<EvalRecord>& base,
                                                      const std::vector<EvalRecord>& context,
                                                      const RelationGraph& graph) {
    auto ids_of = [](const std::vector<EvalRecord>& records) {
        std::vector<std::string> ids;
        ids.reserve(records.size());
        for (const auto& r : records) ids.push_back(r.region_id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    if (ids_of(base) != ids_of(context)) {
        throw std::invalid_argument("improvement_report: record sets cover different regions");
    }

    auto tally = [](const std::vector<EvalRecord>& records) {
        std::map<int, std::pair<long, long>> by_class;
        for (const auto& r : records) {
            auto& [correct, total] = by_class[r.ground_truth];
            ++total;
            if (!r.ranked.empty() && r.ranked.front().class_id == r.ground_truth) ++correct;
        }
        return by_class;
    };
    const auto base_tally = tally(base);
    const auto context_tally = tally(context);

    std::vector<ImprovementRow> rows;
    for (const auto& [cls, counts] : base_tally) {
        const auto& ctx = context_tally.at(cls);
        ImprovementRow row;
        row.class_id = cls;
        row.delta = static_cast<double>(ctx.first) / static_cast<double>(ctx.second) -
                    static_cast<double>(counts.first) / static_cast<double>(counts.second);
        row.degree = graph.class_degree(cls);
        row.frequency = counts.second;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace czsr
