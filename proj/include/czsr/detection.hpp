#pragma once

#include "czsr/crf.hpp"
#include "czsr/kgraph.hpp"
#include "czsr/relnet.hpp"
#include "czsr/types.hpp"
#include "czsr/zsl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace czsr {

/// One scored, classified box. class_id is never the background class.
struct Detection {
    Box box;
    int class_id = -1;
    double score = 0.0;
};

struct Proposal {
    Box box;
    double objectness = 0.0;
};

/// One image's region proposals with objectness scores.
struct ProposalSet {
    std::string image_id;
    std::vector<Proposal> proposals;
};

struct GroundTruthBox {
    Box box;
    int class_id = -1;
};

enum class BackgroundNorm {
    squared,  // divide the class-weight sum by its squared norm, as printed
    plain,    // divide by the plain norm (sensitivity variant)
};

/// Background classifier row: the normalized average of the (pre-normalized)
/// class rows, w_bg = sum_c W_c / ||sum_c W_c||^2.
inline Vector background_weight(const Matrix& weights, BackgroundNorm norm = BackgroundNorm::squared) {
    if (weights.rows() == 0) throw std::invalid_argument("background_weight: empty classifier");
    for (Eigen::Index r = 0; r < weights.rows(); ++r) {
        if (std::abs(weights.row(r).norm() - 1.0) > 1e-6) {
            throw std::invalid_argument(
                "background_weight: classifier rows must be L2-normalized in advance (row " +
                std::to_string(r) + ")");
        }
    }
    Vector sum = weights.colwise().sum().transpose();
    const double n = sum.norm();
    if (!(n > 0.0)) {
        throw std::invalid_argument("background_weight: class rows sum to the zero vector");
    }
    return norm == BackgroundNorm::squared ? Vector(sum / (n * n)) : Vector(sum / n);
}

/// Intersection over union of two boxes; 0 when disjoint.
inline double iou(const Box& a, const Box& b) {
    check_box(a, "iou");
    check_box(b, "iou");
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

/// Greedy per-class non-maximum suppression: walk detections by descending
/// score (ties keep input order) and keep one iff its IoU with every kept
/// same-class detection is <= iou_threshold.
inline std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
    if (iou_threshold < 0.0 || iou_threshold > 1.0) {
        throw std::invalid_argument("nms: iou_threshold must be in [0, 1]");
    }
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const Detection& d : detections) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

struct DetectConfig {
    double proposal_score_threshold = 0.07;
    int max_regions = 100;
    double nms_iou = 0.4;
    InferenceConfig inference;
    BackgroundNorm background_norm = BackgroundNorm::squared;
};

/// Zero-shot detection over one image's proposals: filter by objectness,
/// score with the unary including a background class, keep the top
/// max_regions boxes by best non-background probability, run context-aware
/// inference with the background participating at zero pairwise potential,
/// drop background-labeled boxes, and apply per-class NMS. `features` must
/// align with `proposals`.
inline std::vector<Detection> detect_scene(const std::vector<Proposal>& proposals,
                                           const std::vector<Vector>& features,
                                           const Matrix& weights, const Vector& w_bg,
                                           const RelNetParams& relnet, const GeomEmbedConfig& geom,
                                           const RelationGraph& graph, const DetectConfig& cfg) {
    cfg.inference.validate();
    if (features.size() != proposals.size()) {
        throw std::invalid_argument("detect_scene: one feature per proposal required");
    }
    if (w_bg.size() != weights.cols()) {
        throw std::invalid_argument("detect_scene: background weight dimension mismatch");
    }
    const int n_classes = static_cast<int>(weights.rows());
    const int bg = n_classes;  // background occupies the extra column

    // Objectness filter.
    std::vector<int> survivors;
    for (std::size_t p = 0; p < proposals.size(); ++p) {
        if (proposals[p].objectness > cfg.proposal_score_threshold) {
            survivors.push_back(static_cast<int>(p));
        }
    }
    if (survivors.empty()) return {};

    Matrix extended(n_classes + 1, weights.cols());
    extended.topRows(n_classes) = weights;
    extended.row(bg) = w_bg.transpose();
    std::vector<int> all_classes(n_classes + 1);
    std::iota(all_classes.begin(), all_classes.end(), 0);

    Matrix unary(survivors.size(), n_classes + 1);
    for (std::size_t r = 0; r < survivors.size(); ++r) {
        unary.row(r) = unary_log_probs(extended, features[survivors[r]], all_classes).transpose();
    }

    // Top max_regions by best non-background probability; ties keep input order.
    std::vector<int> order(survivors.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return unary.row(a).head(n_classes).maxCoeff() > unary.row(b).head(n_classes).maxCoeff();
    });
    if (static_cast<int>(order.size()) > cfg.max_regions) order.resize(cfg.max_regions);
    std::sort(order.begin(), order.end());  // back to input order for stable region indexing

    Matrix kept_unary(order.size(), n_classes + 1);
    std::vector<Box> kept_boxes(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
        kept_unary.row(r) = unary.row(order[r]);
        kept_boxes[r] = proposals[survivors[order[r]]].box;
    }

    // Background has no graph node: zero pairwise potential everywhere.
    // Relation potentials per ordered region pair are shared across classes.
    const int n_regions = static_cast<int>(order.size());
    relnet.validate_shapes(geom);
    std::vector<std::vector<Vector>> pots(n_regions, std::vector<Vector>(n_regions));
    for (int i = 0; i < n_regions; ++i) {
        for (int j = 0; j < n_regions; ++j) {
            if (i == j) continue;
            pots[i][j] = detail::relnet_forward(
                             relnet, detail::assemble_relnet_input(relnet, geom, kept_boxes[i],
                                                                   kept_boxes[j], nullptr, nullptr))
                             .out;
        }
    }
    PairwisePotential phi = [&](int i, int j, int ci, int cj) {
        if (ci == bg || cj == bg) return 0.0;
        double v = 0.0;
        for (int k : graph.relations_between(ci, cj)) v += pots[i][j][k];
        return v;
    };

    MeanFieldState state = mean_field(kept_unary, phi, cfg.inference);
    std::vector<int> labels = map_assignment(state);

    std::vector<Detection> detections;
    for (int r = 0; r < n_regions; ++r) {
        if (labels[r] == bg) continue;
        double marginal = 0.0;
        for (std::size_t a = 0; a < state.candidates[r].size(); ++a) {
            if (state.candidates[r][a] == labels[r]) {
                marginal = state.q[r][a];
                break;
            }
        }
        detections.push_back({kept_boxes[r], labels[r], marginal});
    }
    return nms(std::move(detections), cfg.nms_iou);
}

/// Recall@k: keep each image's top-k detections by score, greedily match them
/// one-to-one to ground truths of the same class at IoU >= iou_threshold
/// (each detection claims the highest-IoU unclaimed box), and report the
/// recalled fraction of ground truths whose class is in the restriction.
inline double recall_at_k(const std::vector<std::vector<Detection>>& detections_per_image,
                          const std::vector<std::vector<GroundTruthBox>>& ground_truth_per_image,
                          double iou_threshold, int k, const std::vector<int>& restrict_classes) {
    if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
    if (detections_per_image.size() != ground_truth_per_image.size()) {
        throw std::invalid_argument("recall_at_k: image count mismatch");
    }
    std::vector<bool> in_restrict;
    int max_class = -1;
    for (const auto& gts : ground_truth_per_image) {
        for (const auto& gt : gts) max_class = std::max(max_class, gt.class_id);
    }
    in_restrict.assign(max_class + 1, false);
    for (int c : restrict_classes) {
        if (c >= 0 && c <= max_class) in_restrict[c] = true;
    }

    long total = 0;
    long recalled = 0;
    for (std::size_t img = 0; img < detections_per_image.size(); ++img) {
        const auto& gts = ground_truth_per_image[img];
        for (const auto& gt : gts) {
            if (in_restrict[gt.class_id]) ++total;
        }
        std::vector<Detection> dets = detections_per_image[img];
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        if (static_cast<int>(dets.size()) > k) dets.resize(k);

        std::vector<bool> claimed(gts.size(), false);
        for (const Detection& d : dets) {
            int best_gt = -1;
            double best_iou = 0.0;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (claimed[g] || gts[g].class_id != d.class_id) continue;
                const double overlap = iou(d.box, gts[g].box);
                if (overlap >= iou_threshold && overlap > best_iou) {
                    best_iou = overlap;
                    best_gt = static_cast<int>(g);
                }
            }
            if (best_gt >= 0) {
                claimed[best_gt] = true;
                if (in_restrict[gts[best_gt].class_id]) ++recalled;
            }
        }
    }
    if (total == 0) {
        throw std::invalid_argument("recall_at_k: no ground truths in the restriction");
    }
    return static_cast<double>(recalled) / static_cast<double>(total);
}

}  // namespace czsr
