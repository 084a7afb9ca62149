#pragma once

#include "czsr/rng.hpp"
#include "czsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace czsr {

/// Per-class word vectors, rows aligned to the LabelSpace.
struct EmbeddingTable {
    Matrix vectors;  // |C| x d_w

    int dim() const { return static_cast<int>(vectors.cols()); }

    void validate(const LabelSpace& labels) const {
        if (vectors.rows() != labels.size()) {
            throw std::invalid_argument("EmbeddingTable: one vector per class required");
        }
        if (!vectors.allFinite()) {
            throw std::invalid_argument("EmbeddingTable: non-finite entries");
        }
    }
};

/// Log-probabilities over `restrict` from a linear classifier: log softmax of
/// W_restricted * f. `restrict` lists class row indices; the output is
/// aligned to it.
inline Vector unary_log_probs(const Matrix& weights, const Vector& feature,
                              const std::vector<int>& restrict_classes) {
    if (feature.size() != weights.cols()) {
        throw std::invalid_argument("unary_log_probs: feature dimension mismatch");
    }
    if (restrict_classes.empty()) {
        throw std::invalid_argument("unary_log_probs: empty restriction");
    }
    Vector logits(restrict_classes.size());
    for (std::size_t i = 0; i < restrict_classes.size(); ++i) {
        const int c = restrict_classes[i];
        if (c < 0 || c >= weights.rows()) {
            throw std::out_of_range("unary_log_probs: class index out of range");
        }
        logits[i] = weights.row(c).dot(feature);
    }
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

/// Word-embedding classifier: row c is the L2-normalized embedding of class c.
inline Matrix we_weights(const EmbeddingTable& emb) {
    Matrix w = emb.vectors;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        const double norm = w.row(r).norm();
        if (!(norm > 0.0)) {
            throw std::invalid_argument("we_weights: zero-norm embedding at row " +
                                        std::to_string(r));
        }
        w.row(r) /= norm;
    }
    return w;
}

struct ConseResult {
    int predicted = -1;
    Vector combined;  // the convex-combination embedding f_hat
};

/// CONSE: embed the instance as the probability-weighted sum of seen-class
/// embeddings, then predict the nearest class in `restrict` by cosine.
/// top_t > 0 truncates the combination to the top_t seen probabilities
/// (renormalized); 0 uses all.
inline ConseResult conse_infer(const Vector& seen_probs, const EmbeddingTable& emb,
                               const LabelSpace& labels, const std::vector<int>& restrict_classes,
                               int top_t = 0) {
    emb.validate(labels);
    const std::vector<int>& seen = labels.seen();
    if (seen_probs.size() != static_cast<Eigen::Index>(seen.size())) {
        throw std::invalid_argument("conse_infer: seen_probs must align with the seen classes");
    }
    if (std::abs(seen_probs.sum() - 1.0) > 1e-6 || seen_probs.minCoeff() < -1e-12) {
        throw std::invalid_argument("conse_infer: seen_probs must be a probability vector");
    }
    if (restrict_classes.empty()) throw std::invalid_argument("conse_infer: empty restriction");

    std::vector<int> slots(seen.size());
    std::iota(slots.begin(), slots.end(), 0);
    if (top_t > 0 && top_t < static_cast<int>(slots.size())) {
        std::stable_sort(slots.begin(), slots.end(),
                         [&](int a, int b) { return seen_probs[a] > seen_probs[b]; });
        slots.resize(top_t);
    }
    double mass = 0.0;
    for (int s : slots) mass += seen_probs[s];
    if (!(mass > 0.0)) throw std::invalid_argument("conse_infer: zero probability mass");

    Vector combined = Vector::Zero(emb.dim());
    for (int s : slots) combined += (seen_probs[s] / mass) * emb.vectors.row(seen[s]).transpose();
    const double fnorm = combined.norm();
    if (!(fnorm > 0.0)) {
        throw std::invalid_argument("conse_infer: combined embedding is the zero vector");
    }

    int best = -1;
    double best_cos = 0.0;
    for (int c : restrict_classes) {
        labels.check_index(c);
        const double cnorm = emb.vectors.row(c).norm();
        if (!(cnorm > 0.0)) {
            throw std::invalid_argument("conse_infer: zero-norm embedding for class '" +
                                        labels.name(c) + "'");
        }
        const double cosine = emb.vectors.row(c).dot(combined) / (cnorm * fnorm);
        if (best < 0 || cosine > best_cos || (cosine == best_cos && c < best)) {
            best = c;
            best_cos = cosine;
        }
    }
    return {best, std::move(combined)};
}

enum class SimilarityMode { cosine, rbf };

/// Pairwise similarity between row vectors and phantom rows. With
/// row_normalize each row is scaled to sum to 1, making downstream
/// combinations convex.
inline Matrix build_similarity(const Matrix& rows, const Matrix& phantoms, SimilarityMode mode,
                               double bandwidth = 1.0, bool row_normalize = false) {
    if (rows.cols() != phantoms.cols()) {
        throw std::invalid_argument("build_similarity: dimension mismatch");
    }
    Matrix s(rows.rows(), phantoms.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < phantoms.rows(); ++j) {
            if (mode == SimilarityMode::cosine) {
                const double na = rows.row(i).norm();
                const double nb = phantoms.row(j).norm();
                if (!(na > 0.0) || !(nb > 0.0)) {
                    throw std::invalid_argument("build_similarity: zero vector under cosine");
                }
                s(i, j) = rows.row(i).dot(phantoms.row(j)) / (na * nb);
            } else {
                if (!(bandwidth > 0.0)) {
                    throw std::invalid_argument("build_similarity: rbf bandwidth must be > 0");
                }
                const double d2 = (rows.row(i) - phantoms.row(j)).squaredNorm();
                s(i, j) = std::exp(-d2 / (2.0 * bandwidth * bandwidth));
            }
        }
    }
    if (row_normalize) {
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double total = s.row(i).sum();
            if (std::abs(total) < 1e-12) {
                throw std::invalid_argument("build_similarity: row sum too close to zero to normalize");
            }
            s.row(i) /= total;
        }
    }
    return s;
}

struct SyncResult {
    Matrix phantom_classifiers;  // P x d_f
    Matrix w_unseen;             // |U| x d_f
};

/// SYNC synthesis: fit phantom classifiers V to minimize
/// ||W_S - S_S V||^2 + ridge ||V||^2 in closed form, then W_U = S_U V.
inline SyncResult sync_synthesize(const Matrix& s_seen, const Matrix& s_unseen,
                                  const Matrix& w_seen, double ridge) {
    if (s_seen.rows() != w_seen.rows()) {
        throw std::invalid_argument("sync_synthesize: S_S and W_S row counts differ");
    }
    if (s_seen.cols() != s_unseen.cols()) {
        throw std::invalid_argument("sync_synthesize: S_S and S_U phantom counts differ");
    }
    if (ridge < 0.0) throw std::invalid_argument("sync_synthesize: ridge must be >= 0");
    const Eigen::Index p = s_seen.cols();
    Matrix normal = s_seen.transpose() * s_seen + ridge * Matrix::Identity(p, p);
    if (ridge == 0.0) {
        Eigen::FullPivLU<Matrix> lu(normal);
        if (!lu.isInvertible()) {
            throw std::invalid_argument(
                "sync_synthesize: normal matrix is singular; set ridge > 0");
        }
    }
    SyncResult result;
    result.phantom_classifiers = normal.ldlt().solve(s_seen.transpose() * w_seen);
    result.w_unseen = s_unseen * result.phantom_classifiers;
    return result;
}

/// Word graph for GCN synthesis: class nodes plus auxiliary concept nodes,
/// undirected edges, one embedding per node.
struct WordGraph {
    struct Node {
        std::string name;
        Vector embedding;
    };
    std::vector<Node> nodes;
    std::vector<std::pair<int, int>> edges;  // undirected, by node index

    int node_index(const std::string& name) const {
        for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
            if (nodes[i].name == name) return i;
        }
        return -1;
    }

    void validate(const LabelSpace& labels) const {
        if (nodes.empty()) throw std::invalid_argument("WordGraph: no nodes");
        const Eigen::Index d = nodes.front().embedding.size();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].embedding.size() != d) {
                throw std::invalid_argument("WordGraph: inconsistent embedding dimensions");
            }
            for (std::size_t j = i + 1; j < nodes.size(); ++j) {
                if (nodes[i].name == nodes[j].name) {
                    throw std::invalid_argument("WordGraph: duplicate node '" + nodes[i].name + "'");
                }
            }
        }
        for (const auto& [a, b] : edges) {
            if (a < 0 || b < 0 || a >= static_cast<int>(nodes.size()) ||
                b >= static_cast<int>(nodes.size())) {
                throw std::invalid_argument("WordGraph: edge endpoint out of range");
            }
        }
        for (const std::string& cls : labels.names()) {
            if (node_index(cls) < 0) {
                throw std::invalid_argument("WordGraph: class '" + cls + "' has no node");
            }
        }
    }
};

struct GcnConfig {
    int hidden_dim = 128;
    double dropout_rate = 0.5;
    double leaky_slope = 0.2;
    double learning_rate = 0.05;
    int iterations = 300;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    void validate() const {
        if (hidden_dim < 1) throw std::invalid_argument("GcnConfig: hidden_dim must be >= 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw std::invalid_argument("GcnConfig: dropout_rate must be in [0, 1)");
        }
        if (leaky_slope < 0.0) throw std::invalid_argument("GcnConfig: leaky_slope must be >= 0");
        if (iterations < 1) throw std::invalid_argument("GcnConfig: iterations must be >= 1");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("GcnConfig: learning_rate must be > 0");
    }
};

namespace detail {

struct GcnStateless {
    Matrix adj;      // symmetric-normalized adjacency with self-loops
    Matrix x;        // node embeddings
    Matrix theta1;   // d_w x hidden
    Matrix theta2;   // hidden x d_f
};

inline Matrix leaky_relu(const Matrix& m, double slope) {
    return (m.array() >= 0.0).select(m, slope * m);
}

inline Matrix leaky_relu_grad(const Matrix& pre, const Matrix& upstream, double slope) {
    return (pre.array() >= 0.0).select(upstream, slope * upstream);
}

}  // namespace detail

/// GCN classifier synthesis: two graph-convolution layers over the word
/// graph (LeakyReLU between, dropout on the intermediate layer during
/// training, L2-normalized output rows) trained to regress the seen
/// classifier rows by mean squared error. Returns predicted rows for every
/// class in LabelSpace order.
///
/// Nodes are processed in name order internally, so the result is exactly
/// equivariant to the order nodes appear in the input graph.
inline Matrix gcn_synthesize(const WordGraph& graph, const LabelSpace& labels,
                             const Matrix& w_seen, const GcnConfig& cfg,
                             std::vector<double>* loss_log = nullptr) {
    cfg.validate();
    graph.validate(labels);
    if (w_seen.rows() != static_cast<Eigen::Index>(labels.seen().size())) {
        throw std::invalid_argument("gcn_synthesize: one target row per seen class required");
    }
    const int n = static_cast<int>(graph.nodes.size());
    const int d_w = static_cast<int>(graph.nodes.front().embedding.size());
    const int d_f = static_cast<int>(w_seen.cols());

    // Canonical node order by name; everything below happens in that space.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return graph.nodes[a].name < graph.nodes[b].name; });
    std::vector<int> canonical_of(n);
    for (int pos = 0; pos < n; ++pos) canonical_of[order[pos]] = pos;

    Matrix adj = Matrix::Identity(n, n);
    for (const auto& [a, b] : graph.edges) {
        adj(canonical_of[a], canonical_of[b]) = 1.0;
        adj(canonical_of[b], canonical_of[a]) = 1.0;
    }
    Vector inv_sqrt_deg(n);
    for (int i = 0; i < n; ++i) inv_sqrt_deg[i] = 1.0 / std::sqrt(adj.row(i).sum());
    adj = inv_sqrt_deg.asDiagonal() * adj * inv_sqrt_deg.asDiagonal();

    Matrix x(n, d_w);
    for (int i = 0; i < n; ++i) x.row(canonical_of[i]) = graph.nodes[i].embedding.transpose();

    // Seen targets in canonical space.
    std::vector<int> seen_pos;
    std::vector<int> seen_target_row;
    for (std::size_t s = 0; s < labels.seen().size(); ++s) {
        const int node = graph.node_index(labels.name(labels.seen()[s]));
        seen_pos.push_back(canonical_of[node]);
        seen_target_row.push_back(static_cast<int>(s));
    }

    auto rng = make_stream(cfg.seed, "gcn.init");
    auto fan_in_uniform = [&rng](int rows, int cols) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix m(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
        }
        return m;
    };
    Matrix theta1 = fan_in_uniform(d_w, cfg.hidden_dim);
    Matrix theta2 = fan_in_uniform(cfg.hidden_dim, d_f);
    Matrix vel1 = Matrix::Zero(d_w, cfg.hidden_dim);
    Matrix vel2 = Matrix::Zero(cfg.hidden_dim, d_f);

    const Matrix ax = adj * x;  // constant across iterations
    auto dropout_rng = make_stream(cfg.seed, "gcn.dropout");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep = 1.0 - cfg.dropout_rate;
    const double denom = static_cast<double>(seen_pos.size()) * d_f;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        Matrix pre = ax * theta1;
        Matrix hidden = detail::leaky_relu(pre, cfg.leaky_slope);
        Matrix mask = Matrix::Ones(n, cfg.hidden_dim);
        if (cfg.dropout_rate > 0.0) {
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < cfg.hidden_dim; ++c) {
                    mask(r, c) = unit(dropout_rng) < keep ? 1.0 / keep : 0.0;
                }
            }
        }
        Matrix dropped = hidden.cwiseProduct(mask);
        Matrix agg = adj * dropped;
        Matrix out = agg * theta2;

        // Normalized rows and MSE on the seen nodes.
        double loss = 0.0;
        Matrix dout = Matrix::Zero(n, d_f);
        for (std::size_t t = 0; t < seen_pos.size(); ++t) {
            const int r = seen_pos[t];
            const double norm = out.row(r).norm();
            if (!(norm > 1e-12)) throw std::runtime_error("gcn_synthesize: degenerate output row");
            Vector y = out.row(r).transpose() / norm;
            Vector diff = y - w_seen.row(seen_target_row[t]).transpose();
            loss += diff.squaredNorm() / denom;
            Vector dy = 2.0 * diff / denom;
            dout.row(r) = ((dy - y * y.dot(dy)) / norm).transpose();
        }
        if (!std::isfinite(loss)) {
            throw std::runtime_error("gcn_synthesize: non-finite loss at iteration " +
                                     std::to_string(iter));
        }
        if (loss_log != nullptr) loss_log->push_back(loss);

        Matrix dtheta2 = agg.transpose() * dout;
        Matrix dagg = dout * theta2.transpose();
        Matrix ddropped = adj * dagg;  // adj is symmetric
        Matrix dhidden = ddropped.cwiseProduct(mask);
        Matrix dpre = detail::leaky_relu_grad(pre, dhidden, cfg.leaky_slope);
        Matrix dtheta1 = ax.transpose() * dpre;

        vel1 = cfg.momentum * vel1 + dtheta1;
        vel2 = cfg.momentum * vel2 + dtheta2;
        theta1 -= cfg.learning_rate * vel1;
        theta2 -= cfg.learning_rate * vel2;
    }

    // Inference pass, dropout off.
    Matrix out = adj * detail::leaky_relu(ax * theta1, cfg.leaky_slope) * theta2;
    Matrix result(labels.size(), d_f);
    for (int c = 0; c < labels.size(); ++c) {
        const int r = canonical_of[graph.node_index(labels.name(c))];
        const double norm = out.row(r).norm();
        if (!(norm > 1e-12)) throw std::runtime_error("gcn_synthesize: degenerate output row");
        result.row(c) = out.row(r) / norm;
    }
    return result;
}

}  // namespace czsr
