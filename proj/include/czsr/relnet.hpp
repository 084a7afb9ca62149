#pragma once

#include "czsr/geometry.hpp"
#include "czsr/kgraph.hpp"
#include "czsr/rng.hpp"
#include "czsr/types.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace czsr {

/// Two-layer perceptron scoring every predicate for an ordered box pair from
/// embedded geometry. In appearance-augmented mode the input is extended with
/// the two regions' features projected through appearance_proj (trained along
/// with the rest); that mode is off by default.
struct RelNetParams {
    Matrix w1;  // hidden x in
    Vector b1;
    Matrix w2;  // K x hidden
    Vector b2;
    Matrix appearance_proj;  // proj_dim x feature_dim; 0x0 in geometry-only mode

    int input_dim() const { return static_cast<int>(w1.cols()); }
    int hidden_dim() const { return static_cast<int>(w1.rows()); }
    int relation_count() const { return static_cast<int>(w2.rows()); }
    bool has_appearance() const { return appearance_proj.size() > 0; }

    static RelNetParams init(const GeomEmbedConfig& cfg, int relation_count, int hidden_dim,
                             std::uint64_t seed, int appearance_proj_dim = 0,
                             int feature_dim = 0) {
        cfg.validate();
        if (relation_count < 1) throw std::invalid_argument("RelNetParams: relation_count must be >= 1");
        if (hidden_dim < 1) throw std::invalid_argument("RelNetParams: hidden_dim must be >= 1");
        if (appearance_proj_dim > 0 && feature_dim < 1) {
            throw std::invalid_argument("RelNetParams: appearance mode needs feature_dim");
        }
        const int in_dim = cfg.output_dim() + 2 * appearance_proj_dim;
        RelNetParams p;
        auto rng = make_stream(seed, "relnet.init");
        auto fan_in_uniform = [&rng](Eigen::Index rows, Eigen::Index cols) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
            std::uniform_real_distribution<double> dist(-bound, bound);
            Matrix m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
            }
            return m;
        };
        p.w1 = fan_in_uniform(hidden_dim, in_dim);
        p.b1 = Vector::Zero(hidden_dim);
        p.w2 = fan_in_uniform(relation_count, hidden_dim);
        p.b2 = Vector::Zero(relation_count);
        if (appearance_proj_dim > 0) {
            p.appearance_proj = fan_in_uniform(appearance_proj_dim, feature_dim);
        }
        return p;
    }

    void validate_shapes(const GeomEmbedConfig& cfg) const {
        cfg.validate();
        const int expected_in =
            cfg.output_dim() + (has_appearance() ? 2 * static_cast<int>(appearance_proj.rows()) : 0);
        if (input_dim() != expected_in || b1.size() != w1.rows() || w2.cols() != w1.rows() ||
            b2.size() != w2.rows()) {
            throw std::invalid_argument("RelNetParams: inconsistent parameter shapes");
        }
        if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite() ||
            (has_appearance() && !appearance_proj.allFinite())) {
            throw std::invalid_argument("RelNetParams: non-finite parameters");
        }
    }
};

/// Gradient of the pseudo-likelihood loss with respect to every parameter.
struct RelNetGrad {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Matrix appearance_proj;

    static RelNetGrad zeros_like(const RelNetParams& p) {
        RelNetGrad g;
        g.w1 = Matrix::Zero(p.w1.rows(), p.w1.cols());
        g.b1 = Vector::Zero(p.b1.size());
        g.w2 = Matrix::Zero(p.w2.rows(), p.w2.cols());
        g.b2 = Vector::Zero(p.b2.size());
        g.appearance_proj = Matrix::Zero(p.appearance_proj.rows(), p.appearance_proj.cols());
        return g;
    }

    void add_scaled(const RelNetGrad& other, double s) {
        w1 += s * other.w1;
        b1 += s * other.b1;
        w2 += s * other.w2;
        b2 += s * other.b2;
        if (appearance_proj.size() > 0) appearance_proj += s * other.appearance_proj;
    }
};

namespace detail {

struct RelNetForward {
    Vector input;   // assembled MLP input
    Vector pre;     // w1 * input + b1
    Vector hidden;  // relu(pre)
    Vector out;     // w2 * hidden + b2
};

inline Vector assemble_relnet_input(const RelNetParams& params, const GeomEmbedConfig& cfg,
                                    const Box& subject, const Box& object,
                                    const Vector* subject_feature, const Vector* object_feature) {
    Vector geom = embed_pair_geometry(subject, object, cfg);
    if (!params.has_appearance()) return geom;
    if (subject_feature == nullptr || object_feature == nullptr) {
        throw std::invalid_argument("relnet: appearance mode requires region features");
    }
    if (subject_feature->size() != params.appearance_proj.cols() ||
        object_feature->size() != params.appearance_proj.cols()) {
        throw std::invalid_argument("relnet: feature dimension does not match appearance_proj");
    }
    const int d_a = static_cast<int>(params.appearance_proj.rows());
    Vector x(geom.size() + 2 * d_a);
    x << geom, params.appearance_proj * (*subject_feature), params.appearance_proj * (*object_feature);
    return x;
}

inline RelNetForward relnet_forward(const RelNetParams& params, Vector input) {
    RelNetForward f;
    f.input = std::move(input);
    f.pre = params.w1 * f.input + params.b1;
    f.hidden = f.pre.cwiseMax(0.0);
    f.out = params.w2 * f.hidden + params.b2;
    return f;
}

// Backprop d(out) through the two layers (and the appearance projection when
// present), accumulating into grad.
inline void relnet_backward(const RelNetParams& params, const GeomEmbedConfig& cfg,
                            const RelNetForward& f, const Vector& dout,
                            const Vector* subject_feature, const Vector* object_feature,
                            RelNetGrad& grad) {
    grad.w2.noalias() += dout * f.hidden.transpose();
    grad.b2 += dout;
    Vector dhidden = params.w2.transpose() * dout;
    Vector dpre = (f.pre.array() > 0.0).select(dhidden, 0.0);
    grad.w1.noalias() += dpre * f.input.transpose();
    grad.b1 += dpre;
    if (params.has_appearance()) {
        const int geom_dim = cfg.output_dim();
        const int d_a = static_cast<int>(params.appearance_proj.rows());
        Vector dinput = params.w1.transpose() * dpre;
        grad.appearance_proj.noalias() +=
            dinput.segment(geom_dim, d_a) * subject_feature->transpose();
        grad.appearance_proj.noalias() +=
            dinput.segment(geom_dim + d_a, d_a) * object_feature->transpose();
    }
}

inline double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace detail

/// l(r | B_i, B_j) for every predicate, in RelationSet order. The pair is
/// ordered; swapping the boxes generally changes the output.
inline Vector relation_potentials(const RelNetParams& params, const GeomEmbedConfig& cfg,
                                  const Box& subject, const Box& object,
                                  const Vector* subject_feature = nullptr,
                                  const Vector* object_feature = nullptr) {
    params.validate_shapes(cfg);
    return detail::relnet_forward(
               params, detail::assemble_relnet_input(params, cfg, subject, object,
                                                     subject_feature, object_feature))
        .out;
}

/// phi(c_i, c_j | B_i, B_j): sum of relation potentials over the predicates
/// the graph admits for the ordered class pair. Empty edge set -> 0.
inline double pairwise_potential(const RelNetParams& params, const GeomEmbedConfig& cfg,
                                 const RelationGraph& graph, int subject_class, int object_class,
                                 const Box& subject, const Box& object,
                                 const Vector* subject_feature = nullptr,
                                 const Vector* object_feature = nullptr) {
    const std::vector<int> admitted = graph.relations_between(subject_class, object_class);
    if (admitted.empty()) return 0.0;
    const Vector potentials =
        relation_potentials(params, cfg, subject, object, subject_feature, object_feature);
    double phi = 0.0;
    for (int k : admitted) phi += potentials[k];
    return phi;
}

namespace detail {

// Shared implementation of the pseudo-likelihood objective. Each region's
// true label is scored against every seen class conditioned on the other
// regions' true labels, with both orientations of the pairwise potential.
// When `unary` is supplied it is an N x |C| matrix of theta values; only the
// seen columns are read. Setting `grad` computes exact analytic gradients.
inline double pseudo_likelihood_impl(const Scene& scene, const RelNetParams& params,
                                     const GeomEmbedConfig& cfg, const RelationGraph& graph,
                                     const Matrix* unary, double gamma, RelNetGrad* grad) {
    params.validate_shapes(cfg);
    if (params.relation_count() != graph.predicate_count()) {
        throw std::invalid_argument("pseudo_likelihood: relation count mismatch with graph");
    }
    const LabelSpace& labels = graph.labels();
    const std::vector<int>& seen = labels.seen();
    if (seen.empty()) throw std::invalid_argument("pseudo_likelihood: no seen classes");
    const int n = scene.size();
    for (const Region& r : scene.regions) {
        if (r.label < 0) throw std::invalid_argument("pseudo_likelihood: unlabeled region");
        if (!labels.is_seen(r.label)) {
            throw std::invalid_argument("pseudo_likelihood: region labeled with unseen class '" +
                                        labels.name(r.label) + "'; training is seen-only");
        }
    }
    if (unary != nullptr && (unary->rows() != n || unary->cols() != labels.size())) {
        throw std::invalid_argument("pseudo_likelihood: unary must be N x |C|");
    }

    // Forward every ordered pair once.
    std::vector<std::vector<RelNetForward>> fwd(n, std::vector<RelNetForward>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            fwd[i][j] = relnet_forward(
                params, assemble_relnet_input(params, cfg, scene.regions[i].box,
                                              scene.regions[j].box, &scene.regions[i].feature,
                                              &scene.regions[j].feature));
        }
    }

    const int n_seen = static_cast<int>(seen.size());
    double loss = 0.0;
    // softmax over seen classes per region, kept for the backward pass
    Matrix resid;
    if (grad != nullptr) resid = Matrix::Zero(n, n_seen);

    for (int i = 0; i < n; ++i) {
        Vector scores = Vector::Zero(n_seen);
        for (int s = 0; s < n_seen; ++s) {
            const int c = seen[s];
            double v = unary != nullptr ? (*unary)(i, c) : 0.0;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const int cj = scene.regions[j].label;
                for (int k : graph.relations_between(c, cj)) v += gamma * fwd[i][j].out[k];
                for (int k : graph.relations_between(cj, c)) v += gamma * fwd[j][i].out[k];
            }
            scores[s] = v;
        }
        const double lse = log_sum_exp(scores);
        int true_slot = -1;
        for (int s = 0; s < n_seen; ++s) {
            if (seen[s] == scene.regions[i].label) {
                true_slot = s;
                break;
            }
        }
        loss += lse - scores[true_slot];
        if (grad != nullptr) {
            resid.row(i) = (scores.array() - lse).exp();
            resid(i, true_slot) -= 1.0;
        }
    }

    if (grad != nullptr) {
        *grad = RelNetGrad::zeros_like(params);
        const int n_relations = params.relation_count();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                // d loss / d out of the (i, j) ordered pair: region i's
                // conditional uses phi_ij(c, c*_j); region j's uses
                // phi_ij(c*_i, c).
                Vector dout = Vector::Zero(n_relations);
                const int cj = scene.regions[j].label;
                const int ci = scene.regions[i].label;
                for (int s = 0; s < n_seen; ++s) {
                    const double wi = gamma * resid(i, s);
                    if (wi != 0.0) {
                        for (int k : graph.relations_between(seen[s], cj)) dout[k] += wi;
                    }
                    const double wj = gamma * resid(j, s);
                    if (wj != 0.0) {
                        for (int k : graph.relations_between(ci, seen[s])) dout[k] += wj;
                    }
                }
                relnet_backward(params, cfg, fwd[i][j], dout, &scene.regions[i].feature,
                                &scene.regions[j].feature, *grad);
            }
        }
    }
    return loss;
}

}  // namespace detail

/// Negative log pseudo-likelihood of the scene's ground-truth labels; always
/// >= 0. Pass unary = nullptr to omit unary potentials (the training-time
/// variant).
inline double pseudo_likelihood_loss(const Scene& scene, const RelNetParams& params,
                                     const GeomEmbedConfig& cfg, const RelationGraph& graph,
                                     const Matrix* unary, double gamma) {
    return detail::pseudo_likelihood_impl(scene, params, cfg, graph, unary, gamma, nullptr);
}

/// Exact analytic gradient of pseudo_likelihood_loss w.r.t. every parameter.
inline RelNetGrad loss_gradients(const Scene& scene, const RelNetParams& params,
                                 const GeomEmbedConfig& cfg, const RelationGraph& graph,
                                 const Matrix* unary, double gamma, double* loss_out = nullptr) {
    RelNetGrad grad;
    const double loss =
        detail::pseudo_likelihood_impl(scene, params, cfg, graph, unary, gamma, &grad);
    if (loss_out != nullptr) *loss_out = loss;
    return grad;
}

/// Optimizer schedule for the relation net: SGD with momentum, weight decay,
/// and staged learning-rate drops.
struct TrainConfig {
    double learning_rate = 0.005;
    std::vector<int> decay_steps;  // empty -> drops at 1/3 and 2/3 of the run
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int iterations = 1000;
    double gamma = 1.0;
    bool include_unary = false;
    int hidden_dim = 256;
    std::uint64_t seed = 0;

    void validate() const {
        if (iterations <= 0) throw std::invalid_argument("TrainConfig: iterations must be > 0");
        if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) {
            throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
        }
        if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (gamma < 0.0) throw std::invalid_argument("TrainConfig: gamma must be >= 0");
        if (hidden_dim < 1) throw std::invalid_argument("TrainConfig: hidden_dim must be >= 1");
    }

    std::vector<int> effective_decay_steps() const {
        if (!decay_steps.empty()) return decay_steps;
        return {iterations / 3, 2 * iterations / 3};
    }
};

/// One SGD-with-momentum update. A step with zero gradient, zero weight decay
/// and zero velocity leaves the parameters unchanged.
struct SgdMomentum {
    RelNetGrad velocity;

    explicit SgdMomentum(const RelNetParams& p) : velocity(RelNetGrad::zeros_like(p)) {}

    void step(RelNetParams& p, const RelNetGrad& grad, double lr, double momentum,
              double weight_decay) {
        auto update = [&](Matrix& vel, Matrix& param, const Matrix& g) {
            vel = momentum * vel + (g + weight_decay * param);
            param -= lr * vel;
        };
        auto update_vec = [&](Vector& vel, Vector& param, const Vector& g) {
            vel = momentum * vel + (g + weight_decay * param);
            param -= lr * vel;
        };
        update(velocity.w1, p.w1, grad.w1);
        update_vec(velocity.b1, p.b1, grad.b1);
        update(velocity.w2, p.w2, grad.w2);
        update_vec(velocity.b2, p.b2, grad.b2);
        if (p.has_appearance()) update(velocity.appearance_proj, p.appearance_proj, grad.appearance_proj);
    }
};

/// Trains the relation net by pseudo-likelihood over the labeled scenes.
/// Batches are drawn from a named sub-stream of tc.seed, gradients averaged
/// across the batch; deterministic given the seed. `unaries`, when provided,
/// must align with `dataset` (required iff tc.include_unary).
inline RelNetParams train_relnet(const std::vector<Scene>& dataset, const RelationGraph& graph,
                                 const GeomEmbedConfig& cfg, const TrainConfig& tc,
                                 const std::vector<Matrix>* unaries = nullptr,
                                 std::vector<double>* loss_log = nullptr) {
    tc.validate();
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_relnet: empty dataset");
    if (tc.include_unary && (unaries == nullptr || unaries->size() != dataset.size())) {
        throw std::invalid_argument("train_relnet: include_unary requires one unary matrix per scene");
    }

    RelNetParams params =
        RelNetParams::init(cfg, graph.predicate_count(), tc.hidden_dim, tc.seed);
    SgdMomentum optimizer(params);
    auto batch_rng = make_stream(tc.seed, "relnet.batch");
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    const std::vector<int> decay_steps = tc.effective_decay_steps();

    double lr = tc.learning_rate;
    for (int iter = 0; iter < tc.iterations; ++iter) {
        for (int d : decay_steps) {
            if (iter == d && iter > 0) lr *= tc.decay_factor;
        }
        RelNetGrad batch_grad = RelNetGrad::zeros_like(params);
        double batch_loss = 0.0;
        for (int b = 0; b < tc.batch_size; ++b) {
            const std::size_t idx = pick(batch_rng);
            const Matrix* unary = tc.include_unary ? &(*unaries)[idx] : nullptr;
            double loss = 0.0;
            RelNetGrad g = loss_gradients(dataset[idx], params, cfg, graph, unary, tc.gamma, &loss);
            batch_grad.add_scaled(g, 1.0 / tc.batch_size);
            batch_loss += loss / tc.batch_size;
        }
        if (!std::isfinite(batch_loss)) {
            throw std::runtime_error("train_relnet: non-finite loss at iteration " +
                                     std::to_string(iter));
        }
        if (loss_log != nullptr) loss_log->push_back(batch_loss);
        optimizer.step(params, batch_grad, lr, tc.momentum, tc.weight_decay);
    }
    return params;
}

}  // namespace czsr
