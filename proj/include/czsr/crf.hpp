#pragma once

#include "czsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace czsr {

struct InferenceConfig {
    double gamma = 1.0;
    int top_k = 5;
    int max_sweeps = 50;
    double convergence_tol = 1e-5;

    void validate() const {
        if (top_k < 1) throw std::invalid_argument("InferenceConfig: top_k must be >= 1");
        if (max_sweeps < 1) throw std::invalid_argument("InferenceConfig: max_sweeps must be >= 1");
        if (gamma < 0.0) throw std::invalid_argument("InferenceConfig: gamma must be >= 0");
        if (convergence_tol < 0.0) {
            throw std::invalid_argument("InferenceConfig: convergence_tol must be >= 0");
        }
    }
};

/// phi(c_i, c_j | B_i, B_j) for regions (i, j); class arguments index the
/// unary matrix columns.
using PairwisePotential = std::function<double(int i, int j, int ci, int cj)>;

/// Per-region candidate shortlist: the k classes with the highest unary
/// probability, in descending order, ties broken toward the lower class
/// index. Context inference can only rerank within these.
inline std::vector<std::vector<int>> prune_topk(const Matrix& unary_log_probs, int k) {
    if (k < 1) throw std::invalid_argument("prune_topk: k must be >= 1");
    const int n = static_cast<int>(unary_log_probs.rows());
    const int n_classes = static_cast<int>(unary_log_probs.cols());
    std::vector<std::vector<int>> candidates(n);
    for (int i = 0; i < n; ++i) {
        std::vector<int> order(n_classes);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (unary_log_probs(i, a) != unary_log_probs(i, b)) {
                return unary_log_probs(i, a) > unary_log_probs(i, b);
            }
            return a < b;
        });
        order.resize(std::min(k, n_classes));
        candidates[i] = std::move(order);
    }
    return candidates;
}

/// phi evaluated for every ordered pair of regions over their candidate
/// lists; shared by the sweep and the free-energy computation.
struct PairwiseTables {
    std::vector<std::vector<Matrix>> phi;  // phi[i][j](a, b) over candidate slots
};

inline PairwiseTables precompute_pairwise(const std::vector<std::vector<int>>& candidates,
                                          const PairwisePotential& phi_fn) {
    const int n = static_cast<int>(candidates.size());
    PairwiseTables tables;
    tables.phi.assign(n, std::vector<Matrix>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Matrix& t = tables.phi[i][j];
            t.resize(candidates[i].size(), candidates[j].size());
            for (std::size_t a = 0; a < candidates[i].size(); ++a) {
                for (std::size_t b = 0; b < candidates[j].size(); ++b) {
                    const double v = phi_fn(i, j, candidates[i][a], candidates[j][b]);
                    if (!std::isfinite(v)) {
                        throw std::runtime_error(
                            "mean_field: non-finite pairwise potential at regions (" +
                            std::to_string(i) + ", " + std::to_string(j) + "), classes (" +
                            std::to_string(candidates[i][a]) + ", " +
                            std::to_string(candidates[j][b]) + ")");
                    }
                    t(a, b) = v;
                }
            }
        }
    }
    return tables;
}

/// Factorized approximation state: per-region candidates and marginals Q_i.
struct MeanFieldState {
    std::vector<std::vector<int>> candidates;
    std::vector<Vector> q;
    int sweeps = 0;
    bool converged = false;
};

namespace detail {

inline Vector softmax(const Vector& v) {
    const double m = v.maxCoeff();
    Vector e = (v.array() - m).exp();
    return e / e.sum();
}

}  // namespace detail

/// Q initialized at the gamma = 0 solution: softmax of the unary over each
/// region's candidates.
inline MeanFieldState mean_field_init(const Matrix& unary_log_probs,
                                      std::vector<std::vector<int>> candidates) {
    MeanFieldState state;
    state.candidates = std::move(candidates);
    state.q.resize(state.candidates.size());
    for (std::size_t i = 0; i < state.candidates.size(); ++i) {
        Vector theta(state.candidates[i].size());
        for (std::size_t a = 0; a < state.candidates[i].size(); ++a) {
            theta[a] = unary_log_probs(i, state.candidates[i][a]);
        }
        state.q[i] = detail::softmax(theta);
    }
    return state;
}

/// One full coordinate sweep in region-index order, each update seeing the
/// latest neighbor marginals:
///   Q_i(c) = softmax( theta_i(c) + gamma * sum_{j != i} sum_{c_j} Q_j(c_j)
///            * (phi_ij(c, c_j) + phi_ji(c_j, c)) )
/// Returns the maximum L1 change of any Q_i.
inline double mean_field_sweep(MeanFieldState& state, const Matrix& unary_log_probs,
                               const PairwiseTables& tables, double gamma) {
    const int n = static_cast<int>(state.candidates.size());
    double max_change = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto& cand = state.candidates[i];
        Vector s(cand.size());
        for (std::size_t a = 0; a < cand.size(); ++a) s[a] = unary_log_probs(i, cand[a]);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            s += gamma * (tables.phi[i][j] * state.q[j]);
            s += gamma * (tables.phi[j][i].transpose() * state.q[j]);
        }
        Vector updated = detail::softmax(s);
        max_change = std::max(max_change, (updated - state.q[i]).cwiseAbs().sum());
        state.q[i] = std::move(updated);
    }
    ++state.sweeps;
    return max_change;
}

/// Mean-field inference over the pruned CRF: candidates from prune_topk,
/// sequential sweeps until the max L1 change drops to convergence_tol or
/// max_sweeps is hit. Deterministic.
inline MeanFieldState mean_field(const Matrix& unary_log_probs, const PairwisePotential& phi_fn,
                                 const InferenceConfig& cfg) {
    cfg.validate();
    auto candidates = prune_topk(unary_log_probs, cfg.top_k);
    PairwiseTables tables = precompute_pairwise(candidates, phi_fn);
    MeanFieldState state = mean_field_init(unary_log_probs, std::move(candidates));
    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        const double change = mean_field_sweep(state, unary_log_probs, tables, cfg.gamma);
        if (change <= cfg.convergence_tol) {
            state.converged = true;
            break;
        }
    }
    return state;
}

/// Per-region argmax of Q_i; ties resolve to the lowest class index.
inline std::vector<int> map_assignment(const MeanFieldState& state) {
    std::vector<int> labels(state.candidates.size());
    for (std::size_t i = 0; i < state.candidates.size(); ++i) {
        int best_slot = 0;
        for (std::size_t a = 1; a < state.candidates[i].size(); ++a) {
            const double q = state.q[i][a];
            const double best = state.q[i][best_slot];
            if (q > best || (q == best && state.candidates[i][a] < state.candidates[i][best_slot])) {
                best_slot = static_cast<int>(a);
            }
        }
        labels[i] = state.candidates[i][best_slot];
    }
    return labels;
}

/// Mean-field free energy E_Q[-theta - gamma * phi] - H(Q), up to the
/// constant log-partition term. Non-increasing across full sweeps.
inline double free_energy(const MeanFieldState& state, const Matrix& unary_log_probs,
                          const PairwiseTables& tables, double gamma) {
    const int n = static_cast<int>(state.candidates.size());
    double f = 0.0;
    for (int i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < state.candidates[i].size(); ++a) {
            const double q = state.q[i][a];
            if (q > 0.0) f += q * (std::log(q) - unary_log_probs(i, state.candidates[i][a]));
            // q == 0 contributes 0 by the entropy convention
        }
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            f -= gamma * state.q[i].dot(tables.phi[i][j] * state.q[j]);
        }
    }
    return f;
}

inline double free_energy(const MeanFieldState& state, const Matrix& unary_log_probs,
                          const PairwisePotential& phi_fn, double gamma) {
    return free_energy(state, unary_log_probs, precompute_pairwise(state.candidates, phi_fn),
                       gamma);
}

struct ExactResult {
    std::vector<int> map_labels;
    double map_score = 0.0;
    Matrix marginals;  // N x |class set|
};

/// Brute-force oracle for the full CRF: enumerates every joint assignment
/// over the unary's class set, returns the exact MAP (ties resolve to the
/// lexicographically smallest assignment) and exact marginals.
inline ExactResult exact_inference(const Matrix& unary_log_probs, const PairwisePotential& phi_fn,
                                   double gamma, std::uint64_t guard = 1000000) {
    const int n = static_cast<int>(unary_log_probs.rows());
    const int n_classes = static_cast<int>(unary_log_probs.cols());
    if (n == 0) throw std::invalid_argument("exact_inference: empty scene");
    double log_total = static_cast<double>(n) * std::log(static_cast<double>(n_classes));
    if (log_total > std::log(static_cast<double>(guard)) + 1e-9) {
        throw std::invalid_argument("exact_inference: |class set|^N exceeds the enumeration guard");
    }

    std::vector<std::vector<int>> full(n);
    for (int i = 0; i < n; ++i) {
        full[i].resize(n_classes);
        std::iota(full[i].begin(), full[i].end(), 0);
    }
    PairwiseTables tables = precompute_pairwise(full, phi_fn);

    auto score_of = [&](const std::vector<int>& assign) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += unary_log_probs(i, assign[i]);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i != j) s += gamma * tables.phi[i][j](assign[i], assign[j]);
            }
        }
        return s;
    };

    std::vector<int> assign(n, 0);
    std::vector<int> best = assign;
    double best_score = score_of(assign);
    double max_score = best_score;
    // Pass 1: MAP and the max score for stable normalization.
    for (;;) {
        int pos = n - 1;
        while (pos >= 0 && assign[pos] == n_classes - 1) assign[pos--] = 0;
        if (pos < 0) break;
        ++assign[pos];
        const double s = score_of(assign);
        if (s > best_score) {
            best_score = s;
            best = assign;
        }
        max_score = std::max(max_score, s);
    }
    // Pass 2: exact marginals by summation.
    Matrix weight_sums = Matrix::Zero(n, n_classes);
    double total = 0.0;
    std::fill(assign.begin(), assign.end(), 0);
    for (;;) {
        const double w = std::exp(score_of(assign) - max_score);
        total += w;
        for (int i = 0; i < n; ++i) weight_sums(i, assign[i]) += w;
        int pos = n - 1;
        while (pos >= 0 && assign[pos] == n_classes - 1) assign[pos--] = 0;
        if (pos < 0) break;
        ++assign[pos];
    }

    ExactResult result;
    result.map_labels = std::move(best);
    result.map_score = best_score;
    result.marginals = weight_sums / total;
    return result;
}

}  // namespace czsr
