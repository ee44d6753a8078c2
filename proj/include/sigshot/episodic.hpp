#pragma once

// N-way K-shot episode sampling, prototype scoring, the matching +
// disentanglement objective, position/orientation fusion, and the training
// loop.
//
// Per class k the query is matched against the class support set:
//   - with cross attention, the query is attended against every support of
//     the class and the attended supports are averaged into the prototype
//     (at K = 1 this is exactly the pairwise pipeline);
//   - without it, the prototype is the plain mean of the raw support
//     representations.
// The class distance is the length-normalized DTW cumulative distance (soft
// min while training, hard min at evaluation) or the Frobenius distance when
// DTW is disabled; class probabilities are the softmax of negated distances.
//
// Late fusion trains the position and orientation streams independently and
// combines per-class probabilities at prediction time as P = Pj + alpha*Pa.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sigshot/autodiff.hpp"
#include "sigshot/common.hpp"
#include "sigshot/cross_attention.hpp"
#include "sigshot/dataset.hpp"
#include "sigshot/dtw.hpp"
#include "sigshot/encoder.hpp"
#include "sigshot/rng.hpp"

namespace sigshot {

// ------------------------------------------------------------------ episodes

struct Episode {
    int way = 0;
    int shot = 0;
    int queries_per_class = 0;
    std::vector<int> class_ids;            // episode order, length way
    std::vector<std::vector<int>> support; // [way][shot] instance indices
    // (instance index, class position in class_ids)
    std::vector<std::pair<int, int>> query;

    void validate() const {
        if (static_cast<int>(class_ids.size()) != way || static_cast<int>(support.size()) != way)
            throw ShapeError("ShapeMismatch", "episode class bookkeeping is inconsistent");
        for (const auto& s : support)
            if (static_cast<int>(s.size()) != shot)
                throw ShapeError("ShapeMismatch", "episode does not have exactly K supports per class");
        for (auto [idx, pos] : query)
            if (pos < 0 || pos >= way) throw ShapeError("IndexOutOfRange", "query label outside episode classes");
    }
};

namespace detail {

// First n elements of a seeded partial Fisher-Yates shuffle of pool.
inline std::vector<int> draw_without_replacement(std::vector<int> pool, int n, std::mt19937_64& gen) {
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(gen))]);
    }
    pool.resize(static_cast<size_t>(n));
    return pool;
}

} // namespace detail

// Uniform class subset without replacement; within each class a uniform
// support/query split without overlap. When query_pool is given, queries come
// from it instead (same class ids; overlap is impossible across pools).
inline Episode sample_episode(const Dataset& ds, const std::vector<int>& class_pool, int way, int shot,
                              int queries_per_class, std::mt19937_64& gen,
                              const Dataset* query_pool = nullptr) {
    if (way < 1 || shot < 1 || queries_per_class < 1)
        throw ShapeError("ShapeMismatch", "episode needs way, shot, queries >= 1");
    if (static_cast<int>(class_pool.size()) < way)
        throw DataError("InsufficientClasses", "need " + std::to_string(way) + " classes, have " +
                                                   std::to_string(class_pool.size()));

    Episode ep;
    ep.way = way;
    ep.shot = shot;
    ep.queries_per_class = queries_per_class;
    ep.class_ids = detail::draw_without_replacement(class_pool, way, gen);

    for (int k = 0; k < way; ++k) {
        int cid = ep.class_ids[static_cast<size_t>(k)];
        auto it = ds.by_class.find(cid);
        int have = it == ds.by_class.end() ? 0 : static_cast<int>(it->second.size());
        if (query_pool == nullptr) {
            if (have < shot + queries_per_class)
                throw DataError("InsufficientInstances",
                                "class " + std::to_string(cid) + " has " + std::to_string(have) +
                                    " instances, needs " + std::to_string(shot + queries_per_class));
            std::vector<int> picked = detail::draw_without_replacement(it->second, shot + queries_per_class, gen);
            ep.support.push_back({picked.begin(), picked.begin() + shot});
            for (int q = 0; q < queries_per_class; ++q)
                ep.query.emplace_back(picked[static_cast<size_t>(shot + q)], k);
        } else {
            if (have < shot)
                throw DataError("InsufficientInstances", "class " + std::to_string(cid) + " has too few supports");
            auto qit = query_pool->by_class.find(cid);
            int qhave = qit == query_pool->by_class.end() ? 0 : static_cast<int>(qit->second.size());
            if (qhave < queries_per_class)
                throw DataError("InsufficientInstances", "class " + std::to_string(cid) + " has too few queries");
            ep.support.push_back(detail::draw_without_replacement(it->second, shot, gen));
            std::vector<int> qs = detail::draw_without_replacement(qit->second, queries_per_class, gen);
            for (int q : qs) ep.query.emplace_back(q, k);
        }
    }
    ep.validate();
    return ep;
}

// ------------------------------------------------------------------- models

struct StreamModel {
    EncoderParams encoder;
    CsaParams csa;
    bool use_csa = true;
    bool use_dtw = true;
    bool tie_csa = false;
    double gamma = 0.1; // soft-dtw temperature (training)
    int tau = 1;
    ImageKind kind = ImageKind::position;
    int img_width = 32; // W' = representation length m

    void validate() const {
        encoder.validate();
        csa.validate();
        if (csa.dim != encoder.feature_dim)
            throw ShapeError("DimMismatch", "CsA dim must equal the encoder feature dim");
        if (tau < 1) throw ShapeError("InvalidTau", "tau must be >= 1");
        if (!(gamma > 0.0)) throw ShapeError("InvalidGamma", "gamma must be > 0");
        if (img_width < 1) throw ShapeError("ShapeMismatch", "image width must be >= 1");
    }
};

enum class FusionMode { position_only, orientation_only, early, late };

inline const char* to_string(FusionMode m) {
    switch (m) {
    case FusionMode::position_only: return "position_only";
    case FusionMode::orientation_only: return "orientation_only";
    case FusionMode::early: return "early";
    case FusionMode::late: return "late";
    }
    return "?";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "position_only") return FusionMode::position_only;
    if (s == "orientation_only") return FusionMode::orientation_only;
    if (s == "early") return FusionMode::early;
    if (s == "late") return FusionMode::late;
    throw DataError("SchemaError", "unknown fusion mode \"" + s + "\"");
}

struct FusionModel {
    FusionMode mode = FusionMode::position_only;
    double alpha = 1.0; // weight of the orientation stream's scores
    StreamModel position; // also hosts the single stream of early/only modes
    std::optional<StreamModel> orientation;

    void validate() const {
        position.validate();
        if (mode == FusionMode::late) {
            if (!orientation) throw ShapeError("ShapeMismatch", "late fusion requires an orientation stream");
            orientation->validate();
        }
        if (alpha < 0.0) throw ShapeError("ShapeMismatch", "alpha must be nonnegative");
    }

    std::vector<const StreamModel*> streams() const {
        std::vector<const StreamModel*> out{&position};
        if (mode == FusionMode::late && orientation) out.push_back(&*orientation);
        return out;
    }
};

struct TrainConfig {
    double learning_rate = 0.001;
    double decay_factor = 0.5;
    int decay_interval = 200; // iterations between x0.5 steps
    double lambda = 0.1;      // disentanglement weight
    int iterations = 1000;
    int val_episodes = 500; // episodes per validation check
    int val_every = 200;    // validation interval, 0 disables
    int batch_size = 1;     // episodes per update
    int way = 5;
    int shot = 1;
    int queries = 1;
    std::uint64_t seed = 7;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0) || !(decay_factor > 0.0) || decay_interval < 1)
            throw DataError("SchemaError", "learning rate schedule values must be positive");
        if (lambda < 0.0) throw DataError("SchemaError", "lambda must be nonnegative");
        if (iterations < 1 || batch_size < 1 || way < 1 || shot < 1 || queries < 1)
            throw DataError("SchemaError", "iteration/episode counts must be >= 1");
        if (val_every < 0 || val_episodes < 0) throw DataError("SchemaError", "validation counts must be >= 0");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
            throw DataError("SchemaError", "optimizer moment coefficients out of range");
    }
};

// --------------------------------------------------------------- prototypes

// Elementwise mean of same-shape representations.
inline Representation prototype(const std::vector<Representation>& embeddings) {
    if (embeddings.empty()) throw ShapeError("EmptyClass", "prototype of an empty support set");
    Representation c = embeddings[0];
    for (size_t i = 1; i < embeddings.size(); ++i) {
        if (!embeddings[i].same_shape(c)) throw ShapeError("ShapeMismatch", "support embeddings differ in shape");
        for (int k = 0; k < c.size(); ++k) c.v[k] += embeddings[i].v[k];
    }
    double inv = 1.0 / static_cast<double>(embeddings.size());
    for (double& x : c.v) x *= inv;
    return c;
}

// Per-class means, classes sorted by label.
inline std::vector<std::pair<int, Representation>> prototypes(const std::vector<Representation>& embeddings,
                                                              const std::vector<int>& labels) {
    if (embeddings.size() != labels.size())
        throw ShapeError("ShapeMismatch", "prototype labels do not match embeddings");
    std::map<int, std::vector<Representation>> groups;
    for (size_t i = 0; i < embeddings.size(); ++i) groups[labels[i]].push_back(embeddings[i]);
    std::vector<std::pair<int, Representation>> out;
    for (auto& [label, embs] : groups) out.emplace_back(label, prototype(embs));
    return out;
}

inline ad::Var mean_vars(ad::Tape& tape, const std::vector<ad::Var>& xs) {
    if (xs.empty()) throw ShapeError("EmptyClass", "mean of an empty var list");
    ad::Var acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = tape.add(acc, xs[i]);
    return xs.size() > 1 ? tape.scale(acc, 1.0 / static_cast<double>(xs.size())) : acc;
}

// ------------------------------------------------------------------ scoring

struct StreamVars {
    EncoderVars enc;
    CsaVars csa;
};

inline StreamVars stream_leaves(ad::Tape& tape, const StreamModel& s, bool requires_grad) {
    return {encoder_leaves(tape, s.encoder, requires_grad), csa_leaves(tape, s.csa, requires_grad, s.tie_csa)};
}

inline std::vector<ad::Var> stream_param_vars(const StreamModel& s, const StreamVars& v) {
    std::vector<ad::Var> out{v.enc.w1, v.enc.b1, v.enc.w2, v.enc.b2, v.csa.m1q, v.csa.m2q, v.csa.m3q};
    if (!s.tie_csa) {
        out.push_back(v.csa.m1p);
        out.push_back(v.csa.m2p);
        out.push_back(v.csa.m3p);
    }
    return out;
}

inline std::vector<Matrix*> stream_param_values(StreamModel& s) {
    std::vector<Matrix*> out{&s.encoder.w1, &s.encoder.b1, &s.encoder.w2, &s.encoder.b2,
                             &s.csa.m1q, &s.csa.m2q, &s.csa.m3q};
    if (!s.tie_csa) {
        out.push_back(&s.csa.m1p);
        out.push_back(&s.csa.m2p);
        out.push_back(&s.csa.m3p);
    }
    return out;
}

// Distance composition for one query against each class's supports. Soft
// mode returns tape nodes (differentiable); hard mode returns plain values
// computed over the same attended/prototype graph.
struct ClassDistances {
    std::vector<ad::Var> soft;    // way entries when mode == soft
    std::vector<double> hard;     // way entries when mode == hard
    std::vector<ad::Var> q_side;  // attended (or raw) query per class
    std::vector<ad::Var> c_side;  // prototype per class
};

inline ClassDistances class_distances_on_tape(ad::Tape& tape, ad::Var query,
                                              const std::vector<std::vector<ad::Var>>& class_supports,
                                              const StreamModel& cfg, const StreamVars& vars,
                                              dtw::Mode mode) {
    ClassDistances out;
    int m = tape.value(query).rows;
    double inv_m = 1.0 / static_cast<double>(m);
    for (const std::vector<ad::Var>& supports : class_supports) {
        if (supports.empty()) throw ShapeError("EmptyClass", "class without supports");
        ad::Var q_side, c_side;
        if (cfg.use_csa) {
            std::vector<ad::Var> attended_q, attended_p;
            for (ad::Var s : supports) {
                AttendedVars a = cross_attend_on_tape(tape, query, s, vars.csa);
                attended_q.push_back(a.q_hat);
                attended_p.push_back(a.p_hat);
            }
            q_side = mean_vars(tape, attended_q);
            c_side = mean_vars(tape, attended_p);
        } else {
            q_side = query;
            c_side = mean_vars(tape, supports);
        }
        out.q_side.push_back(q_side);
        out.c_side.push_back(c_side);
        if (cfg.use_dtw) {
            if (mode == dtw::Mode::soft) {
                ad::Var e = tape.squared_euclidean_rows(q_side, c_side);
                out.soft.push_back(tape.scale(tape.soft_dtw(e, cfg.tau, cfg.gamma), inv_m));
            } else {
                Matrix e = dtw::local_costs(tape.value(q_side), tape.value(c_side));
                out.hard.push_back(dtw::dtw(e, cfg.tau, dtw::Mode::hard).normalized);
            }
        } else {
            ad::Var d = frobenius_distance_on_tape(tape, q_side, c_side);
            if (mode == dtw::Mode::soft)
                out.soft.push_back(d);
            else
                out.hard.push_back(tape.scalar_value(d));
        }
    }
    return out;
}

inline std::vector<double> softmax_neg(const std::vector<double>& distances) {
    double lo = distances[0];
    for (double d : distances) lo = std::min(lo, d);
    double s = 0.0;
    std::vector<double> p(distances.size());
    for (size_t k = 0; k < distances.size(); ++k) {
        p[k] = std::exp(lo - distances[k]); // == exp(-d - max(-d))
        s += p[k];
    }
    for (double& x : p) x /= s;
    return p;
}

// Class probabilities for one query embedding: softmax over negated
// distances. Hard-min DTW by default (the evaluation setting).
inline std::vector<double> class_scores(const Representation& query,
                                        const std::vector<std::vector<Representation>>& class_supports,
                                        const StreamModel& stream, dtw::Mode mode = dtw::Mode::hard) {
    ad::Tape tape;
    StreamVars vars = stream_leaves(tape, stream, false);
    ad::Var q = tape.leaf(query, false);
    std::vector<std::vector<ad::Var>> sup;
    for (const auto& cls : class_supports) {
        sup.emplace_back();
        for (const Representation& r : cls) sup.back().push_back(tape.leaf(r, false));
    }
    ClassDistances d = class_distances_on_tape(tape, q, sup, stream, vars, mode);
    std::vector<double> dist;
    if (mode == dtw::Mode::soft)
        for (ad::Var v : d.soft) dist.push_back(tape.scalar_value(v));
    else
        dist = d.hard;
    return softmax_neg(dist);
}

// Disentanglement value: -(1 / (B*m)) * sum of row L2 norms.
inline double disentanglement_loss(const Matrix& u, int batch, int m) {
    if (batch < 1 || m < 1) throw ShapeError("ShapeMismatch", "disentanglement needs B, m >= 1");
    double s = 0.0;
    for (int i = 0; i < u.rows; ++i) {
        double r = 0.0;
        for (int j = 0; j < u.cols; ++j) r += u(i, j) * u(i, j);
        s += std::sqrt(r);
    }
    return -s / (static_cast<double>(batch) * m);
}

// --------------------------------------------------------------- objectives

struct EpisodeLoss {
    ad::Var total;                  // CE mean + lambda * L_d
    double cross_entropy = 0.0;     // value of the CE term
    double disentanglement = 0.0;   // value of L_d
    std::vector<int> predictions;   // per query, argmax class position (soft distances)
};

// Builds the full matching objective for one episode on the tape:
//   L = -(1/Nq) sum_i log p(y_i | q_i)  +  lambda * L_d
// with soft-min DTW distances. L_d runs over rows of the attended
// representations aligned by the hard DTW path of the true class (an
// identity alignment when DTW is off); the path itself is treated as
// constant, gradients flow through the row values.
inline EpisodeLoss episode_loss_on_tape(ad::Tape& tape, const Episode& ep,
                                        const std::vector<Matrix>& support_columns,
                                        const std::vector<Matrix>& query_columns, const StreamModel& cfg,
                                        const StreamVars& vars, double lambda) {
    ep.validate();
    int m = cfg.img_width;
    int n_query = static_cast<int>(ep.query.size());

    std::vector<std::vector<ad::Var>> class_supports(static_cast<size_t>(ep.way));
    size_t sidx = 0;
    for (int k = 0; k < ep.way; ++k)
        for (int s = 0; s < ep.shot; ++s)
            class_supports[static_cast<size_t>(k)].push_back(
                encode_columns(tape, support_columns[sidx++], vars.enc));

    std::vector<ad::Var> ce_terms;
    std::vector<ad::Var> ld_sums;
    EpisodeLoss out;
    for (int qi = 0; qi < n_query; ++qi) {
        int y = ep.query[static_cast<size_t>(qi)].second;
        ad::Var q = encode_columns(tape, query_columns[static_cast<size_t>(qi)], vars.enc);
        ClassDistances d = class_distances_on_tape(tape, q, class_supports, cfg, vars, dtw::Mode::soft);

        std::vector<ad::Var> neg;
        for (ad::Var v : d.soft) neg.push_back(tape.negate(v));
        ad::Var neg_row = tape.concat_scalars(neg);
        ad::Var logp = tape.sub(tape.cell(neg_row, 0, y), tape.logsumexp_row(neg_row));
        ce_terms.push_back(tape.negate(logp));

        const Matrix& row = tape.value(neg_row);
        int best = 0;
        for (int k = 1; k < ep.way; ++k)
            if (row(0, k) > row(0, best)) best = k;
        out.predictions.push_back(best);

        // aligned rows of the true class for the disentanglement term
        ad::Var qs = d.q_side[static_cast<size_t>(y)];
        ad::Var cs = d.c_side[static_cast<size_t>(y)];
        std::vector<std::pair<int, int>> path;
        if (cfg.use_dtw) {
            Matrix e = dtw::local_costs(tape.value(qs), tape.value(cs));
            path = dtw::dtw(e, cfg.tau, dtw::Mode::hard).path;
        } else {
            for (int i = 1; i <= m; ++i) path.emplace_back(i, i);
        }
        dtw::AlignedPairs ap = dtw::aligned_pairs(path, m, m);
        ad::Var u = tape.vstack(tape.gather_rows(qs, ap.query_rows), tape.gather_rows(cs, ap.support_rows));
        ld_sums.push_back(tape.sum_all(tape.sqrt_elem(tape.row_sqnorm(u))));
    }

    ad::Var ce_sum = ce_terms[0];
    for (size_t i = 1; i < ce_terms.size(); ++i) ce_sum = tape.add(ce_sum, ce_terms[i]);
    ad::Var ce_mean = tape.scale(ce_sum, 1.0 / n_query);

    ad::Var ld_sum = ld_sums[0];
    for (size_t i = 1; i < ld_sums.size(); ++i) ld_sum = tape.add(ld_sum, ld_sums[i]);
    ad::Var ld = tape.scale(ld_sum, -1.0 / (static_cast<double>(n_query) * m));

    out.total = tape.add(ce_mean, tape.scale(ld, lambda));
    out.cross_entropy = tape.scalar_value(ce_mean);
    out.disentanglement = tape.scalar_value(ld);
    return out;
}

struct LossBreakdown {
    double total = 0.0;
    double cross_entropy = 0.0;
    double disentanglement = 0.0;
    std::vector<int> predictions;
};

// Value-level matching loss of one episode (no gradients kept).
inline LossBreakdown matching_loss(const Episode& ep, const std::vector<Matrix>& support_columns,
                                   const std::vector<Matrix>& query_columns, const StreamModel& stream,
                                   double lambda) {
    ad::Tape tape;
    StreamVars vars = stream_leaves(tape, stream, false);
    EpisodeLoss l = episode_loss_on_tape(tape, ep, support_columns, query_columns, stream, vars, lambda);
    return {tape.scalar_value(l.total), l.cross_entropy, l.disentanglement, l.predictions};
}

// ---------------------------------------------------------------- late fuse

struct FusedPrediction {
    std::vector<double> scores;
    int argmax = 0; // ties resolved to the lowest index
};

inline FusedPrediction late_fuse(const std::vector<double>& p_position, const std::vector<double>& p_orientation,
                                 double alpha) {
    if (p_position.size() != p_orientation.size())
        throw ShapeError("LengthMismatch", "late fusion inputs differ in length");
    if (p_position.empty()) throw ShapeError("LengthMismatch", "late fusion of empty score vectors");
    FusedPrediction out;
    out.scores.resize(p_position.size());
    for (size_t k = 0; k < p_position.size(); ++k)
        out.scores[k] = p_position[k] + alpha * p_orientation[k];
    for (size_t k = 1; k < out.scores.size(); ++k)
        if (out.scores[k] > out.scores[static_cast<size_t>(out.argmax)]) out.argmax = static_cast<int>(k);
    return out;
}

// --------------------------------------------------------------------- Adam

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long t = 0;

    void init(const std::vector<Matrix*>& params) {
        m.clear();
        v.clear();
        for (const Matrix* p : params) {
            m.push_back(Matrix::zeros(p->rows, p->cols));
            v.push_back(Matrix::zeros(p->rows, p->cols));
        }
        t = 0;
    }
};

inline void adam_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamState& st,
                      double lr, double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ShapeError("ShapeMismatch", "optimizer state does not match parameters");
    st.t += 1;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t p = 0; p < params.size(); ++p) {
        Matrix& w = *params[p];
        const Matrix& g = grads[p];
        for (int k = 0; k < w.size(); ++k) {
            double gk = g.v[k];
            st.m[p].v[k] = beta1 * st.m[p].v[k] + (1.0 - beta1) * gk;
            st.v[p].v[k] = beta2 * st.v[p].v[k] + (1.0 - beta2) * gk * gk;
            double mhat = st.m[p].v[k] / c1;
            double vhat = st.v[p].v[k] / c2;
            w.v[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// --------------------------------------------------------------- evaluation

struct EvalReport {
    int episodes = 0;
    int way = 0;
    int shot = 0;
    int queries = 0;
    double accuracy = 0.0;
    double ci95 = 0.0;
    std::map<int, std::map<int, int>> confusion; // true class id -> predicted class id -> count
    std::vector<double> per_episode_accuracy;
};

inline int eval_threads_from_env() {
    if (const char* env = std::getenv("SIGSHOT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Per-stream encoder inputs for one dataset.
struct StreamColumns {
    const std::vector<Matrix>* position = nullptr;    // columns for model.position
    const std::vector<Matrix>* orientation = nullptr; // columns for model.orientation (late mode)
};

namespace detail {

inline std::vector<double> stream_query_scores(const StreamModel& stream,
                                               const std::vector<Matrix>& support_cols,
                                               const Matrix& query_cols, const Episode& ep) {
    ad::Tape tape;
    StreamVars vars = stream_leaves(tape, stream, false);
    std::vector<std::vector<ad::Var>> class_supports(static_cast<size_t>(ep.way));
    size_t sidx = 0;
    for (int k = 0; k < ep.way; ++k)
        for (int s = 0; s < ep.shot; ++s)
            class_supports[static_cast<size_t>(k)].push_back(encode_columns(tape, support_cols[sidx++], vars.enc));
    ad::Var q = encode_columns(tape, query_cols, vars.enc);
    ClassDistances d = class_distances_on_tape(tape, q, class_supports, stream, vars, dtw::Mode::hard);
    return softmax_neg(d.hard);
}

struct EpisodeOutcome {
    int correct = 0;
    int total = 0;
    std::vector<std::pair<int, int>> confusion_pairs; // (true class id, predicted class id)
};

inline EpisodeOutcome evaluate_episode(const FusionModel& model, const Episode& ep,
                                       const StreamColumns& support_data, const StreamColumns& query_data) {
    auto gather_support = [&](const std::vector<Matrix>& all) {
        std::vector<Matrix> out;
        for (const auto& cls : ep.support)
            for (int idx : cls) out.push_back(all[static_cast<size_t>(idx)]);
        return out;
    };

    std::vector<Matrix> pos_support = gather_support(*support_data.position);
    std::vector<Matrix> ori_support;
    if (model.mode == FusionMode::late) ori_support = gather_support(*support_data.orientation);

    EpisodeOutcome out;
    for (auto [q_idx, y] : ep.query) {
        std::vector<double> p =
            stream_query_scores(model.position, pos_support, (*query_data.position)[static_cast<size_t>(q_idx)], ep);
        int pred;
        if (model.mode == FusionMode::late) {
            std::vector<double> pa = stream_query_scores(*model.orientation, ori_support,
                                                         (*query_data.orientation)[static_cast<size_t>(q_idx)], ep);
            pred = late_fuse(p, pa, model.alpha).argmax;
        } else {
            pred = 0;
            for (int k = 1; k < ep.way; ++k)
                if (p[static_cast<size_t>(k)] > p[static_cast<size_t>(pred)]) pred = k;
        }
        out.total += 1;
        if (pred == y) out.correct += 1;
        out.confusion_pairs.emplace_back(ep.class_ids[static_cast<size_t>(y)],
                                         ep.class_ids[static_cast<size_t>(pred)]);
    }
    return out;
}

} // namespace detail

// Top-1 accuracy with a normal-approximation 95% CI over per-episode
// accuracies; hard-DTW scoring. Episodes are sampled from per-episode seeds
// derived from `seed`, so results are independent of the thread count. With
// a degenerate model all distances tie and argmax falls back to the first
// episode class, which is itself a uniformly random class.
inline EvalReport evaluate(const Dataset& support_ds, const std::vector<int>& test_classes,
                           const FusionModel& model, const StreamColumns& support_data, int episodes,
                           int way, int shot, int queries_per_class, std::uint64_t seed,
                           const Dataset* query_ds = nullptr, const StreamColumns* query_data = nullptr,
                           int threads = 0) {
    model.validate();
    if (episodes < 1) throw ShapeError("ShapeMismatch", "evaluation needs at least one episode");
    const Dataset* qds = query_ds ? query_ds : &support_ds;
    const StreamColumns& qdata = query_data ? *query_data : support_data;
    if (threads <= 0) threads = eval_threads_from_env();
    threads = std::max(1, std::min<int>(threads, episodes));

    std::vector<detail::EpisodeOutcome> outcomes(static_cast<size_t>(episodes));
    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            int e = next.fetch_add(1);
            if (e >= episodes) break;
            std::mt19937_64 gen = rng::engine(rng::derive(seed, "eval-episode", static_cast<std::uint64_t>(e)));
            Episode ep = sample_episode(support_ds, test_classes, way, shot, queries_per_class, gen,
                                        query_ds ? qds : nullptr);
            outcomes[static_cast<size_t>(e)] = detail::evaluate_episode(model, ep, support_data, qdata);
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    EvalReport rep;
    rep.episodes = episodes;
    rep.way = way;
    rep.shot = shot;
    rep.queries = queries_per_class;
    long correct = 0, total = 0;
    for (const auto& o : outcomes) {
        correct += o.correct;
        total += o.total;
        rep.per_episode_accuracy.push_back(static_cast<double>(o.correct) / o.total);
        for (auto [truth, pred] : o.confusion_pairs) rep.confusion[truth][pred] += 1;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    double mean = 0.0;
    for (double a : rep.per_episode_accuracy) mean += a;
    mean /= episodes;
    double var = 0.0;
    for (double a : rep.per_episode_accuracy) var += (a - mean) * (a - mean);
    var = episodes > 1 ? var / (episodes - 1) : 0.0;
    rep.ci95 = 1.96 * std::sqrt(var / episodes);
    return rep;
}

// ----------------------------------------------------------------- training

struct HistoryRow {
    std::string stream;
    int iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
    double running_accuracy = 0.0; // cumulative training accuracy, soft scoring
};

struct TrainResult {
    FusionModel model;      // final-iteration parameters
    FusionModel best_model; // best validation accuracy (final when no validation ran)
    double best_val_accuracy = -1.0;
    std::vector<HistoryRow> history;
};

namespace detail {

struct SingleStreamResult {
    StreamModel final_model;
    StreamModel best_model;
    double best_val_acc = -1.0;
    std::vector<HistoryRow> history;
};

inline SingleStreamResult train_stream(StreamModel stream, const std::string& stream_name,
                                       const Dataset& ds, const std::vector<int>& train_classes,
                                       const std::vector<int>& val_classes,
                                       const std::vector<Matrix>& columns, const TrainConfig& cfg,
                                       std::uint64_t stream_salt) {
    stream.validate();
    cfg.validate();
    std::mt19937_64 ep_gen = rng::engine(rng::derive(cfg.seed, "episodes", stream_salt));

    std::vector<Matrix*> params = stream_param_values(stream);
    AdamState adam;
    adam.init(params);

    SingleStreamResult out;
    long train_correct = 0, train_total = 0;

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        double lr = cfg.learning_rate * std::pow(cfg.decay_factor, (iter - 1) / cfg.decay_interval);

        ad::Tape tape;
        double loss_value = 0.0;
        try {
            StreamVars vars = stream_leaves(tape, stream, true);
            std::vector<ad::Var> batch_losses;
            for (int b = 0; b < cfg.batch_size; ++b) {
                Episode ep = sample_episode(ds, train_classes, cfg.way, cfg.shot, cfg.queries, ep_gen);
                std::vector<Matrix> support_cols, query_cols;
                for (const auto& cls : ep.support)
                    for (int idx : cls) support_cols.push_back(columns[static_cast<size_t>(idx)]);
                for (auto [q_idx, y] : ep.query) query_cols.push_back(columns[static_cast<size_t>(q_idx)]);
                EpisodeLoss l =
                    episode_loss_on_tape(tape, ep, support_cols, query_cols, stream, vars, cfg.lambda);
                batch_losses.push_back(l.total);
                for (size_t qi = 0; qi < ep.query.size(); ++qi) {
                    train_total += 1;
                    if (l.predictions[qi] == ep.query[qi].second) train_correct += 1;
                }
            }
            ad::Var loss = mean_vars(tape, batch_losses);
            loss_value = tape.scalar_value(loss);
            if (!std::isfinite(loss_value))
                throw NumericError("NaNLoss", "non-finite loss");

            tape.backward(loss);
            std::vector<ad::Var> pvars = stream_param_vars(stream, vars);
            std::vector<Matrix> grads;
            grads.reserve(pvars.size());
            for (ad::Var v : pvars) grads.push_back(tape.grad(v));
            adam_step(params, grads, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        } catch (const NumericError& e) {
            throw NumericError(e.code(), "training iteration " + std::to_string(iter) + ": " + e.what());
        }

        out.history.push_back({stream_name, iter, loss_value, lr,
                               train_total > 0 ? static_cast<double>(train_correct) / train_total : 0.0});

        bool last = iter == cfg.iterations;
        if (!val_classes.empty() && cfg.val_every > 0 && cfg.val_episodes > 0 &&
            (iter % cfg.val_every == 0 || last)) {
            FusionModel probe;
            probe.mode = FusionMode::position_only;
            probe.position = stream;
            StreamColumns data;
            data.position = &columns;
            EvalReport val = evaluate(ds, val_classes, probe, data, cfg.val_episodes, cfg.way, cfg.shot,
                                      cfg.queries, rng::derive(cfg.seed, "val", stream_salt), nullptr,
                                      nullptr, 1);
            if (val.accuracy > out.best_val_acc) {
                out.best_val_acc = val.accuracy;
                out.best_model = stream;
            }
        }
    }
    out.final_model = stream;
    if (out.best_val_acc < 0.0) out.best_model = out.final_model;
    return out;
}

} // namespace detail

// Trains every stream of the fusion template. Deterministic given
// (config seed, dataset, template): reruns produce bit-identical parameters.
inline TrainResult train(const Dataset& ds, const std::vector<int>& train_classes,
                         const std::vector<int>& val_classes, const FusionModel& fusion_template,
                         const TrainConfig& cfg, const StreamColumns& data) {
    fusion_template.validate();
    cfg.validate();
    for (int c : train_classes)
        for (int v : val_classes)
            if (c == v) throw DataError("SchemaError", "train and val classes overlap");

    TrainResult out;
    out.model = fusion_template;
    out.best_model = fusion_template;

    detail::SingleStreamResult pos = detail::train_stream(
        fusion_template.position, fusion_template.mode == FusionMode::late ? "position" : "primary", ds,
        train_classes, val_classes, *data.position, cfg, 0);
    out.model.position = pos.final_model;
    out.best_model.position = pos.best_model;
    out.best_val_accuracy = pos.best_val_acc;
    out.history = pos.history;

    if (fusion_template.mode == FusionMode::late) {
        detail::SingleStreamResult ori = detail::train_stream(*fusion_template.orientation, "orientation",
                                                              ds, train_classes, val_classes,
                                                              *data.orientation, cfg, 1);
        out.model.orientation = ori.final_model;
        out.best_model.orientation = ori.best_model;
        out.history.insert(out.history.end(), ori.history.begin(), ori.history.end());
    }
    return out;
}

} // namespace sigshot
