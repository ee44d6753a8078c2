#pragma once

// Mutual reweighting of support and query representations (CsA).
//
// With R in R^{m x d} and d x d transformation matrices M1, M2, M3 acting on
// the feature axis:
//   Rq_hat = softmax_rows( (Rq M1q^T)(Rp M2q^T)^T / sqrt(d) ) (Rq M3q^T)
//   Rp_hat = softmax_rows( (Rp M1p^T)(Rq M2p^T)^T / sqrt(d) ) (Rp M3p^T)
// Both sides read the original, un-attended inputs. The value matrix comes
// from the same side as the output, so the m x m attention requires the two
// representations to share their temporal length m.

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sigshot/autodiff.hpp"
#include "sigshot/common.hpp"
#include "sigshot/encoder.hpp"
#include "sigshot/rng.hpp"

namespace sigshot {

struct CsaParams {
    int dim = 16; // d
    Matrix m1q, m2q, m3q; // query side, each d x d
    Matrix m1p, m2p, m3p; // support side, each d x d

    void validate() const {
        for (const Matrix* m : {&m1q, &m2q, &m3q, &m1p, &m2p, &m3p}) {
            if (m->rows != dim || m->cols != dim)
                throw ShapeError("DimMismatch", "CsA matrices must be d x d");
            if (!m->all_finite()) throw NumericError("NonFiniteResult", "CsA parameters are not finite");
        }
    }
};

inline CsaParams init_csa(std::uint64_t seed, int dim) {
    if (dim < 1) throw ShapeError("DimMismatch", "CsA dim must be >= 1");
    CsaParams p;
    p.dim = dim;
    std::mt19937_64 gen = rng::engine(seed);
    double bound = std::sqrt(6.0 / (dim + dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto draw = [&]() {
        Matrix m(dim, dim);
        for (double& x : m.v) x = dist(gen);
        return m;
    };
    p.m1q = draw();
    p.m2q = draw();
    p.m3q = draw();
    p.m1p = draw();
    p.m2p = draw();
    p.m3p = draw();
    return p;
}

struct CsaVars {
    ad::Var m1q, m2q, m3q, m1p, m2p, m3p;
};

// When tied, the support side shares the query side's leaves so gradients
// accumulate into one parameter set.
inline CsaVars csa_leaves(ad::Tape& tape, const CsaParams& p, bool requires_grad, bool tie_sides = false) {
    p.validate();
    CsaVars v;
    v.m1q = tape.leaf(p.m1q, requires_grad);
    v.m2q = tape.leaf(p.m2q, requires_grad);
    v.m3q = tape.leaf(p.m3q, requires_grad);
    if (tie_sides) {
        v.m1p = v.m1q;
        v.m2p = v.m2q;
        v.m3p = v.m3q;
    } else {
        v.m1p = tape.leaf(p.m1p, requires_grad);
        v.m2p = tape.leaf(p.m2p, requires_grad);
        v.m3p = tape.leaf(p.m3p, requires_grad);
    }
    return v;
}

struct AttendedVars {
    ad::Var q_hat; // mq x d
    ad::Var p_hat; // mp x d
    ad::Var attn_q; // m x m softmax matrix of the query-side attention
    ad::Var attn_p;
};

inline AttendedVars cross_attend_on_tape(ad::Tape& tape, ad::Var rq, ad::Var rp, const CsaVars& v) {
    const Matrix& q = tape.value(rq);
    const Matrix& p = tape.value(rp);
    int d = q.cols;
    if (p.cols != d) throw ShapeError("DimMismatch", "representations differ in feature dim");
    if (tape.value(v.m1q).rows != d) throw ShapeError("DimMismatch", "CsA dim does not match representations");
    if (q.rows != p.rows)
        throw ShapeError("DimMismatch",
                         "cross attention requires equal temporal lengths, got " + std::to_string(q.rows) +
                             " and " + std::to_string(p.rows));
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    auto side = [&](ad::Var self, ad::Var other, ad::Var m1, ad::Var m2, ad::Var m3) {
        ad::Var keys = tape.matmul(self, tape.transpose(m1));   // m x d
        ad::Var ctx = tape.matmul(other, tape.transpose(m2));   // m x d
        ad::Var scores = tape.scale(tape.matmul(keys, tape.transpose(ctx)), inv_sqrt_d);
        ad::Var attn = tape.softmax_rows(scores);               // m x m
        ad::Var vals = tape.matmul(self, tape.transpose(m3));   // m x d
        return std::pair<ad::Var, ad::Var>(tape.matmul(attn, vals), attn);
    };

    AttendedVars out;
    auto [qh, aq] = side(rq, rp, v.m1q, v.m2q, v.m3q);
    auto [ph, ap] = side(rp, rq, v.m1p, v.m2p, v.m3p);
    out.q_hat = qh;
    out.attn_q = aq;
    out.p_hat = ph;
    out.attn_p = ap;
    return out;
}

struct CsaResult {
    Representation q_hat;
    Representation p_hat;
    Matrix attn_q;
    Matrix attn_p;
};

inline CsaResult cross_attend(const Representation& rq, const Representation& rp, const CsaParams& params) {
    ad::Tape tape;
    CsaVars v = csa_leaves(tape, params, false);
    AttendedVars a = cross_attend_on_tape(tape, tape.leaf(rq, false), tape.leaf(rp, false), v);
    return {tape.value(a.q_hat), tape.value(a.p_hat), tape.value(a.attn_q), tape.value(a.attn_p)};
}

// Frobenius distance ||A - B||_F; symmetric, zero iff equal.
inline double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("ShapeMismatch", "frobenius_distance needs equal shapes");
    double s = 0.0;
    for (int k = 0; k < a.size(); ++k) {
        double d = a.v[k] - b.v[k];
        s += d * d;
    }
    return std::sqrt(s);
}

inline ad::Var frobenius_distance_on_tape(ad::Tape& tape, ad::Var a, ad::Var b) {
    return tape.frobenius_norm(tape.sub(a, b));
}

// ------------------------------------------------------------------ exports

inline void write_attention_csv(const Matrix& attn, std::ostream& out) {
    char buf[64];
    for (int i = 0; i < attn.rows; ++i) {
        for (int j = 0; j < attn.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", attn(i, j));
            out << buf << (j + 1 < attn.cols ? "," : "");
        }
        out << "\n";
    }
}

// 8-bit PGM heatmap, each row scaled by its own maximum.
inline void write_attention_pgm(const Matrix& attn, std::ostream& out) {
    out << "P5\n" << attn.cols << " " << attn.rows << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<size_t>(attn.cols));
    for (int i = 0; i < attn.rows; ++i) {
        double rm = 0.0;
        for (int j = 0; j < attn.cols; ++j) rm = std::max(rm, attn(i, j));
        for (int j = 0; j < attn.cols; ++j)
            row[static_cast<size_t>(j)] =
                rm > 0.0 ? static_cast<std::uint8_t>(round_half_up_u8(255.0 * attn(i, j) / rm)) : 0;
        out.write(reinterpret_cast<const char*>(row.data()), attn.cols);
    }
}

inline nlohmann::json csa_to_json(const CsaParams& p) {
    nlohmann::json j;
    j["dim"] = p.dim;
    j["m1q"] = matrix_to_json(p.m1q);
    j["m2q"] = matrix_to_json(p.m2q);
    j["m3q"] = matrix_to_json(p.m3q);
    j["m1p"] = matrix_to_json(p.m1p);
    j["m2p"] = matrix_to_json(p.m2p);
    j["m3p"] = matrix_to_json(p.m3p);
    return j;
}

inline CsaParams csa_from_json(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"dim", "m1q", "m2q", "m3q", "m1p", "m2p", "m3p"}, "csa");
    CsaParams p;
    p.dim = get_req<int>(j, "dim", "csa");
    p.m1q = matrix_from_json(require(j, "m1q", "csa"), "csa.m1q");
    p.m2q = matrix_from_json(require(j, "m2q", "csa"), "csa.m2q");
    p.m3q = matrix_from_json(require(j, "m3q", "csa"), "csa.m3q");
    p.m1p = matrix_from_json(require(j, "m1p", "csa"), "csa.m1p");
    p.m2p = matrix_from_json(require(j, "m2p", "csa"), "csa.m2p");
    p.m3p = matrix_from_json(require(j, "m3p", "csa"), "csa.m3p");
    p.validate();
    return p;
}

} // namespace sigshot
