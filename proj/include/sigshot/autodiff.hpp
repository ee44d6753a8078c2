#pragma once

// Dense real-matrix computation substrate with exact reverse-mode gradients.
//
// A Tape owns a sequence of executed primitives. Each primitive records its
// forward value and enough saved state for the backward rule; backward()
// walks the records in exact reverse execution order and accumulates
// gradients additively into every node that requires them. All values are
// 64-bit floats; every forward result is checked finite.
//
// Conventions (kept deliberately simple so the backward rules stay auditable):
//   - no broadcasting beyond scalar * matrix,
//   - relu backward uses subgradient 0 at 0,
//   - sqrt/frobenius/row-norm gradients are 0 at exactly 0,
//   - a leaf never touched by the loss keeps its zero gradient
//     (the "disconnected leaf" case).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sigshot/common.hpp"

namespace sigshot::ad {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {
        if (r < 0 || c < 0) throw ShapeError("ShapeMismatch", "negative matrix dimension");
    }

    static Matrix zeros(int r, int c) { return Matrix(r, c, 0.0); }

    static Matrix scalar(double x) {
        Matrix m(1, 1);
        m.v[0] = x;
        return m;
    }

    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    int size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// softmin3(a,b,c; gamma) = -gamma * ln(e^{-a/g} + e^{-b/g} + e^{-c/g}),
// computed with a max-shift. +inf inputs contribute 0 to the sum. Always
// <= min(a,b,c), and min - softmin3 <= gamma * ln 3.
inline double softmin3(double a, double b, double c, double gamma) {
    if (gamma <= 0.0) throw ShapeError("InvalidGamma", "softmin3 requires gamma > 0");
    double m = std::min({a, b, c});
    if (!(m < kInf)) return kInf; // all candidates infinite
    double s = std::exp((m - a) / gamma) + std::exp((m - b) / gamma) + std::exp((m - c) / gamma);
    return m - gamma * std::log(s);
}

// d softmin3 / d(a,b,c); weights sum to 1, infinite inputs get weight 0.
inline std::array<double, 3> softmin3_weights(double a, double b, double c, double gamma) {
    double m = std::min({a, b, c});
    if (!(m < kInf)) return {0.0, 0.0, 0.0};
    double ea = std::exp((m - a) / gamma);
    double eb = std::exp((m - b) / gamma);
    double ec = std::exp((m - c) / gamma);
    double s = ea + eb + ec;
    return {ea / s, eb / s, ec / s};
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var leaf(Matrix value, bool requires_grad = false) {
        check_finite(value, "leaf");
        return push(Op::kLeaf, {}, std::move(value), requires_grad);
    }

    Var matmul(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.cols != B.rows)
            throw ShapeError("ShapeMismatch", "matmul " + shape_str(A) + " x " + shape_str(B));
        Matrix C(A.rows, B.cols);
        for (int i = 0; i < A.rows; ++i)
            for (int k = 0; k < A.cols; ++k) {
                double aik = A(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
            }
        return push(Op::kMatMul, {a, b}, std::move(C));
    }

    Var transpose(Var a) {
        const Matrix& A = val(a);
        Matrix C(A.cols, A.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) C(j, i) = A(i, j);
        return push(Op::kTranspose, {a}, std::move(C));
    }

    Var add(Var a, Var b) { return eltwise2(Op::kAdd, a, b); }
    Var sub(Var a, Var b) { return eltwise2(Op::kSub, a, b); }

    Var scale(Var a, double s) {
        const Matrix& A = val(a);
        Matrix C = A;
        for (double& x : C.v) x *= s;
        Var r = push(Op::kScale, {a}, std::move(C));
        node(r).scalar0 = s;
        return r;
    }

    Var negate(Var a) { return scale(a, -1.0); }

    Var relu(Var a) {
        Matrix C = val(a);
        for (double& x : C.v) x = x > 0.0 ? x : 0.0;
        return push(Op::kRelu, {a}, std::move(C));
    }

    Var log(Var a) {
        Matrix C = val(a);
        for (double& x : C.v) x = std::log(x);
        return push(Op::kLog, {a}, std::move(C));
    }

    Var exp(Var a) {
        Matrix C = val(a);
        for (double& x : C.v) x = std::exp(x);
        return push(Op::kExp, {a}, std::move(C));
    }

    Var sqrt_elem(Var a) {
        Matrix C = val(a);
        for (double& x : C.v) x = std::sqrt(x);
        return push(Op::kSqrt, {a}, std::move(C));
    }

    // Row-wise softmax with max-shift; rows sum to 1.
    Var softmax_rows(Var a) {
        const Matrix& A = val(a);
        Matrix C(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            double m = -kInf;
            for (int j = 0; j < A.cols; ++j) m = std::max(m, A(i, j));
            double s = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                double e = std::exp(A(i, j) - m);
                C(i, j) = e;
                s += e;
            }
            for (int j = 0; j < A.cols; ++j) C(i, j) /= s;
        }
        return push(Op::kSoftmaxRows, {a}, std::move(C));
    }

    // m x d -> m x 1 of squared row norms.
    Var row_sqnorm(Var a) {
        const Matrix& A = val(a);
        Matrix C(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
            C(i, 0) = s;
        }
        return push(Op::kRowSqNorm, {a}, std::move(C));
    }

    Var frobenius_norm(Var a) {
        const Matrix& A = val(a);
        double s = 0.0;
        for (double x : A.v) s += x * x;
        return push(Op::kFrobeniusNorm, {a}, Matrix::scalar(std::sqrt(s)));
    }

    // A: m x d, B: n x d -> m x n with C(i,j) = ||a_i - b_j||^2.
    Var squared_euclidean_rows(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.cols != B.cols)
            throw ShapeError("DimMismatch",
                             "squared_euclidean_rows feature dims " + std::to_string(A.cols) +
                                 " vs " + std::to_string(B.cols));
        Matrix C(A.rows, B.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < B.rows; ++j) {
                double s = 0.0;
                for (int k = 0; k < A.cols; ++k) {
                    double d = A(i, k) - B(j, k);
                    s += d * d;
                }
                C(i, j) = s;
            }
        return push(Op::kSquaredEuclideanRows, {a, b}, std::move(C));
    }

    Var mean(Var a) {
        const Matrix& A = val(a);
        if (A.size() == 0) throw ShapeError("ShapeMismatch", "mean of empty matrix");
        double s = 0.0;
        for (double x : A.v) s += x;
        return push(Op::kMean, {a}, Matrix::scalar(s / A.size()));
    }

    Var sum_all(Var a) {
        const Matrix& A = val(a);
        double s = 0.0;
        for (double x : A.v) s += x;
        return push(Op::kSumAll, {a}, Matrix::scalar(s));
    }

    // 1 x n -> 1 x 1, log(sum_j exp(x_j)) with max-shift.
    Var logsumexp_row(Var a) {
        const Matrix& A = val(a);
        if (A.rows != 1) throw ShapeError("ShapeMismatch", "logsumexp_row expects a 1 x n matrix");
        double m = -kInf;
        for (double x : A.v) m = std::max(m, x);
        double s = 0.0;
        for (double x : A.v) s += std::exp(x - m);
        return push(Op::kLogSumExpRow, {a}, Matrix::scalar(m + std::log(s)));
    }

    Var cell(Var a, int i, int j) {
        const Matrix& A = val(a);
        if (i < 0 || i >= A.rows || j < 0 || j >= A.cols)
            throw ShapeError("IndexOutOfRange", "cell(" + std::to_string(i) + "," + std::to_string(j) + ")");
        Var r = push(Op::kCell, {a}, Matrix::scalar(A(i, j)));
        node(r).i0 = i;
        node(r).j0 = j;
        return r;
    }

    Var concat_scalars(const std::vector<Var>& xs) {
        if (xs.empty()) throw ShapeError("ShapeMismatch", "concat_scalars of nothing");
        Matrix C(1, static_cast<int>(xs.size()));
        bool rg = false;
        for (size_t k = 0; k < xs.size(); ++k) {
            const Matrix& X = val(xs[k]);
            if (X.rows != 1 || X.cols != 1)
                throw ShapeError("ShapeMismatch", "concat_scalars input is not 1 x 1");
            C(0, static_cast<int>(k)) = X(0, 0);
            rg = rg || node(xs[k]).requires_grad;
        }
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{});
        Node& n = nodes_.back();
        n.op = Op::kConcatScalars;
        n.extra_inputs.reserve(xs.size());
        for (Var x : xs) n.extra_inputs.push_back(x.id);
        n.value = std::move(C);
        n.requires_grad = rg;
        if (rg) n.grad = Matrix::zeros(n.value.rows, n.value.cols);
        return Var{id};
    }

    Var gather_rows(Var a, std::vector<int> row_idx) {
        const Matrix& A = val(a);
        Matrix C(static_cast<int>(row_idx.size()), A.cols);
        for (size_t t = 0; t < row_idx.size(); ++t) {
            int r = row_idx[t];
            if (r < 0 || r >= A.rows) throw ShapeError("IndexOutOfRange", "gather_rows row " + std::to_string(r));
            for (int j = 0; j < A.cols; ++j) C(static_cast<int>(t), j) = A(r, j);
        }
        Var v = push(Op::kGatherRows, {a}, std::move(C));
        node(v).indices = std::move(row_idx);
        return v;
    }

    Var vstack(Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (A.cols != B.cols) throw ShapeError("ShapeMismatch", "vstack column mismatch");
        Matrix C(A.rows + B.rows, A.cols);
        std::copy(A.v.begin(), A.v.end(), C.v.begin());
        std::copy(B.v.begin(), B.v.end(), C.v.begin() + A.v.size());
        return push(Op::kVStack, {a, b}, std::move(C));
    }

    // Soft dynamic time warping over a cost matrix E (all entries finite,
    // >= 0 in intended use). Cumulative recurrence with step size tau:
    //   psi(i,j) = E(i,j) + softmin3(psi(i-tau,j-tau), psi(i-tau,j), psi(i,j-tau))
    // with virtual psi = 0 when both predecessor indices fall off the front,
    // +inf when exactly one does. Returns the 1 x 1 terminal cell; the full
    // table is kept for the backward pass and for callers that want it.
    Var soft_dtw(Var e, int tau, double gamma) {
        if (tau < 1) throw ShapeError("InvalidTau", "dtw step tau must be >= 1");
        if (gamma <= 0.0) throw ShapeError("InvalidGamma", "soft dtw requires gamma > 0");
        const Matrix& E = val(e);
        Matrix psi = soft_dtw_table(E, tau, gamma);
        double dist = psi(E.rows - 1, E.cols - 1);
        if (!std::isfinite(dist))
            throw NumericError("Unreachable", "terminal dtw cell is not reachable");
        Var r = push(Op::kSoftDtw, {e}, Matrix::scalar(dist));
        Node& n = node(r);
        n.i0 = tau;
        n.scalar0 = gamma;
        n.saved = std::move(psi);
        return r;
    }

    static Matrix soft_dtw_table(const Matrix& E, int tau, double gamma) {
        Matrix psi(E.rows, E.cols);
        for (int i = 0; i < E.rows; ++i)
            for (int j = 0; j < E.cols; ++j) {
                double diag = virtual_psi(psi, i - tau, j - tau);
                double vert = virtual_psi(psi, i - tau, j);
                double horz = virtual_psi(psi, i, j - tau);
                psi(i, j) = E(i, j) + softmin3(diag, vert, horz, gamma);
            }
        return psi;
    }

    const Matrix& value(Var x) const { return val(x); }
    double scalar_value(Var x) const {
        const Matrix& m = val(x);
        if (m.rows != 1 || m.cols != 1) throw ShapeError("ShapeMismatch", "scalar_value of non-scalar");
        return m(0, 0);
    }

    // Gradient accumulated for x by the last backward(). Zero matrix for a
    // leaf the loss never touched.
    const Matrix& grad(Var x) const {
        const Node& n = nodes_.at(static_cast<size_t>(x.id));
        if (!n.requires_grad)
            throw ShapeError("ShapeMismatch", "grad requested for a node without requires_grad");
        return n.grad;
    }

    bool requires_grad(Var x) const { return node(x).requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Reverse-mode sweep from a 1 x 1 loss node over the full tape history.
    void backward(Var loss) {
        Node& ln = node(loss);
        if (ln.value.rows != 1 || ln.value.cols != 1)
            throw ShapeError("ShapeMismatch", "backward requires a 1 x 1 loss");
        if (!ln.requires_grad) return; // loss independent of every leaf
        ln.grad(0, 0) += 1.0;
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.requires_grad) continue;
            backward_node(n);
        }
    }

private:
    enum class Op {
        kLeaf,
        kMatMul,
        kTranspose,
        kAdd,
        kSub,
        kScale,
        kRelu,
        kLog,
        kExp,
        kSqrt,
        kSoftmaxRows,
        kRowSqNorm,
        kFrobeniusNorm,
        kSquaredEuclideanRows,
        kMean,
        kSumAll,
        kLogSumExpRow,
        kCell,
        kConcatScalars,
        kGatherRows,
        kVStack,
        kSoftDtw,
    };

    struct Node {
        Op op = Op::kLeaf;
        int a = -1;
        int b = -1;
        std::vector<int> extra_inputs; // concat_scalars only
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        double scalar0 = 0.0;     // scale factor / gamma
        int i0 = 0, j0 = 0;       // cell indices / tau
        std::vector<int> indices; // gather_rows
        Matrix saved;             // soft dtw table
    };

    std::vector<Node> nodes_;

    static std::string shape_str(const Matrix& m) {
        return "(" + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ")";
    }

    static void check_finite(const Matrix& m, const char* what) {
        if (!m.all_finite())
            throw NumericError("NonFiniteResult", std::string(what) + " produced a non-finite value");
    }

    Node& node(Var x) { return nodes_.at(static_cast<size_t>(x.id)); }
    const Node& node(Var x) const { return nodes_.at(static_cast<size_t>(x.id)); }
    const Matrix& val(Var x) const { return node(x).value; }

    Var push(Op op, std::initializer_list<Var> inputs, Matrix value, bool leaf_rg = false) {
        const char* opname = op == Op::kLeaf ? "leaf" : "primitive";
        check_finite(value, opname);
        Node n;
        n.op = op;
        auto it = inputs.begin();
        if (inputs.size() > 0) n.a = it->id;
        if (inputs.size() > 1) n.b = (it + 1)->id;
        n.requires_grad = leaf_rg;
        for (Var in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
        n.value = std::move(value);
        if (n.requires_grad) n.grad = Matrix::zeros(n.value.rows, n.value.cols);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    Var eltwise2(Op op, Var a, Var b) {
        const Matrix& A = val(a);
        const Matrix& B = val(b);
        if (!A.same_shape(B))
            throw ShapeError("ShapeMismatch",
                             (op == Op::kAdd ? "add " : "sub ") + shape_str(A) + " vs " + shape_str(B));
        Matrix C(A.rows, A.cols);
        for (int k = 0; k < A.size(); ++k)
            C.v[k] = op == Op::kAdd ? A.v[k] + B.v[k] : A.v[k] - B.v[k];
        return push(op, {a, b}, std::move(C));
    }

    static double virtual_psi(const Matrix& psi, int i, int j) {
        if (i < 0 && j < 0) return 0.0;
        if (i < 0 || j < 0) return kInf;
        return psi(i, j);
    }

    Matrix* grad_of(int id) {
        if (id < 0) return nullptr;
        Node& n = nodes_[static_cast<size_t>(id)];
        return n.requires_grad ? &n.grad : nullptr;
    }

    void backward_node(Node& n) {
        const Matrix& g = n.grad;
        switch (n.op) {
        case Op::kLeaf:
            break;
        case Op::kMatMul: {
            const Matrix& A = nodes_[n.a].value;
            const Matrix& B = nodes_[n.b].value;
            if (Matrix* da = grad_of(n.a)) {
                // dA += g * B^T
                for (int i = 0; i < A.rows; ++i)
                    for (int j = 0; j < B.cols; ++j) {
                        double gij = g(i, j);
                        if (gij == 0.0) continue;
                        for (int k = 0; k < A.cols; ++k) (*da)(i, k) += gij * B(k, j);
                    }
            }
            if (Matrix* db = grad_of(n.b)) {
                // dB += A^T * g
                for (int i = 0; i < A.rows; ++i)
                    for (int k = 0; k < A.cols; ++k) {
                        double aik = A(i, k);
                        if (aik == 0.0) continue;
                        for (int j = 0; j < B.cols; ++j) (*db)(k, j) += aik * g(i, j);
                    }
            }
            break;
        }
        case Op::kTranspose: {
            if (Matrix* da = grad_of(n.a)) {
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) (*da)(j, i) += g(i, j);
            }
            break;
        }
        case Op::kAdd:
        case Op::kSub:
            break;
        case Op::kScale: {
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k) da->v[k] += n.scalar0 * g.v[k];
            break;
        }
        case Op::kRelu: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k)
                    if (A.v[k] > 0.0) da->v[k] += g.v[k];
            break;
        }
        case Op::kLog: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k) da->v[k] += g.v[k] / A.v[k];
            break;
        }
        case Op::kExp: {
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k) da->v[k] += g.v[k] * n.value.v[k];
            break;
        }
        case Op::kSqrt: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k)
                    if (A.v[k] > 0.0) da->v[k] += g.v[k] * 0.5 / n.value.v[k];
            break;
        }
        case Op::kSoftmaxRows: {
            const Matrix& Y = n.value;
            if (Matrix* da = grad_of(n.a)) {
                for (int i = 0; i < Y.rows; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < Y.cols; ++j) dot += g(i, j) * Y(i, j);
                    for (int j = 0; j < Y.cols; ++j) (*da)(i, j) += Y(i, j) * (g(i, j) - dot);
                }
            }
            break;
        }
        case Op::kRowSqNorm: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int i = 0; i < A.rows; ++i)
                    for (int j = 0; j < A.cols; ++j) (*da)(i, j) += 2.0 * A(i, j) * g(i, 0);
            break;
        }
        case Op::kFrobeniusNorm: {
            const Matrix& A = nodes_[n.a].value;
            double norm = n.value(0, 0);
            if (norm > 0.0)
                if (Matrix* da = grad_of(n.a))
                    for (int k = 0; k < A.size(); ++k) da->v[k] += g(0, 0) * A.v[k] / norm;
            break;
        }
        case Op::kSquaredEuclideanRows: {
            const Matrix& A = nodes_[n.a].value;
            const Matrix& B = nodes_[n.b].value;
            Matrix* da = grad_of(n.a);
            Matrix* db = grad_of(n.b);
            for (int i = 0; i < A.rows; ++i)
                for (int j = 0; j < B.rows; ++j) {
                    double gij = g(i, j);
                    if (gij == 0.0) continue;
                    for (int k = 0; k < A.cols; ++k) {
                        double d = 2.0 * gij * (A(i, k) - B(j, k));
                        if (da) (*da)(i, k) += d;
                        if (db) (*db)(j, k) -= d;
                    }
                }
            break;
        }
        case Op::kMean: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a)) {
                double s = g(0, 0) / A.size();
                for (int k = 0; k < A.size(); ++k) da->v[k] += s;
            }
            break;
        }
        case Op::kSumAll: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < A.size(); ++k) da->v[k] += g(0, 0);
            break;
        }
        case Op::kLogSumExpRow: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a)) {
                double lse = n.value(0, 0);
                for (int k = 0; k < A.size(); ++k) da->v[k] += g(0, 0) * std::exp(A.v[k] - lse);
            }
            break;
        }
        case Op::kCell: {
            if (Matrix* da = grad_of(n.a)) (*da)(n.i0, n.j0) += g(0, 0);
            break;
        }
        case Op::kConcatScalars: {
            for (size_t k = 0; k < n.extra_inputs.size(); ++k)
                if (Matrix* d = grad_of(n.extra_inputs[k])) d->v[0] += g(0, static_cast<int>(k));
            break;
        }
        case Op::kGatherRows: {
            if (Matrix* da = grad_of(n.a))
                for (size_t t = 0; t < n.indices.size(); ++t)
                    for (int j = 0; j < n.value.cols; ++j)
                        (*da)(n.indices[t], j) += g(static_cast<int>(t), j);
            break;
        }
        case Op::kVStack: {
            const Matrix& A = nodes_[n.a].value;
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < A.size(); ++k) da->v[k] += g.v[k];
            if (Matrix* db = grad_of(n.b)) {
                size_t off = static_cast<size_t>(A.size());
                for (int k = 0; k < db->size(); ++k) db->v[k] += g.v[off + k];
            }
            break;
        }
        case Op::kSoftDtw: {
            if (Matrix* de = grad_of(n.a)) soft_dtw_backward(n, g(0, 0), *de);
            break;
        }
        }
        // add / sub handled below to keep the switch flat
        if (n.op == Op::kAdd || n.op == Op::kSub) {
            if (Matrix* da = grad_of(n.a))
                for (int k = 0; k < g.size(); ++k) da->v[k] += g.v[k];
            if (Matrix* db = grad_of(n.b)) {
                double sgn = n.op == Op::kAdd ? 1.0 : -1.0;
                for (int k = 0; k < g.size(); ++k) db->v[k] += sgn * g.v[k];
            }
        }
    }

    // alpha(i,j) = d psi(terminal) / d psi(i,j), filled in reverse raster
    // order; dE(i,j) += upstream * alpha(i,j).
    void soft_dtw_backward(const Node& n, double upstream, Matrix& de) const {
        const Matrix& psi = n.saved;
        int tau = n.i0;
        double gamma = n.scalar0;
        int mq = psi.rows, mp = psi.cols;
        Matrix alpha(mq, mp, 0.0);
        alpha(mq - 1, mp - 1) = 1.0;
        for (int i = mq - 1; i >= 0; --i)
            for (int j = mp - 1; j >= 0; --j) {
                if (i == mq - 1 && j == mp - 1) continue;
                double acc = 0.0;
                // successor (i+tau, j): this cell is its vertical candidate
                if (i + tau < mq) acc += successor_weight(psi, i + tau, j, tau, gamma, 1) * alpha(i + tau, j);
                // successor (i, j+tau): horizontal candidate
                if (j + tau < mp) acc += successor_weight(psi, i, j + tau, tau, gamma, 2) * alpha(i, j + tau);
                // successor (i+tau, j+tau): diagonal candidate
                if (i + tau < mq && j + tau < mp)
                    acc += successor_weight(psi, i + tau, j + tau, tau, gamma, 0) * alpha(i + tau, j + tau);
                alpha(i, j) = acc;
            }
        for (int i = 0; i < mq; ++i)
            for (int j = 0; j < mp; ++j) de(i, j) += upstream * alpha(i, j);
    }

    static double successor_weight(const Matrix& psi, int si, int sj, int tau, double gamma, int which) {
        double diag = virtual_psi(psi, si - tau, sj - tau);
        double vert = virtual_psi(psi, si - tau, sj);
        double horz = virtual_psi(psi, si, sj - tau);
        return softmin3_weights(diag, vert, horz, gamma)[static_cast<size_t>(which)];
    }
};

// Builds the loss from leaves so the checker can re-evaluate it at shifted
// parameter values: f(tape, leaf_vars) -> 1 x 1 loss var.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_param = -1;
    int worst_entry = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central-difference check of every parameter entry against the tape
// gradient. Relative error denominator is max(1e-8, |analytic| + |numeric|).
inline GradCheckReport grad_check_report(const LossBuilder& f, const std::vector<Matrix>& params,
                                         double step) {
    if (step <= 0.0) throw ShapeError("InvalidStep", "grad_check requires step > 0");

    auto eval = [&](const std::vector<Matrix>& p) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(p.size());
        for (const Matrix& m : p) leaves.push_back(tape.leaf(m, false));
        Var loss = f(tape, leaves);
        return tape.scalar_value(loss);
    };

    std::vector<Matrix> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(params.size());
        for (const Matrix& m : params) leaves.push_back(tape.leaf(m, true));
        Var loss = f(tape, leaves);
        tape.backward(loss);
        for (Var v : leaves) analytic.push_back(tape.grad(v));
    }

    GradCheckReport rep;
    std::vector<Matrix> shifted = params;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        for (int k = 0; k < params[pi].size(); ++k) {
            double orig = shifted[pi].v[k];
            shifted[pi].v[k] = orig + step;
            double up = eval(shifted);
            shifted[pi].v[k] = orig - step;
            double down = eval(shifted);
            shifted[pi].v[k] = orig;
            double numeric = (up - down) / (2.0 * step);
            double ga = analytic[pi].v[k];
            double rel = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = static_cast<int>(pi);
                rep.worst_entry = k;
                rep.analytic = ga;
                rep.numeric = numeric;
            }
        }
    }
    return rep;
}

inline double grad_check(const LossBuilder& f, const std::vector<Matrix>& params, double step = 1e-5) {
    return grad_check_report(f, params, step).max_rel_err;
}

} // namespace sigshot::ad
