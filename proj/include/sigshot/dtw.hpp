#pragma once

// Cumulative-distance dynamic time warping.
//
// The recurrence over a cost matrix E (1-based indices i, j here and in the
// exported path):
//   psi(i,j) = E(i,j) + min{ psi(i-tau,j-tau), psi(i-tau,j), psi(i,j-tau) }
// with virtual psi = 0 when both indices fall off the front and +inf when
// exactly one does; for tau = 1 this is the textbook boundary psi(1,1) =
// E(1,1). Soft mode replaces min with softmin3 (see autodiff.hpp), which
// lower-bounds the hard distance and converges to it as gamma -> 0.
//
// Hard mode is not differentiable where the min has ties: its distance is
// piecewise linear in E and a finite-difference gradient check will fail at
// the kinks. Gradient-based training must use soft mode; hard mode is the
// evaluation setting.
//
// tau > 1 is supported as a step size but is experimental: the backtracked
// path then starts at the residue cell ((mq-1) mod tau + 1, (mp-1) mod tau
// + 1) rather than (1,1).

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sigshot/autodiff.hpp"
#include "sigshot/common.hpp"

namespace sigshot::dtw {

using ad::Matrix;

enum class Mode { hard, soft };

struct WarpResult {
    Matrix cumulative;                     // the filled psi table
    double distance = 0.0;                 // psi(mq, mp)
    double normalized = 0.0;               // distance / max(mq, mp)
    std::vector<std::pair<int, int>> path; // hard mode only, 1-based, front to back
};

inline void validate_costs(const Matrix& e) {
    if (e.rows < 1 || e.cols < 1) throw ShapeError("ShapeMismatch", "empty cost matrix");
    for (double x : e.v) {
        if (!std::isfinite(x)) throw NumericError("NonFiniteResult", "cost matrix has non-finite entries");
        if (x < 0.0) throw NumericError("NonFiniteResult", "cost matrix has negative entries");
    }
}

// E(i,j) = squared Euclidean distance between row i of a and row j of b.
inline Matrix local_costs(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw ShapeError("DimMismatch", "local_costs feature dims " + std::to_string(a.cols) + " vs " +
                                            std::to_string(b.cols));
    Matrix e(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                double d = a(i, k) - b(j, k);
                s += d * d;
            }
            e(i, j) = s;
        }
    return e;
}

namespace detail {

inline double virtual_psi(const Matrix& psi, int i, int j) {
    if (i < 0 && j < 0) return 0.0;
    if (i < 0 || j < 0) return ad::kInf;
    return psi(i, j);
}

} // namespace detail

inline WarpResult dtw(const Matrix& e, int tau = 1, Mode mode = Mode::hard, double gamma = 0.1) {
    if (tau < 1) throw ShapeError("InvalidTau", "dtw step tau must be >= 1");
    validate_costs(e);

    WarpResult res;
    int mq = e.rows, mp = e.cols;

    if (mode == Mode::soft) {
        res.cumulative = ad::Tape::soft_dtw_table(e, tau, gamma);
        res.distance = res.cumulative(mq - 1, mp - 1);
        if (!std::isfinite(res.distance))
            throw NumericError("Unreachable", "terminal dtw cell is not reachable");
        res.normalized = res.distance / std::max(mq, mp);
        return res;
    }

    Matrix psi(mq, mp);
    for (int i = 0; i < mq; ++i)
        for (int j = 0; j < mp; ++j) {
            double diag = detail::virtual_psi(psi, i - tau, j - tau);
            double vert = detail::virtual_psi(psi, i - tau, j);
            double horz = detail::virtual_psi(psi, i, j - tau);
            psi(i, j) = e(i, j) + std::min({diag, vert, horz});
        }
    res.distance = psi(mq - 1, mp - 1);
    if (!std::isfinite(res.distance))
        throw NumericError("Unreachable", "terminal dtw cell is not reachable");
    res.normalized = res.distance / std::max(mq, mp);

    // Backtrack the argmin path; ties prefer diagonal, then vertical
    // (i-tau, j), then horizontal (i, j-tau).
    std::vector<std::pair<int, int>> rev;
    int i = mq - 1, j = mp - 1;
    while (true) {
        rev.emplace_back(i + 1, j + 1);
        double diag = detail::virtual_psi(psi, i - tau, j - tau);
        double vert = detail::virtual_psi(psi, i - tau, j);
        double horz = detail::virtual_psi(psi, i, j - tau);
        if (i - tau < 0 && j - tau < 0) break; // start cell: predecessor is the virtual origin
        if (diag <= vert && diag <= horz) {
            i -= tau;
            j -= tau;
        } else if (vert <= horz) {
            i -= tau;
        } else {
            j -= tau;
        }
    }
    res.cumulative = std::move(psi);
    res.path.assign(rev.rbegin(), rev.rend());
    return res;
}

// Exhaustive-path oracle: enumerates every monotone path from (1,1) to
// (mq,mp) with steps {(1,0),(0,1),(1,1)} and returns the minimal cost sum.
// Only intended for matrices up to 8x8.
inline double brute_force_dtw(const Matrix& e) {
    validate_costs(e);
    if (e.rows > 8 || e.cols > 8) throw ShapeError("TooLarge", "brute force limited to 8x8");
    double best = ad::kInf;
    // depth-first over (i, j, cost so far)
    struct Item {
        int i, j;
        double cost;
    };
    std::vector<Item> work;
    work.push_back({0, 0, e(0, 0)});
    while (!work.empty()) {
        Item it = work.back();
        work.pop_back();
        if (it.i == e.rows - 1 && it.j == e.cols - 1) {
            best = std::min(best, it.cost);
            continue;
        }
        if (it.i + 1 < e.rows) work.push_back({it.i + 1, it.j, it.cost + e(it.i + 1, it.j)});
        if (it.j + 1 < e.cols) work.push_back({it.i, it.j + 1, it.cost + e(it.i, it.j + 1)});
        if (it.i + 1 < e.rows && it.j + 1 < e.cols)
            work.push_back({it.i + 1, it.j + 1, it.cost + e(it.i + 1, it.j + 1)});
    }
    return best;
}

// Pairs of aligned rows along a hard-mode path: for each step (i, j) the
// query row i and support row j. Row indices in the result are 0-based.
struct AlignedPairs {
    std::vector<int> query_rows;
    std::vector<int> support_rows;
    size_t size() const { return query_rows.size(); }
};

inline AlignedPairs aligned_pairs(const std::vector<std::pair<int, int>>& path, int mq, int mp) {
    if (path.empty()) throw ShapeError("InvalidPath", "empty warp path");
    AlignedPairs out;
    out.query_rows.reserve(path.size());
    out.support_rows.reserve(path.size());
    int prev_i = 0, prev_j = 0;
    for (size_t k = 0; k < path.size(); ++k) {
        auto [i, j] = path[k];
        if (i < 1 || i > mq || j < 1 || j > mp)
            throw ShapeError("InvalidPath", "path cell outside the cost matrix");
        if (k > 0 && (i < prev_i || j < prev_j || (i == prev_i && j == prev_j)))
            throw ShapeError("InvalidPath", "path is not strictly monotone");
        prev_i = i;
        prev_j = j;
        out.query_rows.push_back(i - 1);
        out.support_rows.push_back(j - 1);
    }
    if (path.back() != std::pair<int, int>(mq, mp))
        throw ShapeError("InvalidPath", "path does not end at (mq, mp)");
    return out;
}

// U = the stacked paired rows (query rows first, then support rows, one pair
// per path step) used by the disentanglement loss.
inline Matrix updated_representations(const Matrix& r_query, const Matrix& r_support,
                                      const std::vector<std::pair<int, int>>& path) {
    if (r_query.cols != r_support.cols)
        throw ShapeError("DimMismatch", "aligned representations differ in feature dim");
    AlignedPairs ap = aligned_pairs(path, r_query.rows, r_support.rows);
    Matrix u(static_cast<int>(2 * ap.size()), r_query.cols);
    for (size_t k = 0; k < ap.size(); ++k)
        for (int c = 0; c < r_query.cols; ++c) {
            u(static_cast<int>(k), c) = r_query(ap.query_rows[k], c);
            u(static_cast<int>(ap.size() + k), c) = r_support(ap.support_rows[k], c);
        }
    return u;
}

// ------------------------------------------------------------------ exports

inline void write_path_csv(const std::vector<std::pair<int, int>>& path, std::ostream& out) {
    out << "i,j\n";
    for (auto [i, j] : path) out << i << "," << j << "\n";
}

inline void write_table_csv(const Matrix& m, std::ostream& out) {
    char buf[64];
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << buf << (j + 1 < m.cols ? "," : "");
        }
        out << "\n";
    }
}

} // namespace sigshot::dtw
