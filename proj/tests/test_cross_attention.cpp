#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <sstream>

#include "sigshot/cross_attention.hpp"

using namespace sigshot;
using ad::Matrix;

namespace {

Matrix random_matrix(std::mt19937_64& gen, int rows, int cols, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& x : m.v) x = dist(gen);
    return m;
}

CsaParams identity_params(int d) {
    CsaParams p;
    p.dim = d;
    Matrix eye(d, d);
    for (int i = 0; i < d; ++i) eye(i, i) = 1.0;
    p.m1q = p.m2q = p.m3q = p.m1p = p.m2p = p.m3p = eye;
    return p;
}

} // namespace

TEST_CASE("single-row identity attention returns the input") {
    std::mt19937_64 gen(2);
    Matrix rq = random_matrix(gen, 1, 4);
    Matrix rp = random_matrix(gen, 1, 4);
    CsaResult r = cross_attend(rq, rp, identity_params(4));
    REQUIRE(r.attn_q(0, 0) == 1.0);
    for (int c = 0; c < 4; ++c) REQUIRE(r.q_hat(0, c) == Catch::Approx(rq(0, c)));
    for (int c = 0; c < 4; ++c) REQUIRE(r.p_hat(0, c) == Catch::Approx(rp(0, c)));
}

TEST_CASE("equal inputs with shared side parameters attend symmetrically") {
    std::mt19937_64 gen(8);
    Matrix r = random_matrix(gen, 5, 3);
    CsaParams p = init_csa(99, 3);
    p.m1p = p.m1q;
    p.m2p = p.m2q;
    p.m3p = p.m3q;
    CsaResult out = cross_attend(r, r, p);
    REQUIRE(out.q_hat.v == out.p_hat.v);
    REQUIRE(out.attn_q.v == out.attn_p.v);
}

TEST_CASE("attention rows are stochastic for random pairs") {
    std::mt19937_64 gen(13);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> msize(1, 7);
        std::uniform_int_distribution<int> dsize(1, 5);
        int m = msize(gen), d = dsize(gen);
        Matrix rq = random_matrix(gen, m, d, -3.0, 3.0);
        Matrix rp = random_matrix(gen, m, d, -3.0, 3.0);
        CsaResult r = cross_attend(rq, rp, init_csa(static_cast<std::uint64_t>(trial), d));
        REQUIRE(r.q_hat.rows == m);
        REQUIRE(r.q_hat.cols == d);
        REQUIRE(r.p_hat.rows == m);
        REQUIRE(r.attn_q.rows == m);
        REQUIRE(r.attn_q.cols == m);
        for (const Matrix* attn : {&r.attn_q, &r.attn_p})
            for (int i = 0; i < attn->rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < attn->cols; ++j) s += (*attn)(i, j);
                REQUIRE(std::abs(s - 1.0) < 1e-9);
            }
    }
}

TEST_CASE("mismatched inputs are rejected") {
    std::mt19937_64 gen(3);
    CsaParams p = init_csa(1, 4);
    Matrix rq = random_matrix(gen, 3, 4);
    Matrix bad_dim = random_matrix(gen, 3, 5);
    REQUIRE_THROWS_AS(cross_attend(rq, bad_dim, p), ShapeError);
    Matrix bad_len = random_matrix(gen, 4, 4);
    REQUIRE_THROWS_AS(cross_attend(rq, bad_len, p), ShapeError);
}

TEST_CASE("csa gradients pass the finite-difference check") {
    std::mt19937_64 gen(21);
    Matrix rq = random_matrix(gen, 4, 3);
    Matrix rp = random_matrix(gen, 4, 3);
    CsaParams init = init_csa(7, 3);
    std::vector<Matrix> params{init.m1q, init.m2q, init.m3q, init.m1p, init.m2p, init.m3p};
    double err = ad::grad_check(
        [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            CsaVars cv{v[0], v[1], v[2], v[3], v[4], v[5]};
            AttendedVars a = cross_attend_on_tape(t, t.leaf(rq), t.leaf(rp), cv);
            return t.frobenius_norm(t.sub(a.q_hat, a.p_hat));
        },
        params, 1e-5);
    REQUIRE(err < 1e-4);
}

TEST_CASE("frobenius distance basics") {
    Matrix a(1, 2), b(1, 2), z(1, 2, 0.0);
    a(0, 0) = 1;
    a(0, 1) = 0;
    REQUIRE(frobenius_distance(a, a) == 0.0);
    REQUIRE(frobenius_distance(a, z) == 1.0);
    Matrix c(1, 2);
    c(0, 0) = 3;
    c(0, 1) = 4;
    REQUIRE(frobenius_distance(c, z) == 5.0);
    REQUIRE_THROWS_AS(frobenius_distance(a, Matrix(2, 2, 0.0)), ShapeError);
}

TEST_CASE("frobenius distance is a metric on random triples") {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 200; ++trial) {
        Matrix a = random_matrix(gen, 3, 4), b = random_matrix(gen, 3, 4), c = random_matrix(gen, 3, 4);
        double ab = frobenius_distance(a, b);
        double ba = frobenius_distance(b, a);
        double ac = frobenius_distance(a, c);
        double cb = frobenius_distance(c, b);
        REQUIRE(ab == ba);
        REQUIRE(ab <= ac + cb + 1e-9);
        REQUIRE(ab >= 0.0);
    }
}

TEST_CASE("attention exports") {
    std::mt19937_64 gen(29);
    Matrix rq = random_matrix(gen, 5, 4);
    Matrix rp = random_matrix(gen, 5, 4);
    CsaResult r = cross_attend(rq, rp, init_csa(11, 4));

    std::ostringstream csv;
    write_attention_csv(r.attn_q, csv);
    std::istringstream in(csv.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        rows++;
        REQUIRE(std::count(line.begin(), line.end(), ',') == 4);
    }
    REQUIRE(rows == 5);

    std::ostringstream pgm;
    write_attention_pgm(r.attn_q, pgm);
    std::string s = pgm.str();
    REQUIRE(s.substr(0, 3) == "P5\n");
    REQUIRE(s.find("5 5\n255\n") != std::string::npos);
    // row-max scaling puts one 255 in every row
    size_t data_off = s.find("255\n") + 4;
    REQUIRE(s.size() - data_off == 25);
    for (int i = 0; i < 5; ++i) {
        bool has_max = false;
        for (int j = 0; j < 5; ++j)
            has_max = has_max || static_cast<unsigned char>(s[data_off + 5 * i + j]) == 255;
        REQUIRE(has_max);
    }
}

TEST_CASE("csa json round-trip is exact") {
    CsaParams p = init_csa(5150, 6);
    CsaParams back = csa_from_json(csa_to_json(p));
    REQUIRE(back.m1q.v == p.m1q.v);
    REQUIRE(back.m3p.v == p.m3p.v);
    REQUIRE(back.dim == 6);
}
