#pragma once

// Signal-image encoder: maps an H'xW'x3 image to a temporal representation
// R in R^{m x d}, one row per image column, with weights shared across
// columns. Column t is flattened to H'*3 values in [0,1] and passed through
//   row_t = W2 * relu(W1 * col + b1) + b2.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sigshot/autodiff.hpp"
#include "sigshot/common.hpp"
#include "sigshot/jsonutil.hpp"
#include "sigshot/rng.hpp"
#include "sigshot/signal_image.hpp"

namespace sigshot {

using ad::Matrix;

// Representation R: m rows (time, one per image column), d feature columns.
using Representation = Matrix;

struct EncoderParams {
    int img_height = 32; // H'
    int hidden = 32;     // h
    int feature_dim = 16; // d
    Matrix w1; // h x (H'*3)
    Matrix b1; // 1 x h
    Matrix w2; // d x h
    Matrix b2; // 1 x d

    int input_dim() const { return img_height * 3; }

    void validate() const {
        if (w1.rows != hidden || w1.cols != input_dim() || b1.rows != 1 || b1.cols != hidden ||
            w2.rows != feature_dim || w2.cols != hidden || b2.rows != 1 || b2.cols != feature_dim)
            throw ShapeError("ShapeMismatch", "encoder parameter shapes are inconsistent");
        if (!w1.all_finite() || !b1.all_finite() || !w2.all_finite() || !b2.all_finite())
            throw NumericError("NonFiniteResult", "encoder parameters are not finite");
    }
};

// Xavier-uniform weights, zero biases, deterministic per seed.
inline EncoderParams init_encoder(std::uint64_t seed, int img_height, int hidden, int feature_dim) {
    if (img_height < 1 || hidden < 1 || feature_dim < 1)
        throw ShapeError("ShapeMismatch", "encoder dims must be >= 1");
    EncoderParams p;
    p.img_height = img_height;
    p.hidden = hidden;
    p.feature_dim = feature_dim;
    std::mt19937_64 gen = rng::engine(seed);
    auto xavier = [&gen](int rows, int cols) {
        double bound = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Matrix m(rows, cols);
        for (double& x : m.v) x = dist(gen);
        return m;
    };
    p.w1 = xavier(hidden, p.input_dim());
    p.b1 = Matrix::zeros(1, hidden);
    p.w2 = xavier(feature_dim, hidden);
    p.b2 = Matrix::zeros(1, feature_dim);
    return p;
}

// Image columns as an m x (H'*3) matrix, pixel bytes scaled to [0,1].
// Row t is column t of the image, laid out as (row, channel) pairs.
inline Matrix image_columns(const SignalImage& img) {
    Matrix x(img.width, img.height * 3);
    for (int t = 0; t < img.width; ++t)
        for (int r = 0; r < img.height; ++r)
            for (int ch = 0; ch < 3; ++ch)
                x(t, r * 3 + ch) = static_cast<double>(img.at(r, t, ch)) / 255.0;
    return x;
}

struct EncoderVars {
    ad::Var w1, b1, w2, b2;
};

inline EncoderVars encoder_leaves(ad::Tape& tape, const EncoderParams& p, bool requires_grad) {
    p.validate();
    return {tape.leaf(p.w1, requires_grad), tape.leaf(p.b1, requires_grad),
            tape.leaf(p.w2, requires_grad), tape.leaf(p.b2, requires_grad)};
}

// Tape version over a precomputed column matrix (m x H'*3):
//   R = relu(X W1^T + 1 b1) W2^T + 1 b2.
inline ad::Var encode_columns(ad::Tape& tape, const Matrix& columns, const EncoderVars& enc) {
    ad::Var x = tape.leaf(columns, false);
    ad::Var ones = tape.leaf(Matrix(columns.rows, 1, 1.0), false);
    ad::Var h = tape.relu(tape.add(tape.matmul(x, tape.transpose(enc.w1)), tape.matmul(ones, enc.b1)));
    return tape.add(tape.matmul(h, tape.transpose(enc.w2)), tape.matmul(ones, enc.b2));
}

// Value version of the encoder contract.
inline Representation encode(const SignalImage& img, const EncoderParams& p) {
    p.validate();
    if (img.height != p.img_height)
        throw ShapeError("ShapeMismatch", "image height " + std::to_string(img.height) +
                                              " does not match configured " + std::to_string(p.img_height));
    ad::Tape tape;
    EncoderVars enc = encoder_leaves(tape, p, false);
    ad::Var r = encode_columns(tape, image_columns(img), enc);
    return tape.value(r);
}

// ------------------------------------------------------------- checkpoint io

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = m.v;
    return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& where) {
    using namespace jsonutil;
    check_keys(j, {"rows", "cols", "data"}, where);
    Matrix m(get_req<int>(j, "rows", where), get_req<int>(j, "cols", where));
    std::vector<double> data = get_req<std::vector<double>>(j, "data", where);
    if (data.size() != m.v.size()) throw DataError("SchemaError", where + ": data size mismatch");
    m.v = std::move(data);
    if (!m.all_finite()) throw NumericError("NonFiniteResult", where + ": non-finite checkpoint values");
    return m;
}

inline nlohmann::json encoder_to_json(const EncoderParams& p) {
    nlohmann::json j;
    j["img_height"] = p.img_height;
    j["hidden"] = p.hidden;
    j["feature_dim"] = p.feature_dim;
    j["w1"] = matrix_to_json(p.w1);
    j["b1"] = matrix_to_json(p.b1);
    j["w2"] = matrix_to_json(p.w2);
    j["b2"] = matrix_to_json(p.b2);
    return j;
}

inline EncoderParams encoder_from_json(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"img_height", "hidden", "feature_dim", "w1", "b1", "w2", "b2"}, "encoder");
    EncoderParams p;
    p.img_height = get_req<int>(j, "img_height", "encoder");
    p.hidden = get_req<int>(j, "hidden", "encoder");
    p.feature_dim = get_req<int>(j, "feature_dim", "encoder");
    p.w1 = matrix_from_json(require(j, "w1", "encoder"), "encoder.w1");
    p.b1 = matrix_from_json(require(j, "b1", "encoder"), "encoder.b1");
    p.w2 = matrix_from_json(require(j, "w2", "encoder"), "encoder.w2");
    p.b2 = matrix_from_json(require(j, "b2", "encoder"), "encoder.b2");
    p.validate();
    return p;
}

} // namespace sigshot
