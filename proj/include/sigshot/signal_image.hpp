#pragma once

// Skeleton-to-signal-image transforms.
//
// A signal image maps landmarks (or bones) to the height axis, time to the
// width axis, and one spatial quantity per colour channel:
//   position image     H = X joints,  channels are min-max normalized x/y/z
//   orientation image  H = X-1 bones, channels are the bone's direction
//                      angles against the x/y/z axes scaled from [0, pi/2]
//                      to [0, 255]
// Early fusion stacks the position image above the orientation image and
// resizes the pair to a common resolution.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "sigshot/common.hpp"
#include "sigshot/skeleton.hpp"

namespace sigshot {

enum class ImageKind { position, orientation, fused };

inline const char* to_string(ImageKind k) {
    switch (k) {
    case ImageKind::position: return "position";
    case ImageKind::orientation: return "orientation";
    case ImageKind::fused: return "fused";
    }
    return "?";
}

inline ImageKind image_kind_from_string(const std::string& s) {
    if (s == "position") return ImageKind::position;
    if (s == "orientation") return ImageKind::orientation;
    if (s == "fused") return ImageKind::fused;
    throw DataError("SchemaError", "unknown image kind \"" + s + "\"");
}

struct SignalImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels; // H*W*3, row-major, RGB interleaved
    ImageKind kind = ImageKind::position;

    SignalImage() = default;
    SignalImage(int h, int w, ImageKind k) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0), kind(k) {
        if (h < 1 || w < 1) throw ShapeError("ShapeMismatch", "image dimensions must be >= 1");
    }

    std::uint8_t& at(int r, int c, int ch) {
        return pixels[(static_cast<size_t>(r) * width + c) * 3 + ch];
    }
    std::uint8_t at(int r, int c, int ch) const {
        return pixels[(static_cast<size_t>(r) * width + c) * 3 + ch];
    }

    bool operator==(const SignalImage& o) const {
        return height == o.height && width == o.width && kind == o.kind && pixels == o.pixels;
    }
};

// Per-bone per-frame direction angles, radians, all in [0, pi/2].
struct AngleField {
    int bones = 0;
    int frames = 0;
    std::vector<Vec3> angles; // bone-major: angles[b * frames + t]

    Vec3& at(int b, int t) { return angles[static_cast<size_t>(b) * frames + t]; }
    const Vec3& at(int b, int t) const { return angles[static_cast<size_t>(b) * frames + t]; }
};

// vector[b][t] = coords[t][child_b] - coords[t][parent_b]; bone-major layout.
inline std::vector<Vec3> bone_vectors(const SkeletonSequence& seq, const BoneTopology& topo) {
    for (auto [child, parent] : topo.bones)
        if (child < 1 || child > seq.joints || parent < 1 || parent > seq.joints)
            throw ShapeError("IndexOutOfRange", "bone joint index outside the sequence's joints");
    std::vector<Vec3> out(static_cast<size_t>(topo.bone_count()) * seq.frames);
    for (int b = 0; b < topo.bone_count(); ++b) {
        auto [child, parent] = topo.bones[static_cast<size_t>(b)];
        for (int t = 0; t < seq.frames; ++t)
            out[static_cast<size_t>(b) * seq.frames + t] = seq.at(t, child - 1) - seq.at(t, parent - 1);
    }
    return out;
}

constexpr double kZeroBoneNorm = 1e-9; // meters

// Direction angles of a bone against the x/y/z axes:
//   theta_i = arccos(|v_i| / |v|), clamped into [0, pi/2].
// Throws ZeroBone below kZeroBoneNorm; the angle-field builder substitutes
// the previous frame's angles (or the pi/2 triple at frame 1) instead.
inline Vec3 bone_angles(const Vec3& v) {
    double n = v.norm();
    if (n < kZeroBoneNorm) throw NumericError("ZeroBone", "bone vector norm below 1e-9 m");
    auto angle = [n](double component) {
        double c = std::abs(component) / n;
        if (c > 1.0) c = 1.0;
        return std::acos(c);
    };
    return {angle(v.x), angle(v.y), angle(v.z)};
}

inline AngleField angle_field(const SkeletonSequence& seq, const BoneTopology& topo) {
    std::vector<Vec3> vecs = bone_vectors(seq, topo);
    AngleField f;
    f.bones = topo.bone_count();
    f.frames = seq.frames;
    f.angles.resize(vecs.size());
    for (int b = 0; b < f.bones; ++b) {
        for (int t = 0; t < f.frames; ++t) {
            const Vec3& v = vecs[static_cast<size_t>(b) * f.frames + t];
            if (v.norm() < kZeroBoneNorm) {
                f.at(b, t) = t > 0 ? f.at(b, t - 1) : Vec3{kHalfPi, kHalfPi, kHalfPi};
            } else {
                f.at(b, t) = bone_angles(v);
            }
        }
    }
    return f;
}

// H = X, W = T; channel c holds round(255 * (v - min_c) / (max_c - min_c))
// with the min/max taken per channel over the whole sequence. A flat channel
// (max == min) maps to all zeros.
inline SignalImage position_image(const SkeletonSequence& seq) {
    seq.validate();
    SignalImage img(seq.joints, seq.frames, ImageKind::position);
    for (int ch = 0; ch < 3; ++ch) {
        double lo = seq.coords[0][ch], hi = seq.coords[0][ch];
        for (const Vec3& p : seq.coords) {
            lo = std::min(lo, p[ch]);
            hi = std::max(hi, p[ch]);
        }
        double range = hi - lo;
        for (int j = 0; j < seq.joints; ++j)
            for (int t = 0; t < seq.frames; ++t) {
                double v = range > 0.0 ? 255.0 * (seq.at(t, j)[ch] - lo) / range : 0.0;
                img.at(j, t, ch) = static_cast<std::uint8_t>(round_half_up_u8(v));
            }
    }
    return img;
}

// H = X-1 bones, W = T; channels are round(255 * theta / (pi/2)).
inline SignalImage orientation_image(const SkeletonSequence& seq, const BoneTopology& topo) {
    seq.validate();
    topo.validate();
    AngleField f = angle_field(seq, topo);
    SignalImage img(f.bones, f.frames, ImageKind::orientation);
    for (int b = 0; b < f.bones; ++b)
        for (int t = 0; t < f.frames; ++t)
            for (int ch = 0; ch < 3; ++ch)
                img.at(b, t, ch) = static_cast<std::uint8_t>(round_half_up_u8(255.0 * f.at(b, t)[ch] / kHalfPi));
    return img;
}

// Corner-aligned bilinear resample: source coordinate of output index k is
// k * (src_len - 1) / (dst_len - 1); a 1-pixel output axis samples the source
// center. Channels are independent; results are rounded half-up.
inline SignalImage resize_bilinear(const SignalImage& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("ShapeMismatch", "resize target must be >= 1x1");
    SignalImage out(out_h, out_w, img.kind);
    auto src_coord = [](int dst, int dst_len, int src_len) {
        if (dst_len == 1) return (src_len - 1) / 2.0;
        return static_cast<double>(dst) * (src_len - 1) / (dst_len - 1);
    };
    for (int r = 0; r < out_h; ++r) {
        double sy = src_coord(r, out_h, img.height);
        int y0 = static_cast<int>(sy);
        if (y0 >= img.height - 1) y0 = img.height - 1;
        int y1 = std::min(y0 + 1, img.height - 1);
        double fy = sy - y0;
        for (int c = 0; c < out_w; ++c) {
            double sx = src_coord(c, out_w, img.width);
            int x0 = static_cast<int>(sx);
            if (x0 >= img.width - 1) x0 = img.width - 1;
            int x1 = std::min(x0 + 1, img.width - 1);
            double fx = sx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                double v00 = img.at(y0, x0, ch), v01 = img.at(y0, x1, ch);
                double v10 = img.at(y1, x0, ch), v11 = img.at(y1, x1, ch);
                double top = v00 + (v01 - v00) * fx;
                double bot = v10 + (v11 - v10) * fx;
                out.at(r, c, ch) = static_cast<std::uint8_t>(round_half_up_u8(top + (bot - top) * fy));
            }
        }
    }
    return out;
}

// Stack position above orientation along the height axis (widths must agree),
// then resize to (out_h, out_w).
inline SignalImage early_fuse(const SignalImage& pos, const SignalImage& ori, int out_h, int out_w) {
    if (pos.width != ori.width)
        throw ShapeError("WidthMismatch", "early fusion widths " + std::to_string(pos.width) + " vs " +
                                              std::to_string(ori.width));
    SignalImage stacked(pos.height + ori.height, pos.width, ImageKind::fused);
    std::copy(pos.pixels.begin(), pos.pixels.end(), stacked.pixels.begin());
    std::copy(ori.pixels.begin(), ori.pixels.end(), stacked.pixels.begin() + pos.pixels.size());
    return resize_bilinear(stacked, out_h, out_w);
}

// Height-stack without resize, for callers that fuse at native resolution.
inline SignalImage stack_images(const SignalImage& pos, const SignalImage& ori) {
    if (pos.width != ori.width)
        throw ShapeError("WidthMismatch", "stack widths " + std::to_string(pos.width) + " vs " +
                                              std::to_string(ori.width));
    SignalImage stacked(pos.height + ori.height, pos.width, ImageKind::fused);
    std::copy(pos.pixels.begin(), pos.pixels.end(), stacked.pixels.begin());
    std::copy(ori.pixels.begin(), ori.pixels.end(), stacked.pixels.begin() + pos.pixels.size());
    return stacked;
}

// ------------------------------------------------------------------- PPM io

// Binary PPM (P6) with a comment line recording kind and source.
inline void write_ppm(const SignalImage& img, std::ostream& out, const std::string& source = "") {
    out << "P6\n# kind=" << to_string(img.kind) << " source=" << source << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
}

inline void save_ppm(const SignalImage& img, const std::string& path, const std::string& source = "") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("IoError", "cannot write " + path);
    write_ppm(img, out, source);
}

inline SignalImage read_ppm(std::istream& in) {
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError("MalformedHeader", "not a P6 PPM");
    ImageKind kind = ImageKind::position;
    auto skip_ws_and_comments = [&]() {
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string comment;
                std::getline(in, comment);
                auto kpos = comment.find("kind=");
                if (kpos != std::string::npos) {
                    std::string k = comment.substr(kpos + 5);
                    k = k.substr(0, k.find(' '));
                    kind = image_kind_from_string(k);
                }
            } else if (c != std::char_traits<char>::eof() && std::isspace(static_cast<unsigned char>(c))) {
                in.get();
            } else {
                break;
            }
        }
    };
    skip_ws_and_comments();
    int w = 0, h = 0, maxval = 0;
    in >> w;
    skip_ws_and_comments();
    in >> h;
    skip_ws_and_comments();
    in >> maxval;
    if (!in || w < 1 || h < 1 || maxval != 255) throw DataError("MalformedHeader", "bad PPM header");
    in.get(); // single whitespace after maxval
    SignalImage img(h, w, kind);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw DataError("TruncatedFile", "PPM pixel data truncated");
    return img;
}

inline SignalImage load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("IoError", "cannot open " + path);
    return read_ppm(in);
}

// AngleField export: one CSV row per (bone, frame).
inline void write_angle_csv(const AngleField& f, std::ostream& out) {
    out << "bone,frame,theta_x,theta_y,theta_z\n";
    char buf[128];
    for (int b = 0; b < f.bones; ++b)
        for (int t = 0; t < f.frames; ++t) {
            const Vec3& a = f.at(b, t);
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", b + 1, t + 1, a.x, a.y, a.z);
            out << buf;
        }
}

} // namespace sigshot
