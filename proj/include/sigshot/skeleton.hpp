#pragma once

// Skeleton sequence types, bone topology, and the NTU-layout text
// parser/writer.
//
// NTU skeleton text layout:
//   line 1:            frame count
//   per frame:         body count
//   per body:          one info line (ignored), a joint-count line,
//                      then that many joint lines whose first three
//                      whitespace-separated fields are x y z (extra
//                      per-joint fields are ignored)
//
// Multi-body files resolve to the body with the largest total
// frame-to-frame coordinate displacement; frames carrying fewer bodies
// than the rest of the file are dropped (counted in ParseStats).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sigshot/common.hpp"

namespace sigshot {

struct SkeletonSequence {
    int frames = 0; // T >= 2
    int joints = 0; // X >= 2
    std::vector<Vec3> coords; // frame-major, size frames * joints
    std::optional<int> label;
    std::optional<int> subject_id;

    Vec3& at(int t, int j) { return coords[static_cast<size_t>(t) * joints + j]; }
    const Vec3& at(int t, int j) const { return coords[static_cast<size_t>(t) * joints + j]; }

    void validate() const {
        if (frames < 2) throw DataError("TruncatedFile", "sequence needs at least 2 frames");
        if (joints < 2) throw DataError("MalformedHeader", "sequence needs at least 2 joints");
        if (coords.size() != static_cast<size_t>(frames) * joints)
            throw ShapeError("ShapeMismatch", "coordinate array does not match frames x joints");
        for (const Vec3& p : coords)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                throw NumericError("NonFiniteCoordinate", "sequence contains a non-finite coordinate");
    }
};

// Bone list as (child, parent) joint pairs, 1-based to match the dataset's
// joint numbering. Valid topologies are connected trees: every joint
// except the single root appears exactly once as a child.
struct BoneTopology {
    std::vector<std::pair<int, int>> bones;

    int bone_count() const { return static_cast<int>(bones.size()); }
    int joint_count() const { return bone_count() + 1; }

    void validate() const {
        int x = joint_count();
        std::vector<int> child_seen(static_cast<size_t>(x) + 1, 0);
        for (auto [child, parent] : bones) {
            if (child < 1 || child > x || parent < 1 || parent > x)
                throw ShapeError("IndexOutOfRange", "bone joint index outside [1, X]");
            if (child == parent) throw ShapeError("IndexOutOfRange", "bone connects a joint to itself");
            child_seen[static_cast<size_t>(child)]++;
        }
        int roots = 0;
        for (int j = 1; j <= x; ++j) {
            if (child_seen[static_cast<size_t>(j)] > 1)
                throw ShapeError("IndexOutOfRange", "joint " + std::to_string(j) + " has two parents");
            if (child_seen[static_cast<size_t>(j)] == 0) roots++;
        }
        if (roots != 1) throw ShapeError("IndexOutOfRange", "topology must have exactly one root");

        // connectivity via union-find
        std::vector<int> parent_of(static_cast<size_t>(x) + 1);
        std::iota(parent_of.begin(), parent_of.end(), 0);
        auto find = [&](int a) {
            while (parent_of[static_cast<size_t>(a)] != a) {
                parent_of[static_cast<size_t>(a)] = parent_of[static_cast<size_t>(parent_of[static_cast<size_t>(a)])];
                a = parent_of[static_cast<size_t>(a)];
            }
            return a;
        };
        for (auto [child, parent] : bones) parent_of[static_cast<size_t>(find(child))] = find(parent);
        int root = find(1);
        for (int j = 2; j <= x; ++j)
            if (find(j) != root) throw ShapeError("IndexOutOfRange", "topology is not connected");
    }
};

// The 24-bone convention over the 25 NTU joints, child listed first.
inline BoneTopology default_ntu_topology() {
    BoneTopology t;
    t.bones = {{1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},   {7, 6},   {8, 7},
               {9, 21},  {10, 9},  {11, 10}, {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
               {17, 1},  {18, 17}, {19, 18}, {20, 19}, {22, 8},  {23, 8},  {24, 12}, {25, 12}};
    return t;
}

struct ParseStats {
    int dropped_frames = 0; // frames with fewer bodies than the rest of the file
    int bodies = 1;
};

namespace detail {

inline bool next_line(std::istream& in, std::string& line, int& lineno) {
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
}

inline long parse_count(const std::string& line, int lineno, const char* what) {
    std::istringstream ss(line);
    long value = 0;
    if (!(ss >> value) || value < 0)
        throw DataError("MalformedHeader",
                        std::string("non-numeric ") + what + " at line " + std::to_string(lineno));
    return value;
}

} // namespace detail

// Parses one NTU skeleton file. For multi-body files, returns the body with
// the largest total frame-to-frame displacement (sum of |dx|+|dy|+|dz| over
// all joints and consecutive kept frames); ties go to the earlier body.
inline SkeletonSequence parse_ntu_skeleton(std::istream& in, ParseStats* stats = nullptr) {
    std::string line;
    int lineno = 0;

    if (!detail::next_line(in, line, lineno)) throw DataError("TruncatedFile", "empty input");
    long declared_frames = detail::parse_count(line, lineno, "frame count");

    int joint_count = -1;
    // per frame, per body: joint list
    std::vector<std::vector<std::vector<Vec3>>> frames;
    frames.reserve(static_cast<size_t>(declared_frames));

    for (long f = 0; f < declared_frames; ++f) {
        if (!detail::next_line(in, line, lineno))
            throw DataError("TruncatedFile", "missing body count for frame " + std::to_string(f + 1));
        long bodies = detail::parse_count(line, lineno, "body count");
        std::vector<std::vector<Vec3>> frame;
        for (long b = 0; b < bodies; ++b) {
            if (!detail::next_line(in, line, lineno))
                throw DataError("TruncatedFile", "missing body info at line " + std::to_string(lineno));
            if (!detail::next_line(in, line, lineno))
                throw DataError("TruncatedFile", "missing joint count at line " + std::to_string(lineno));
            long jc = detail::parse_count(line, lineno, "joint count");
            if (joint_count < 0) {
                if (jc < 2) throw DataError("MalformedHeader", "joint count must be at least 2");
                joint_count = static_cast<int>(jc);
            } else if (jc != joint_count) {
                throw DataError("JointCountMismatch",
                                "joint count changed from " + std::to_string(joint_count) + " to " +
                                    std::to_string(jc) + " at line " + std::to_string(lineno));
            }
            std::vector<Vec3> body;
            body.reserve(static_cast<size_t>(joint_count));
            for (int j = 0; j < joint_count; ++j) {
                if (!detail::next_line(in, line, lineno))
                    throw DataError("JointCountMismatch",
                                    "declared " + std::to_string(joint_count) + " joints but found " +
                                        std::to_string(j));
                // strtod so that nan/inf tokens parse and then fail the
                // finiteness check instead of looking like a short line
                Vec3 p;
                const char* cur = line.c_str();
                char* end = nullptr;
                for (int c = 0; c < 3; ++c) {
                    double v = std::strtod(cur, &end);
                    if (end == cur)
                        throw DataError("JointCountMismatch",
                                        "joint line " + std::to_string(lineno) + " does not carry x y z");
                    p[c] = v;
                    cur = end;
                }
                if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
                    throw NumericError("NonFiniteCoordinate",
                                       "non-finite coordinate at line " + std::to_string(lineno));
                body.push_back(p);
            }
            frame.push_back(std::move(body));
        }
        frames.push_back(std::move(frame));
    }

    size_t body_count = 0;
    for (const auto& f : frames) body_count = std::max(body_count, f.size());
    if (body_count == 0) throw DataError("TruncatedFile", "no bodies in file");

    // Drop frames missing bodies, then pick the most-moving body.
    std::vector<const std::vector<std::vector<Vec3>>*> kept;
    int dropped = 0;
    for (const auto& f : frames) {
        if (f.size() == body_count)
            kept.push_back(&f);
        else
            ++dropped;
    }
    if (stats) {
        stats->dropped_frames = dropped;
        stats->bodies = static_cast<int>(body_count);
    }
    if (kept.size() < 2) throw DataError("TruncatedFile", "fewer than 2 usable frames");

    size_t best_body = 0;
    if (body_count > 1) {
        double best_disp = -1.0;
        for (size_t b = 0; b < body_count; ++b) {
            double disp = 0.0;
            for (size_t t = 1; t < kept.size(); ++t)
                for (int j = 0; j < joint_count; ++j) {
                    const Vec3& prev = (*kept[t - 1])[b][static_cast<size_t>(j)];
                    const Vec3& cur = (*kept[t])[b][static_cast<size_t>(j)];
                    disp += std::abs(cur.x - prev.x) + std::abs(cur.y - prev.y) + std::abs(cur.z - prev.z);
                }
            if (disp > best_disp) {
                best_disp = disp;
                best_body = b;
            }
        }
    }

    SkeletonSequence seq;
    seq.frames = static_cast<int>(kept.size());
    seq.joints = joint_count;
    seq.coords.reserve(kept.size() * static_cast<size_t>(joint_count));
    for (const auto* f : kept)
        for (int j = 0; j < joint_count; ++j) seq.coords.push_back((*f)[best_body][static_cast<size_t>(j)]);
    seq.validate();
    return seq;
}

inline SkeletonSequence parse_ntu_skeleton(const std::string& text, ParseStats* stats = nullptr) {
    std::istringstream ss(text);
    return parse_ntu_skeleton(ss, stats);
}

inline SkeletonSequence load_ntu_skeleton(const std::string& path, ParseStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("IoError", "cannot open " + path);
    try {
        return parse_ntu_skeleton(in, stats);
    } catch (const Error& e) {
        throw DataError(e.code(), path + ": " + e.what());
    }
}

// Emits a 1-body file that parse_ntu_skeleton reads back; coordinates are
// printed with 9 significant digits.
inline void write_ntu_skeleton(const SkeletonSequence& seq, std::ostream& out) {
    seq.validate();
    out << seq.frames << "\n";
    char buf[160];
    for (int t = 0; t < seq.frames; ++t) {
        out << 1 << "\n";
        out << "0 0 0 0 0 0 0 0 0 0\n";
        out << seq.joints << "\n";
        for (int j = 0; j < seq.joints; ++j) {
            const Vec3& p = seq.at(t, j);
            std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g 0 0 0 0 0 0 0 0 2\n", p.x, p.y, p.z);
            out << buf;
        }
    }
}

inline std::string write_ntu_skeleton(const SkeletonSequence& seq) {
    std::ostringstream ss;
    write_ntu_skeleton(seq, ss);
    return ss.str();
}

inline void save_ntu_skeleton(const SkeletonSequence& seq, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("IoError", "cannot write " + path);
    write_ntu_skeleton(seq, out);
}

} // namespace sigshot
