#pragma once

// Seeded synthetic action generator and its JSON manifest.
//
// Each class is a set of per-joint sinusoidal trajectories around a base
// pose. Joint j at frame t sits at
//   base[j] + amplitude_j * sin(2*pi*freq_j*speed * t/FRAME_RATE + phase_j) * axis_j
// for active joints, plus i.i.d. Gaussian noise. Frame time is t/FRAME_RATE
// seconds at a fixed 30 fps, so the speed factor rescales action timing
// without changing the trajectory shape: a speed-2 clip advances through the
// motion exactly twice as fast as a speed-1 clip.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "sigshot/common.hpp"
#include "sigshot/jsonutil.hpp"
#include "sigshot/rng.hpp"
#include "sigshot/skeleton.hpp"

namespace sigshot {

constexpr double kFrameRate = 30.0; // frames per second

struct JointMotion {
    double amplitude = 0.0; // meters
    double frequency = 0.0; // Hz
    double phase = 0.0;     // radians
    Vec3 axis{0.0, 0.0, 0.0};
};

struct ClassSpec {
    int class_id = 0;
    int joints = 25;
    std::vector<Vec3> base_pose;      // size joints
    std::vector<JointMotion> motion;  // size joints
    std::vector<int> active_joints;   // 1-based, non-empty

    void validate() const {
        if (joints < 2) throw DataError("SchemaError", "class spec needs at least 2 joints");
        if (base_pose.size() != static_cast<size_t>(joints))
            throw DataError("SchemaError", "base pose size does not match joint count");
        if (motion.size() != static_cast<size_t>(joints))
            throw DataError("SchemaError", "motion table size does not match joint count");
        if (active_joints.empty()) throw DataError("SchemaError", "active joint subset is empty");
        for (int j : active_joints)
            if (j < 1 || j > joints) throw DataError("SchemaError", "active joint index outside [1, X]");
        for (const JointMotion& m : motion)
            if (m.amplitude < 0.0) throw DataError("SchemaError", "negative amplitude");
    }
};

// Rough standing pose for the 25-joint convention, meters, y up.
inline std::vector<Vec3> default_base_pose() {
    return {
        {0.00, 0.90, 0.00},   // 1 spine base
        {0.00, 1.15, 0.00},   // 2 spine mid
        {0.00, 1.55, 0.00},   // 3 neck
        {0.00, 1.70, 0.00},   // 4 head
        {-0.20, 1.40, 0.00},  // 5 shoulder
        {-0.25, 1.10, 0.00},  // 6 elbow
        {-0.27, 0.85, 0.00},  // 7 wrist
        {-0.28, 0.75, 0.00},  // 8 hand
        {0.20, 1.40, 0.00},   // 9 shoulder
        {0.25, 1.10, 0.00},   // 10 elbow
        {0.27, 0.85, 0.00},   // 11 wrist
        {0.28, 0.75, 0.00},   // 12 hand
        {-0.10, 0.85, 0.00},  // 13 hip
        {-0.12, 0.45, 0.00},  // 14 knee
        {-0.13, 0.08, 0.00},  // 15 ankle
        {-0.14, 0.02, 0.12},  // 16 foot
        {0.10, 0.85, 0.00},   // 17 hip
        {0.12, 0.45, 0.00},   // 18 knee
        {0.13, 0.08, 0.00},   // 19 ankle
        {0.14, 0.02, 0.12},   // 20 foot
        {0.00, 1.40, 0.00},   // 21 spine shoulder
        {-0.29, 0.68, 0.00},  // 22 hand tip
        {-0.24, 0.72, 0.03},  // 23 thumb
        {0.29, 0.68, 0.00},   // 24 hand tip
        {0.24, 0.72, 0.03},   // 25 thumb
    };
}

// Deterministic per (spec, frames, speed, noise_sigma, seed).
inline SkeletonSequence synth_action(const ClassSpec& spec, int frames, double speed,
                                     double noise_sigma, std::uint64_t seed) {
    spec.validate();
    if (frames < 2) throw ShapeError("InvalidFrames", "synth_action needs at least 2 frames");
    if (!(speed > 0.0)) throw ShapeError("InvalidSpeed", "speed must be positive");
    if (noise_sigma < 0.0) throw ShapeError("InvalidSpeed", "noise sigma must be nonnegative");

    std::vector<char> active(static_cast<size_t>(spec.joints) + 1, 0);
    for (int j : spec.active_joints) active[static_cast<size_t>(j)] = 1;

    std::mt19937_64 gen = rng::engine(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);

    SkeletonSequence seq;
    seq.frames = frames;
    seq.joints = spec.joints;
    seq.label = spec.class_id;
    seq.coords.resize(static_cast<size_t>(frames) * spec.joints);
    for (int t = 0; t < frames; ++t) {
        for (int j = 0; j < spec.joints; ++j) {
            Vec3 p = spec.base_pose[static_cast<size_t>(j)];
            if (active[static_cast<size_t>(j) + 1]) {
                const JointMotion& m = spec.motion[static_cast<size_t>(j)];
                double arg = 2.0 * kPi * m.frequency * speed * static_cast<double>(t) / kFrameRate + m.phase;
                double s = m.amplitude * std::sin(arg);
                p = p + m.axis * s;
            }
            if (noise_sigma > 0.0) {
                p.x += noise(gen);
                p.y += noise(gen);
                p.z += noise(gen);
            }
            seq.at(t, j) = p;
        }
    }
    return seq;
}

// ---------------------------------------------------------------- manifest

struct InstanceSpec {
    std::uint64_t seed = 0;
    double speed = 1.0;
};

struct ManifestClass {
    ClassSpec spec;
    std::vector<InstanceSpec> instances;
};

struct Manifest {
    int version = 1;
    int joints = 25;
    int frames = 48;
    double noise_sigma = 0.01;
    std::vector<ManifestClass> classes;

    const ManifestClass* find_class(int class_id) const {
        for (const ManifestClass& c : classes)
            if (c.spec.class_id == class_id) return &c;
        return nullptr;
    }
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["joints"] = m.joints;
    j["frames"] = m.frames;
    j["noise_sigma"] = m.noise_sigma;
    j["classes"] = nlohmann::json::array();
    for (const ManifestClass& c : m.classes) {
        nlohmann::json jc;
        jc["class_id"] = c.spec.class_id;
        jc["active_joints"] = c.spec.active_joints;
        nlohmann::json pose = nlohmann::json::array();
        for (const Vec3& p : c.spec.base_pose) pose.push_back({p.x, p.y, p.z});
        jc["base_pose"] = pose;
        nlohmann::json motion = nlohmann::json::array();
        for (size_t i = 0; i < c.spec.motion.size(); ++i) {
            const JointMotion& mo = c.spec.motion[i];
            motion.push_back({{"joint", static_cast<int>(i) + 1},
                              {"amplitude", mo.amplitude},
                              {"frequency", mo.frequency},
                              {"phase", mo.phase},
                              {"axis", {mo.axis.x, mo.axis.y, mo.axis.z}}});
        }
        jc["motion"] = motion;
        nlohmann::json inst = nlohmann::json::array();
        for (const InstanceSpec& s : c.instances)
            inst.push_back({{"seed", s.seed}, {"speed", s.speed}});
        jc["instances"] = inst;
        j["classes"].push_back(jc);
    }
    return j;
}

inline Manifest parse_manifest(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"version", "joints", "frames", "noise_sigma", "classes"}, "manifest");
    Manifest m;
    m.version = get_or(j, "version", 1);
    m.joints = get_or(j, "joints", 25);
    m.frames = get_req<int>(j, "frames", "manifest");
    m.noise_sigma = get_or(j, "noise_sigma", 0.01);
    if (m.frames < 2) throw DataError("SchemaError", "manifest frames must be >= 2");
    const json& classes = require(j, "classes", "manifest");
    if (!classes.is_array() || classes.empty())
        throw DataError("SchemaError", "manifest needs a non-empty class list");
    for (const json& jc : classes) {
        check_keys(jc, {"class_id", "active_joints", "base_pose", "motion", "instances"}, "manifest class");
        ManifestClass c;
        c.spec.class_id = get_req<int>(jc, "class_id", "manifest class");
        c.spec.joints = m.joints;
        c.spec.active_joints = get_req<std::vector<int>>(jc, "active_joints", "manifest class");
        if (jc.contains("base_pose")) {
            for (const json& p : jc["base_pose"]) {
                if (!p.is_array() || p.size() != 3) throw DataError("SchemaError", "base_pose entry is not [x,y,z]");
                c.spec.base_pose.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
            }
        } else {
            if (m.joints != 25)
                throw DataError("SchemaError", "default base pose only exists for 25 joints");
            c.spec.base_pose = default_base_pose();
        }
        c.spec.motion.assign(static_cast<size_t>(m.joints), JointMotion{});
        for (const json& jm : require(jc, "motion", "manifest class")) {
            check_keys(jm, {"joint", "amplitude", "frequency", "phase", "axis"}, "motion entry");
            int joint = get_req<int>(jm, "joint", "motion entry");
            if (joint < 1 || joint > m.joints) throw DataError("SchemaError", "motion joint index outside [1, X]");
            JointMotion mo;
            mo.amplitude = get_or(jm, "amplitude", 0.0);
            mo.frequency = get_or(jm, "frequency", 0.0);
            mo.phase = get_or(jm, "phase", 0.0);
            if (jm.contains("axis")) {
                const json& ax = jm["axis"];
                if (!ax.is_array() || ax.size() != 3) throw DataError("SchemaError", "axis must be [x,y,z]");
                mo.axis = {ax[0].get<double>(), ax[1].get<double>(), ax[2].get<double>()};
            }
            c.spec.motion[static_cast<size_t>(joint - 1)] = mo;
        }
        for (const json& ji : require(jc, "instances", "manifest class")) {
            check_keys(ji, {"seed", "speed"}, "instance");
            InstanceSpec s;
            s.seed = get_req<std::uint64_t>(ji, "seed", "instance");
            s.speed = get_or(ji, "speed", 1.0);
            c.instances.push_back(s);
        }
        c.spec.validate();
        for (const ManifestClass& prev : m.classes)
            if (prev.spec.class_id == c.spec.class_id)
                throw DataError("SchemaError",
                                "duplicate class_id " + std::to_string(c.spec.class_id) + " in manifest");
        m.classes.push_back(std::move(c));
    }
    return m;
}

// Randomized but seeded benchmark manifest: every class animates a few limb
// groups with its own amplitudes, frequencies and phases, giving classes
// that are separable yet share the skeleton.
inline Manifest make_benchmark_manifest(int n_classes, int instances_per_class, int frames,
                                        double noise_sigma, std::uint64_t seed) {
    static const std::vector<std::vector<int>> kGroups = {
        {5, 6, 7, 8, 22, 23},    // left arm
        {9, 10, 11, 12, 24, 25}, // right arm
        {13, 14, 15, 16},        // left leg
        {17, 18, 19, 20},        // right leg
        {3, 4},                  // head
        {1, 2, 21},              // torso
    };
    Manifest m;
    m.frames = frames;
    m.noise_sigma = noise_sigma;
    for (int c = 0; c < n_classes; ++c) {
        std::mt19937_64 gen = rng::engine(rng::derive(seed, "class", static_cast<std::uint64_t>(c)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        ManifestClass mc;
        mc.spec.class_id = c + 1;
        mc.spec.joints = m.joints;
        mc.spec.base_pose = default_base_pose();
        mc.spec.motion.assign(static_cast<size_t>(m.joints), JointMotion{});

        int n_groups = 2 + static_cast<int>(unit(gen) * 2.0); // 2..3 limb groups
        std::vector<int> group_ids(kGroups.size());
        std::iota(group_ids.begin(), group_ids.end(), 0);
        std::shuffle(group_ids.begin(), group_ids.end(), gen);
        for (int g = 0; g < n_groups; ++g) {
            for (int joint : kGroups[static_cast<size_t>(group_ids[static_cast<size_t>(g)])]) {
                JointMotion mo;
                mo.amplitude = 0.15 + 0.30 * unit(gen);
                mo.frequency = 0.40 + 1.20 * unit(gen);
                mo.phase = 2.0 * kPi * unit(gen);
                mo.axis = {2.0 * unit(gen) - 1.0, 2.0 * unit(gen) - 1.0, 2.0 * unit(gen) - 1.0};
                double nmax = std::max({std::abs(mo.axis.x), std::abs(mo.axis.y), std::abs(mo.axis.z)});
                if (nmax < 0.25) mo.axis = {1.0, 0.0, 0.0};
                mc.spec.motion[static_cast<size_t>(joint - 1)] = mo;
                mc.spec.active_joints.push_back(joint);
            }
        }
        std::sort(mc.spec.active_joints.begin(), mc.spec.active_joints.end());
        for (int i = 0; i < instances_per_class; ++i)
            mc.instances.push_back(InstanceSpec{
                rng::derive(seed, "instance", static_cast<std::uint64_t>(c) * 100000ull + static_cast<std::uint64_t>(i)),
                1.0});
        mc.spec.validate();
        m.classes.push_back(std::move(mc));
    }
    return m;
}

// Same classes, fresh instance seeds, speeds cycling through the given list.
// Used to build speed-perturbed query pools.
inline Manifest with_instance_speeds(const Manifest& base, const std::vector<double>& speeds,
                                     int instances_per_class, std::uint64_t seed_salt) {
    if (speeds.empty()) throw ShapeError("InvalidSpeed", "speed list is empty");
    Manifest m = base;
    for (size_t c = 0; c < m.classes.size(); ++c) {
        m.classes[c].instances.clear();
        for (int i = 0; i < instances_per_class; ++i)
            m.classes[c].instances.push_back(InstanceSpec{
                rng::derive(seed_salt, "perturbed", c * 100000ull + static_cast<std::uint64_t>(i)),
                speeds[static_cast<size_t>(i) % speeds.size()]});
    }
    return m;
}

} // namespace sigshot
