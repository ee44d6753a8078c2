#pragma once

// Synthetic dataset materialization and on-disk layout.
//
// A dataset directory holds one NTU-format skeleton file per instance plus
// an index.json embedding the generating manifest, so downstream stages can
// re-synthesize variants (e.g. speed-perturbed query pools) without the
// original command line.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "sigshot/common.hpp"
#include "sigshot/encoder.hpp"
#include "sigshot/jsonutil.hpp"
#include "sigshot/signal_image.hpp"
#include "sigshot/skeleton.hpp"
#include "sigshot/synth.hpp"

namespace sigshot {

struct Instance {
    SkeletonSequence seq;
    int class_id = 0;
    std::uint64_t seed = 0;
    double speed = 1.0;
    std::string file; // relative file name when materialized on disk
};

struct Dataset {
    Manifest manifest;
    std::vector<Instance> instances;
    std::map<int, std::vector<int>> by_class; // class_id -> instance indices
    std::vector<int> class_ids;               // sorted

    static Dataset from_manifest(const Manifest& m) {
        Dataset ds;
        ds.manifest = m;
        int file_idx = 0;
        for (const ManifestClass& c : m.classes) {
            for (const InstanceSpec& s : c.instances) {
                Instance inst;
                inst.seq = synth_action(c.spec, m.frames, s.speed, m.noise_sigma, s.seed);
                inst.class_id = c.spec.class_id;
                inst.seed = s.seed;
                inst.speed = s.speed;
                char buf[64];
                std::snprintf(buf, sizeof(buf), "c%03d_i%04d.skeleton", c.spec.class_id, file_idx++);
                inst.file = buf;
                ds.instances.push_back(std::move(inst));
            }
            ds.class_ids.push_back(c.spec.class_id);
        }
        std::sort(ds.class_ids.begin(), ds.class_ids.end());
        for (size_t i = 0; i < ds.instances.size(); ++i)
            ds.by_class[ds.instances[i].class_id].push_back(static_cast<int>(i));
        return ds;
    }

    int instances_in_class(int class_id) const {
        auto it = by_class.find(class_id);
        return it == by_class.end() ? 0 : static_cast<int>(it->second.size());
    }
};

// Writes skeleton files plus index.json; byte-identical across reruns of the
// same manifest.
inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json index;
    index["version"] = 1;
    index["manifest"] = manifest_to_json(ds.manifest);
    index["instances"] = nlohmann::json::array();
    for (const Instance& inst : ds.instances) {
        save_ntu_skeleton(inst.seq, (fs::path(dir) / inst.file).string());
        index["instances"].push_back({{"file", inst.file},
                                      {"class_id", inst.class_id},
                                      {"seed", inst.seed},
                                      {"speed", inst.speed}});
    }
    std::ofstream out(fs::path(dir) / "index.json", std::ios::binary);
    if (!out) throw DataError("IoError", "cannot write index.json in " + dir);
    out << index.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    using namespace jsonutil;
    nlohmann::json index = load_json_file((fs::path(dir) / "index.json").string());
    check_keys(index, {"version", "manifest", "instances"}, "index.json");
    Dataset ds;
    ds.manifest = parse_manifest(require(index, "manifest", "index.json"));
    for (const nlohmann::json& ji : require(index, "instances", "index.json")) {
        check_keys(ji, {"file", "class_id", "seed", "speed"}, "index instance");
        Instance inst;
        inst.file = get_req<std::string>(ji, "file", "index instance");
        inst.class_id = get_req<int>(ji, "class_id", "index instance");
        inst.seed = get_req<std::uint64_t>(ji, "seed", "index instance");
        inst.speed = get_or(ji, "speed", 1.0);
        inst.seq = load_ntu_skeleton((fs::path(dir) / inst.file).string());
        inst.seq.label = inst.class_id;
        ds.instances.push_back(std::move(inst));
    }
    for (size_t i = 0; i < ds.instances.size(); ++i) {
        int c = ds.instances[i].class_id;
        if (ds.by_class.find(c) == ds.by_class.end()) ds.class_ids.push_back(c);
        ds.by_class[c].push_back(static_cast<int>(i));
    }
    std::sort(ds.class_ids.begin(), ds.class_ids.end());
    return ds;
}

// Transform one sequence into the encoder-input column matrix for a stream.
inline Matrix sequence_columns(const SkeletonSequence& seq, const BoneTopology& topo, ImageKind kind,
                               int out_h, int out_w) {
    SignalImage img = [&] {
        switch (kind) {
        case ImageKind::position: return resize_bilinear(position_image(seq), out_h, out_w);
        case ImageKind::orientation: return resize_bilinear(orientation_image(seq, topo), out_h, out_w);
        case ImageKind::fused: return early_fuse(position_image(seq), orientation_image(seq, topo), out_h, out_w);
        }
        throw ShapeError("ShapeMismatch", "unknown image kind");
    }();
    return image_columns(img);
}

// Encoder inputs for every instance of a dataset under one stream's settings.
inline std::vector<Matrix> dataset_columns(const Dataset& ds, const BoneTopology& topo, ImageKind kind,
                                           int out_h, int out_w) {
    std::vector<Matrix> out;
    out.reserve(ds.instances.size());
    for (const Instance& inst : ds.instances) out.push_back(sequence_columns(inst.seq, topo, kind, out_h, out_w));
    return out;
}

} // namespace sigshot
