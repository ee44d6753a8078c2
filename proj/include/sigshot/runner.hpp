#pragma once

// Run configuration and the command implementations behind the CLI.
//
// A run config is a single JSON document; unknown keys are rejected
// everywhere so misspelled options cannot silently revert to defaults.
// All randomness derives from the one config seed through named sub-streams
// ("init", "episodes", "eval-episode", ...), so data generation, training
// and evaluation are independently reproducible.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sigshot/common.hpp"
#include "sigshot/dataset.hpp"
#include "sigshot/episodic.hpp"
#include "sigshot/jsonutil.hpp"

namespace sigshot::run {

struct Resolution {
    int height = 32;
    int width = 32;
};

struct RunConfig {
    std::uint64_t seed = 7;

    std::string dataset_dir;
    std::vector<int> train_classes;
    std::vector<int> val_classes;
    std::vector<int> test_classes;
    int auto_split_train = 0; // used when explicit lists are absent
    int auto_split_val = 0;
    int auto_split_test = 0;

    Resolution resolution;
    int enc_hidden = 32;
    int enc_feature_dim = 16;
    bool use_csa = true;
    bool use_dtw = true;
    bool tie_csa = false;
    double gamma = 0.1;
    int tau = 1;
    FusionMode fusion_mode = FusionMode::position_only;
    double alpha = 1.0;

    TrainConfig train;

    int eval_episodes = 500;
    std::vector<double> query_speeds;      // empty: queries from the same pool
    int query_instances_per_class = 10;    // perturbed pool size per class
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"version", "seed", "data", "model", "train", "episode", "eval"}, "config");
    RunConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", 7);

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, {"dataset_dir", "train_classes", "val_classes", "test_classes", "auto_split"}, "data");
        c.dataset_dir = get_or<std::string>(d, "dataset_dir", "");
        c.train_classes = get_or<std::vector<int>>(d, "train_classes", {});
        c.val_classes = get_or<std::vector<int>>(d, "val_classes", {});
        c.test_classes = get_or<std::vector<int>>(d, "test_classes", {});
        if (d.contains("auto_split")) {
            const json& a = d["auto_split"];
            check_keys(a, {"train", "val", "test"}, "auto_split");
            c.auto_split_train = get_or(a, "train", 0);
            c.auto_split_val = get_or(a, "val", 0);
            c.auto_split_test = get_or(a, "test", 0);
        }
    }

    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, {"resolution", "encoder", "use_csa", "use_dtw", "tie_csa", "gamma", "tau", "fusion"},
                   "model");
        if (m.contains("resolution")) {
            const json& r = m["resolution"];
            check_keys(r, {"height", "width"}, "resolution");
            c.resolution.height = get_or(r, "height", 32);
            c.resolution.width = get_or(r, "width", 32);
        }
        if (m.contains("encoder")) {
            const json& e = m["encoder"];
            check_keys(e, {"hidden", "feature_dim"}, "encoder");
            c.enc_hidden = get_or(e, "hidden", 32);
            c.enc_feature_dim = get_or(e, "feature_dim", 16);
        }
        c.use_csa = get_or(m, "use_csa", true);
        c.use_dtw = get_or(m, "use_dtw", true);
        c.tie_csa = get_or(m, "tie_csa", false);
        c.gamma = get_or(m, "gamma", 0.1);
        c.tau = get_or(m, "tau", 1);
        if (m.contains("fusion")) {
            const json& f = m["fusion"];
            check_keys(f, {"mode", "alpha"}, "fusion");
            c.fusion_mode = fusion_mode_from_string(get_or<std::string>(f, "mode", "position_only"));
            c.alpha = get_or(f, "alpha", 1.0);
        }
    }

    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t,
                   {"learning_rate", "decay_factor", "decay_interval", "lambda", "iterations",
                    "val_episodes", "val_every", "batch_size", "adam"},
                   "train");
        c.train.learning_rate = get_or(t, "learning_rate", 0.001);
        c.train.decay_factor = get_or(t, "decay_factor", 0.5);
        c.train.decay_interval = get_or(t, "decay_interval", 200);
        c.train.lambda = get_or(t, "lambda", 0.1);
        c.train.iterations = get_or(t, "iterations", 1000);
        c.train.val_episodes = get_or(t, "val_episodes", 500);
        c.train.val_every = get_or(t, "val_every", 200);
        c.train.batch_size = get_or(t, "batch_size", 1);
        if (t.contains("adam")) {
            const json& a = t["adam"];
            check_keys(a, {"beta1", "beta2", "epsilon"}, "adam");
            c.train.adam_beta1 = get_or(a, "beta1", 0.9);
            c.train.adam_beta2 = get_or(a, "beta2", 0.999);
            c.train.adam_eps = get_or(a, "epsilon", 1e-8);
        }
    }

    if (j.contains("episode")) {
        const json& e = j["episode"];
        check_keys(e, {"way", "shot", "queries"}, "episode");
        c.train.way = get_or(e, "way", 5);
        c.train.shot = get_or(e, "shot", 1);
        c.train.queries = get_or(e, "queries", 1);
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, {"episodes", "query_speeds", "query_instances_per_class"}, "eval");
        c.eval_episodes = get_or(e, "episodes", 500);
        c.query_speeds = get_or<std::vector<double>>(e, "query_speeds", {});
        c.query_instances_per_class = get_or(e, "query_instances_per_class", 10);
    }

    c.train.seed = c.seed;
    c.train.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(jsonutil::load_json_file(path));
}

// Explicit class lists win; otherwise auto-split takes the first
// train/val/test counts of the sorted class ids.
inline void resolve_splits(RunConfig& c, const Dataset& ds) {
    if (!c.train_classes.empty() || !c.test_classes.empty()) {
        if (c.train_classes.empty()) throw DataError("SchemaError", "test classes given without train classes");
        return;
    }
    int total = c.auto_split_train + c.auto_split_val + c.auto_split_test;
    if (total == 0) throw DataError("SchemaError", "config names no class split");
    if (total > static_cast<int>(ds.class_ids.size()))
        throw DataError("SchemaError", "auto_split wants more classes than the dataset has");
    auto it = ds.class_ids.begin();
    c.train_classes.assign(it, it + c.auto_split_train);
    it += c.auto_split_train;
    c.val_classes.assign(it, it + c.auto_split_val);
    it += c.auto_split_val;
    c.test_classes.assign(it, it + c.auto_split_test);
}

// ----------------------------------------------------------- model assembly

inline StreamModel make_stream(const RunConfig& c, ImageKind kind, std::uint64_t init_salt) {
    StreamModel s;
    s.encoder = init_encoder(rng::derive(c.seed, "init-encoder", init_salt), c.resolution.height,
                             c.enc_hidden, c.enc_feature_dim);
    s.csa = init_csa(rng::derive(c.seed, "init-csa", init_salt), c.enc_feature_dim);
    s.use_csa = c.use_csa;
    s.use_dtw = c.use_dtw;
    s.tie_csa = c.tie_csa;
    s.gamma = c.gamma;
    s.tau = c.tau;
    s.kind = kind;
    s.img_width = c.resolution.width;
    return s;
}

inline FusionModel make_fusion_model(const RunConfig& c) {
    FusionModel m;
    m.mode = c.fusion_mode;
    m.alpha = c.alpha;
    switch (c.fusion_mode) {
    case FusionMode::position_only: m.position = make_stream(c, ImageKind::position, 0); break;
    case FusionMode::orientation_only: m.position = make_stream(c, ImageKind::orientation, 0); break;
    case FusionMode::early: m.position = make_stream(c, ImageKind::fused, 0); break;
    case FusionMode::late:
        m.position = make_stream(c, ImageKind::position, 0);
        m.orientation = make_stream(c, ImageKind::orientation, 1);
        break;
    }
    m.validate();
    return m;
}

// -------------------------------------------------------------- checkpoints

inline nlohmann::json stream_to_json(const StreamModel& s) {
    nlohmann::json j;
    j["encoder"] = encoder_to_json(s.encoder);
    j["csa"] = csa_to_json(s.csa);
    j["use_csa"] = s.use_csa;
    j["use_dtw"] = s.use_dtw;
    j["tie_csa"] = s.tie_csa;
    j["gamma"] = s.gamma;
    j["tau"] = s.tau;
    j["kind"] = to_string(s.kind);
    j["img_width"] = s.img_width;
    return j;
}

inline StreamModel stream_from_json(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"encoder", "csa", "use_csa", "use_dtw", "tie_csa", "gamma", "tau", "kind", "img_width"},
               "stream");
    StreamModel s;
    s.encoder = encoder_from_json(require(j, "encoder", "stream"));
    s.csa = csa_from_json(require(j, "csa", "stream"));
    s.use_csa = get_req<bool>(j, "use_csa", "stream");
    s.use_dtw = get_req<bool>(j, "use_dtw", "stream");
    s.tie_csa = get_or(j, "tie_csa", false);
    s.gamma = get_req<double>(j, "gamma", "stream");
    s.tau = get_req<int>(j, "tau", "stream");
    s.kind = image_kind_from_string(get_req<std::string>(j, "kind", "stream"));
    s.img_width = get_req<int>(j, "img_width", "stream");
    s.validate();
    return s;
}

inline nlohmann::json fusion_to_json(const FusionModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["fusion_mode"] = to_string(m.mode);
    j["alpha"] = m.alpha;
    j["position"] = stream_to_json(m.position);
    if (m.orientation) j["orientation"] = stream_to_json(*m.orientation);
    return j;
}

inline FusionModel fusion_from_json(const nlohmann::json& j) {
    using namespace jsonutil;
    check_keys(j, {"version", "fusion_mode", "alpha", "position", "orientation"}, "checkpoint");
    FusionModel m;
    m.mode = fusion_mode_from_string(get_req<std::string>(j, "fusion_mode", "checkpoint"));
    m.alpha = get_req<double>(j, "alpha", "checkpoint");
    m.position = stream_from_json(require(j, "position", "checkpoint"));
    if (j.contains("orientation")) m.orientation = stream_from_json(j["orientation"]);
    m.validate();
    return m;
}

inline void save_checkpoint(const FusionModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("IoError", "cannot write " + path);
    out << fusion_to_json(m).dump(2) << "\n";
}

inline FusionModel load_checkpoint(const std::string& path) {
    return fusion_from_json(jsonutil::load_json_file(path));
}

// ------------------------------------------------------------ prepared data

struct Prepared {
    Dataset dataset;
    std::vector<Matrix> position_columns;    // model.position's stream
    std::vector<Matrix> orientation_columns; // late mode only
    StreamColumns columns() const {
        StreamColumns c;
        c.position = &position_columns;
        if (!orientation_columns.empty()) c.orientation = &orientation_columns;
        return c;
    }
};

inline Prepared prepare(Dataset ds, const FusionModel& model) {
    Prepared p;
    BoneTopology topo = default_ntu_topology();
    p.position_columns = dataset_columns(ds, topo, model.position.kind, model.position.encoder.img_height,
                                         model.position.img_width);
    if (model.mode == FusionMode::late)
        p.orientation_columns = dataset_columns(ds, topo, model.orientation->kind,
                                                model.orientation->encoder.img_height,
                                                model.orientation->img_width);
    p.dataset = std::move(ds);
    return p;
}

// ----------------------------------------------------------------- commands

inline void cmd_synth(const std::string& manifest_path, const std::string& out_dir) {
    Manifest m = parse_manifest(jsonutil::load_json_file(manifest_path));
    write_dataset(Dataset::from_manifest(m), out_dir);
}

// One PPM per input sequence, named <id>_<feature>_<HxW>.ppm.
inline std::vector<std::string> cmd_transform(const std::vector<std::string>& inputs, ImageKind kind,
                                              std::optional<Resolution> res, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    BoneTopology topo = default_ntu_topology();
    std::vector<std::string> written;
    for (const std::string& input : inputs) {
        SkeletonSequence seq = load_ntu_skeleton(input);
        SignalImage img = [&] {
            switch (kind) {
            case ImageKind::position: return position_image(seq);
            case ImageKind::orientation: return orientation_image(seq, topo);
            case ImageKind::fused: return stack_images(position_image(seq), orientation_image(seq, topo));
            }
            throw ShapeError("ShapeMismatch", "unknown feature");
        }();
        if (res) img = resize_bilinear(img, res->height, res->width);
        std::ostringstream name;
        name << fs::path(input).stem().string() << "_" << to_string(kind) << "_" << img.height << "x"
             << img.width << ".ppm";
        std::string out_path = (fs::path(out_dir) / name.str()).string();
        save_ppm(img, out_path, fs::path(input).filename().string());
        written.push_back(out_path);
    }
    return written;
}

inline void write_history_csv(const std::vector<HistoryRow>& history, std::ostream& out) {
    out << "stream,iteration,loss,lr,running_accuracy\n";
    char buf[160];
    for (const HistoryRow& r : history) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%.17g\n", r.stream.c_str(), r.iteration, r.loss,
                      r.lr, r.running_accuracy);
        out << buf;
    }
}

struct TrainOutputs {
    TrainResult result;
    std::string history_path;
    std::string final_checkpoint;
    std::string best_checkpoint;
};

inline TrainOutputs cmd_train(RunConfig cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (cfg.dataset_dir.empty()) throw DataError("SchemaError", "config has no dataset_dir");
    Dataset ds = load_dataset(cfg.dataset_dir);
    resolve_splits(cfg, ds);
    if (cfg.train_classes.empty()) throw DataError("SchemaError", "no training classes configured");

    FusionModel model = make_fusion_model(cfg);
    Prepared prep = prepare(std::move(ds), model);
    TrainResult res = train(prep.dataset, cfg.train_classes, cfg.val_classes, model, cfg.train,
                            prep.columns());

    fs::create_directories(out_dir);
    TrainOutputs out;
    out.history_path = (fs::path(out_dir) / "history.csv").string();
    std::ofstream hist(out.history_path, std::ios::binary);
    if (!hist) throw DataError("IoError", "cannot write " + out.history_path);
    write_history_csv(res.history, hist);
    hist.close();
    out.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.json").string();
    out.best_checkpoint = (fs::path(out_dir) / "checkpoint_best.json").string();
    save_checkpoint(res.model, out.final_checkpoint);
    save_checkpoint(res.best_model, out.best_checkpoint);
    out.result = std::move(res);
    return out;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["version"] = 1;
    j["episodes"] = rep.episodes;
    j["way"] = rep.way;
    j["shot"] = rep.shot;
    j["queries_per_class"] = rep.queries;
    j["accuracy"] = rep.accuracy;
    j["ci95"] = rep.ci95;
    nlohmann::json conf = nlohmann::json::object();
    for (const auto& [truth, row] : rep.confusion) {
        nlohmann::json jrow = nlohmann::json::object();
        for (const auto& [pred, count] : row) jrow[std::to_string(pred)] = count;
        conf[std::to_string(truth)] = jrow;
    }
    j["confusion"] = conf;
    return j;
}

inline EvalReport run_eval(const RunConfig& cfg, const FusionModel& model, int episodes) {
    Dataset ds = load_dataset(cfg.dataset_dir);
    RunConfig rc = cfg;
    resolve_splits(rc, ds);
    if (rc.test_classes.empty()) throw DataError("SchemaError", "no test classes configured");
    Prepared support = prepare(std::move(ds), model);

    std::optional<Prepared> query;
    if (!rc.query_speeds.empty()) {
        Manifest qm = with_instance_speeds(support.dataset.manifest, rc.query_speeds,
                                           rc.query_instances_per_class, rng::derive(rc.seed, "query-pool"));
        query = prepare(Dataset::from_manifest(qm), model);
    }

    StreamColumns sdata = support.columns();
    if (query) {
        StreamColumns qdata = query->columns();
        return evaluate(support.dataset, rc.test_classes, model, sdata, episodes, rc.train.way,
                        rc.train.shot, rc.train.queries, rng::derive(rc.seed, "eval"), &query->dataset,
                        &qdata);
    }
    return evaluate(support.dataset, rc.test_classes, model, sdata, episodes, rc.train.way, rc.train.shot,
                    rc.train.queries, rng::derive(rc.seed, "eval"));
}

inline EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path, int episodes,
                           const std::string& report_path) {
    FusionModel model = load_checkpoint(checkpoint_path);
    EvalReport rep = run_eval(cfg, model, episodes > 0 ? episodes : cfg.eval_episodes);
    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::binary);
        if (!out) throw DataError("IoError", "cannot write " + report_path);
        out << report_to_json(rep).dump(2) << "\n";
    }
    return rep;
}

// sweep: one CSV row per value. alpha varies only the fusion weight, so the
// model trains once; resolution and lambda retrain per value.
enum class SweepParam { alpha, resolution, lambda };

inline SweepParam sweep_param_from_string(const std::string& s) {
    if (s == "alpha") return SweepParam::alpha;
    if (s == "resolution") return SweepParam::resolution;
    if (s == "lambda") return SweepParam::lambda;
    throw UsageError("BadSweepParam", "sweep parameter must be alpha, resolution or lambda");
}

struct SweepRow {
    double value = 0.0;
    double accuracy = 0.0;
    double ci95 = 0.0;
};

inline std::vector<SweepRow> cmd_sweep(const RunConfig& base, SweepParam param,
                                       const std::vector<double>& values, const std::string& out_csv) {
    if (values.empty()) throw UsageError("BadSweepValues", "sweep needs at least one value");
    std::vector<SweepRow> rows;

    if (param == SweepParam::alpha) {
        if (base.fusion_mode != FusionMode::late)
            throw UsageError("BadSweepParam", "alpha sweep requires late fusion");
        Dataset ds = load_dataset(base.dataset_dir);
        RunConfig cfg = base;
        resolve_splits(cfg, ds);
        FusionModel model = make_fusion_model(cfg);
        Prepared prep = prepare(std::move(ds), model);
        TrainResult tr = train(prep.dataset, cfg.train_classes, cfg.val_classes, model, cfg.train,
                               prep.columns());
        for (double v : values) {
            FusionModel m = tr.model;
            m.alpha = v;
            StreamColumns sdata = prep.columns();
            EvalReport rep = evaluate(prep.dataset, cfg.test_classes, m, sdata, cfg.eval_episodes,
                                      cfg.train.way, cfg.train.shot, cfg.train.queries,
                                      rng::derive(cfg.seed, "eval"));
            rows.push_back({v, rep.accuracy, rep.ci95});
        }
    } else {
        for (double v : values) {
            RunConfig cfg = base;
            if (param == SweepParam::resolution) {
                int r = static_cast<int>(v);
                if (r < 1 || static_cast<double>(r) != v)
                    throw UsageError("BadSweepValues", "resolution values must be positive integers");
                cfg.resolution.height = r;
                cfg.resolution.width = r;
            } else {
                cfg.train.lambda = v;
            }
            Dataset ds = load_dataset(cfg.dataset_dir);
            resolve_splits(cfg, ds);
            FusionModel model = make_fusion_model(cfg);
            Prepared prep = prepare(std::move(ds), model);
            TrainResult tr = train(prep.dataset, cfg.train_classes, cfg.val_classes, model, cfg.train,
                                   prep.columns());
            StreamColumns sdata = prep.columns();
            EvalReport rep = evaluate(prep.dataset, cfg.test_classes, tr.model, sdata, cfg.eval_episodes,
                                      cfg.train.way, cfg.train.shot, cfg.train.queries,
                                      rng::derive(cfg.seed, "eval"));
            rows.push_back({v, rep.accuracy, rep.ci95});
        }
    }

    if (!out_csv.empty()) {
        std::ofstream out(out_csv, std::ios::binary);
        if (!out) throw DataError("IoError", "cannot write " + out_csv);
        out << "value,accuracy,ci95\n";
        char buf[96];
        for (const SweepRow& r : rows) {
            std::snprintf(buf, sizeof(buf), "%g,%.17g,%.17g\n", r.value, r.accuracy, r.ci95);
            out << buf;
        }
    }
    return rows;
}

// Query-side attention matrix, cumulative DTW table and hard path for one
// support/query pair, written as CSV (plus a PGM heatmap of the attention).
inline void cmd_inspect(const std::string& checkpoint_path, const std::string& support_file,
                        const std::string& query_file, const std::string& out_dir) {
    namespace fs = std::filesystem;
    FusionModel model = load_checkpoint(checkpoint_path);
    const StreamModel& stream = model.position;
    BoneTopology topo = default_ntu_topology();

    auto columns_of = [&](const std::string& path) {
        SkeletonSequence seq = load_ntu_skeleton(path);
        return sequence_columns(seq, topo, stream.kind, stream.encoder.img_height, stream.img_width);
    };
    Matrix qcols = columns_of(query_file);
    Matrix pcols = columns_of(support_file);

    ad::Tape tape;
    StreamVars vars = stream_leaves(tape, stream, false);
    ad::Var rq = encode_columns(tape, qcols, vars.enc);
    ad::Var rp = encode_columns(tape, pcols, vars.enc);
    AttendedVars att = cross_attend_on_tape(tape, rq, rp, vars.csa);

    const Matrix& q_side = stream.use_csa ? tape.value(att.q_hat) : tape.value(rq);
    const Matrix& p_side = stream.use_csa ? tape.value(att.p_hat) : tape.value(rp);
    Matrix e = dtw::local_costs(q_side, p_side);
    dtw::WarpResult w = dtw::dtw(e, stream.tau, dtw::Mode::hard);

    fs::create_directories(out_dir);
    auto open = [&](const char* name) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
        if (!out) throw DataError("IoError", std::string("cannot write ") + name);
        return out;
    };
    {
        auto out = open("attention_query.csv");
        write_attention_csv(tape.value(att.attn_q), out);
    }
    {
        auto out = open("attention_query.pgm");
        write_attention_pgm(tape.value(att.attn_q), out);
    }
    {
        auto out = open("dtw_table.csv");
        dtw::write_table_csv(w.cumulative, out);
    }
    {
        auto out = open("dtw_path.csv");
        dtw::write_path_csv(w.path, out);
    }
}

} // namespace sigshot::run
