// Integration tests that drive the built sigshot binary end to end.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "sigshot/signal_image.hpp"
#include "sigshot/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = SIGSHOT_CLI_PATH;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sigshot_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (sub.empty() ? path : path / sub).string(); }
};

int run_cli(const std::string& args) {
    std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

void write_manifest(const std::string& path, int classes, int instances, int frames) {
    sigshot::Manifest m = sigshot::make_benchmark_manifest(classes, instances, frames, 0.01, 7);
    write_file(path, sigshot::manifest_to_json(m).dump(2));
}

json base_config(const std::string& dataset_dir) {
    json j;
    j["seed"] = 7;
    j["data"] = {{"dataset_dir", dataset_dir},
                 {"train_classes", {1, 2, 3}},
                 {"test_classes", {4, 5, 6}}};
    j["model"] = {{"resolution", {{"height", 8}, {"width", 8}}},
                  {"encoder", {{"hidden", 8}, {"feature_dim", 4}}},
                  {"fusion", {{"mode", "position_only"}}}};
    j["train"] = {{"iterations", 12}, {"val_every", 0}};
    j["episode"] = {{"way", 3}, {"shot", 1}, {"queries", 1}};
    j["eval"] = {{"episodes", 20}};
    return j;
}

} // namespace

TEST_CASE("synth writes a dataset and reruns byte-identically") {
    TempDir tmp("synth");
    write_manifest(tmp.str("manifest.json"), 3, 4, 10);

    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    REQUIRE(fs::exists(tmp.str("data/index.json")));
    int skeletons = 0;
    for (const auto& e : fs::directory_iterator(tmp.str("data")))
        if (e.path().extension() == ".skeleton") skeletons++;
    REQUIRE(skeletons == 12);

    std::string index_one = slurp(tmp.str("data/index.json"));
    std::string one_file;
    for (const auto& e : fs::directory_iterator(tmp.str("data")))
        if (e.path().extension() == ".skeleton") {
            one_file = e.path().filename().string();
            break;
        }
    std::string body_one = slurp(tmp.str("data/" + one_file));

    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data2")) == 0);
    REQUIRE(slurp(tmp.str("data2/index.json")) == index_one);
    REQUIRE(slurp(tmp.str("data2/" + one_file)) == body_one);
}

TEST_CASE("synth rejects a manifest with duplicate class ids") {
    TempDir tmp("synth_dup");
    sigshot::Manifest m = sigshot::make_benchmark_manifest(2, 2, 8, 0.01, 7);
    json j = sigshot::manifest_to_json(m);
    j["classes"][1]["class_id"] = j["classes"][0]["class_id"];
    write_file(tmp.str("manifest.json"), j.dump());
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 2);
}

TEST_CASE("transform emits ppm images at the requested resolution") {
    TempDir tmp("transform");
    write_manifest(tmp.str("manifest.json"), 1, 1, 20);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    std::string skeleton;
    for (const auto& e : fs::directory_iterator(tmp.str("data")))
        if (e.path().extension() == ".skeleton") skeleton = e.path().string();

    SECTION("orientation without resize keeps 24 x T") {
        REQUIRE(run_cli("transform --input " + skeleton + " --feature orientation --out " + tmp.str("img")) == 0);
        bool found = false;
        for (const auto& e : fs::directory_iterator(tmp.str("img"))) {
            sigshot::SignalImage img = sigshot::load_ppm(e.path().string());
            REQUIRE(img.height == 24);
            REQUIRE(img.width == 20);
            REQUIRE(img.kind == sigshot::ImageKind::orientation);
            found = true;
        }
        REQUIRE(found);
    }
    SECTION("fused at 192x192 and position at 32x32") {
        REQUIRE(run_cli("transform --input " + skeleton + " --feature fused --res 192x192 --out " +
                        tmp.str("img192")) == 0);
        for (const auto& e : fs::directory_iterator(tmp.str("img192"))) {
            sigshot::SignalImage img = sigshot::load_ppm(e.path().string());
            REQUIRE(img.height == 192);
            REQUIRE(img.width == 192);
        }
        REQUIRE(run_cli("transform --input " + skeleton + " --feature position --res 32x32 --out " +
                        tmp.str("img32")) == 0);
        for (const auto& e : fs::directory_iterator(tmp.str("img32"))) {
            sigshot::SignalImage img = sigshot::load_ppm(e.path().string());
            REQUIRE(img.height == 32);
            REQUIRE(img.width == 32);
        }
    }
    SECTION("parse errors carry exit code 2") {
        write_file(tmp.str("broken.skeleton"), "not-a-count\n");
        REQUIRE(run_cli("transform --input " + tmp.str("broken.skeleton") + " --out " + tmp.str("img")) == 2);
    }
}

TEST_CASE("train then eval produce history, checkpoints and a report") {
    TempDir tmp("train");
    write_manifest(tmp.str("manifest.json"), 6, 4, 12);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    write_file(tmp.str("config.json"), base_config(tmp.str("data")).dump(2));

    REQUIRE(run_cli("train --config " + tmp.str("config.json") + " --out " + tmp.str("run")) == 0);
    REQUIRE(fs::exists(tmp.str("run/history.csv")));
    REQUIRE(fs::exists(tmp.str("run/checkpoint_final.json")));
    REQUIRE(fs::exists(tmp.str("run/checkpoint_best.json")));

    std::string history = slurp(tmp.str("run/history.csv"));
    REQUIRE(history.rfind("stream,iteration,loss,lr,running_accuracy\n", 0) == 0);
    REQUIRE(std::count(history.begin(), history.end(), '\n') == 13); // header + 12 iterations

    REQUIRE(run_cli("eval --config " + tmp.str("config.json") + " --checkpoint " +
                    tmp.str("run/checkpoint_final.json") + " --episodes 25 --out " +
                    tmp.str("report.json")) == 0);
    json report = json::parse(slurp(tmp.str("report.json")));
    REQUIRE(report["episodes"] == 25);
    REQUIRE(report["accuracy"].is_number());
    REQUIRE(report["ci95"].is_number());
    REQUIRE(report["confusion"].is_object());

    SECTION("training twice is byte-identical") {
        REQUIRE(run_cli("train --config " + tmp.str("config.json") + " --out " + tmp.str("run2")) == 0);
        REQUIRE(slurp(tmp.str("run2/history.csv")) == history);
        REQUIRE(slurp(tmp.str("run2/checkpoint_final.json")) == slurp(tmp.str("run/checkpoint_final.json")));
    }

    SECTION("eval can draw queries from a speed-perturbed pool") {
        json cfg = base_config(tmp.str("data"));
        cfg["eval"] = {{"episodes", 15}, {"query_speeds", {0.5, 2.0}}, {"query_instances_per_class", 4}};
        write_file(tmp.str("config_speed.json"), cfg.dump());
        REQUIRE(run_cli("eval --config " + tmp.str("config_speed.json") + " --checkpoint " +
                        tmp.str("run/checkpoint_final.json") + " --out " + tmp.str("report_speed.json")) == 0);
        json report = json::parse(slurp(tmp.str("report_speed.json")));
        REQUIRE(report["episodes"] == 15);
    }
}

TEST_CASE("a diverging run exits with the numeric failure code") {
    TempDir tmp("diverge");
    write_manifest(tmp.str("manifest.json"), 4, 3, 10);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    json cfg = base_config(tmp.str("data"));
    cfg["data"].erase("train_classes");
    cfg["data"].erase("test_classes");
    cfg["data"]["auto_split"] = {{"train", 3}, {"test", 1}};
    cfg["train"]["learning_rate"] = 1e200;
    cfg["train"]["iterations"] = 6;
    write_file(tmp.str("config.json"), cfg.dump());
    REQUIRE(run_cli("train --config " + tmp.str("config.json") + " --out " + tmp.str("run")) == 3);
}

TEST_CASE("config schema violations exit with the data error code") {
    TempDir tmp("schema");
    write_manifest(tmp.str("manifest.json"), 4, 3, 10);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    json cfg = base_config(tmp.str("data"));
    cfg["model"]["unknown_option"] = true;
    write_file(tmp.str("config.json"), cfg.dump());
    REQUIRE(run_cli("train --config " + tmp.str("config.json") + " --out " + tmp.str("run")) == 2);
}

TEST_CASE("usage errors exit with code 1") {
    REQUIRE(run_cli("no-such-command") == 1);
    REQUIRE(run_cli("sweep --config missing.json --param bogus --values 1 --out x.csv") == 1);
}

TEST_CASE("every fusion mode trains and evaluates through the cli") {
    TempDir tmp("modes");
    write_manifest(tmp.str("manifest.json"), 6, 4, 12);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    int i = 0;
    for (const char* mode : {"orientation_only", "early", "late"}) {
        json cfg = base_config(tmp.str("data"));
        cfg["model"]["fusion"] = {{"mode", mode}, {"alpha", 1.0}};
        cfg["train"]["iterations"] = 6;
        cfg["train"]["batch_size"] = 2;
        std::string cfg_path = tmp.str("config" + std::to_string(i) + ".json");
        std::string run_dir = tmp.str("run" + std::to_string(i));
        write_file(cfg_path, cfg.dump());
        CAPTURE(mode);
        REQUIRE(run_cli("train --config " + cfg_path + " --out " + run_dir) == 0);
        REQUIRE(run_cli("eval --config " + cfg_path + " --checkpoint " + run_dir +
                        "/checkpoint_final.json --episodes 8 --out " + run_dir + "/report.json") == 0);
        json report = json::parse(slurp(run_dir + "/report.json"));
        REQUIRE(report["episodes"] == 8);
        ++i;
    }
}

TEST_CASE("alpha sweep evaluates a six-point grid from one trained model") {
    TempDir tmp("sweep_alpha");
    write_manifest(tmp.str("manifest.json"), 6, 4, 12);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    json cfg = base_config(tmp.str("data"));
    cfg["model"]["fusion"] = {{"mode", "late"}, {"alpha", 1.0}};
    cfg["train"]["iterations"] = 8;
    cfg["eval"]["episodes"] = 10;
    write_file(tmp.str("config.json"), cfg.dump());

    REQUIRE(run_cli("sweep --config " + tmp.str("config.json") +
                    " --param alpha --values 0,0.4,0.8,1.2,1.6,2.0 --out " + tmp.str("sweep.csv")) == 0);
    std::string csv = slurp(tmp.str("sweep.csv"));
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 7); // header + 6 rows
    REQUIRE(csv.rfind("value,accuracy,ci95\n", 0) == 0);
    REQUIRE(csv.find("\n0.4,") != std::string::npos);
    REQUIRE(csv.find("\n2,") != std::string::npos);

    // alpha sweeps need both streams
    json bad = base_config(tmp.str("data"));
    write_file(tmp.str("bad.json"), bad.dump());
    REQUIRE(run_cli("sweep --config " + tmp.str("bad.json") +
                    " --param alpha --values 0,1 --out " + tmp.str("bad.csv")) == 1);
}

TEST_CASE("inspect writes attention and alignment artifacts") {
    TempDir tmp("inspect");
    write_manifest(tmp.str("manifest.json"), 4, 4, 12);
    REQUIRE(run_cli("synth --manifest " + tmp.str("manifest.json") + " --out " + tmp.str("data")) == 0);
    write_file(tmp.str("config.json"), base_config(tmp.str("data")).dump());
    REQUIRE(run_cli("train --config " + tmp.str("config.json") + " --out " + tmp.str("run")) == 0);

    std::string skeleton;
    for (const auto& e : fs::directory_iterator(tmp.str("data")))
        if (e.path().extension() == ".skeleton") {
            skeleton = e.path().string();
            break;
        }

    REQUIRE(run_cli("inspect --checkpoint " + tmp.str("run/checkpoint_final.json") + " --support " +
                    skeleton + " --query " + skeleton + " --out " + tmp.str("ins")) == 0);

    // attention csv is m x m
    std::string csv = slurp(tmp.str("ins/attention_query.csv"));
    std::istringstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        REQUIRE(std::count(line.begin(), line.end(), ',') == 7);
        rows++;
    }
    REQUIRE(rows == 8);

    // identical support and query align on the diagonal
    std::string path_csv = slurp(tmp.str("ins/dtw_path.csv"));
    std::istringstream pin(path_csv);
    std::getline(pin, line);
    REQUIRE(line == "i,j");
    int step = 1;
    while (std::getline(pin, line)) {
        std::string expect = std::to_string(step) + "," + std::to_string(step);
        REQUIRE(line == expect);
        step++;
    }
    REQUIRE(step == 9);

    std::string pgm = slurp(tmp.str("ins/attention_query.pgm"));
    REQUIRE(pgm.substr(0, 3) == "P5\n");
    REQUIRE(pgm.find("8 8\n255\n") != std::string::npos);

    std::string table = slurp(tmp.str("ins/dtw_table.csv"));
    REQUIRE(std::count(table.begin(), table.end(), '\n') == 8);
}
