// sigshot command-line tool: synthetic data generation, skeleton-to-image
// transforms, episodic training, evaluation, parameter sweeps and pair
// inspection.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sigshot/runner.hpp"

namespace fs = std::filesystem;
using namespace sigshot;

namespace {

run::Resolution parse_resolution(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos) x = s.find('X');
    if (x == std::string::npos) throw UsageError("BadResolution", "--res expects HxW, e.g. 192x192");
    try {
        run::Resolution r;
        r.height = std::stoi(s.substr(0, x));
        r.width = std::stoi(s.substr(x + 1));
        if (r.height < 1 || r.width < 1) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw UsageError("BadResolution", "--res expects HxW, e.g. 192x192");
    }
}

std::vector<double> parse_values(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        if (cur.empty()) continue;
        try {
            out.push_back(std::stod(cur));
        } catch (const std::exception&) {
            throw UsageError("BadSweepValues", "cannot parse value \"" + cur + "\"");
        }
    }
    if (out.empty()) throw UsageError("BadSweepValues", "--values is empty");
    return out;
}

std::vector<std::string> collect_inputs(const std::string& input) {
    if (fs::is_directory(input)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(input))
            if (entry.is_regular_file() && entry.path().extension() == ".skeleton")
                files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("IoError", "no .skeleton files in " + input);
        return files;
    }
    if (!fs::exists(input)) throw DataError("IoError", "no such input: " + input);
    return {input};
}

run::RunConfig load_config_with_seed(const std::string& path, std::optional<std::uint64_t> seed) {
    run::RunConfig cfg = run::load_run_config(path);
    if (seed) {
        cfg.seed = *seed;
        cfg.train.seed = *seed;
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"signal-image one-shot action recognition toolkit"};
    app.require_subcommand(1);

    std::string manifest_path, out_path, config_path, checkpoint_path, input_path;
    std::string feature = "position", res_str, param_str, values_str;
    std::string support_file, query_file;
    int episodes = 0;
    std::optional<std::uint64_t> seed_override;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { seed_override = s; }, "Override the config seed");
    };

    CLI::App* synth = app.add_subcommand("synth", "Materialize a synthetic dataset from a manifest");
    synth->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    synth->add_option("--out", out_path, "Output dataset directory")->required();

    CLI::App* transform = app.add_subcommand("transform", "Write signal images for skeleton files");
    transform->add_option("--input", input_path, "Skeleton file or directory")->required();
    transform->add_option("--feature", feature, "position|orientation|fused");
    transform->add_option("--res", res_str, "Target resolution HxW (optional)");
    transform->add_option("--out", out_path, "Output directory")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "Train from a run config");
    train_cmd->add_option("--config", config_path, "Run config JSON")->required();
    train_cmd->add_option("--out", out_path, "Output directory")->required();
    add_seed(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--config", config_path, "Run config JSON")->required();
    eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint JSON")->required();
    eval_cmd->add_option("--episodes", episodes, "Episode count (default: config)");
    eval_cmd->add_option("--out", out_path, "Report JSON path")->required();
    add_seed(eval_cmd);

    CLI::App* sweep = app.add_subcommand("sweep", "Evaluate across a parameter grid");
    sweep->add_option("--config", config_path, "Run config JSON")->required();
    sweep->add_option("--param", param_str, "alpha|resolution|lambda")->required();
    sweep->add_option("--values", values_str, "Comma-separated values")->required();
    sweep->add_option("--out", out_path, "Output CSV")->required();
    add_seed(sweep);

    CLI::App* inspect = app.add_subcommand("inspect", "Export attention and DTW artifacts for a pair");
    inspect->add_option("--checkpoint", checkpoint_path, "Checkpoint JSON")->required();
    inspect->add_option("--support", support_file, "Support skeleton file")->required();
    inspect->add_option("--query", query_file, "Query skeleton file")->required();
    inspect->add_option("--out", out_path, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            run::cmd_synth(manifest_path, out_path);
            std::printf("dataset written to %s\n", out_path.c_str());
        } else if (transform->parsed()) {
            std::optional<run::Resolution> res;
            if (!res_str.empty()) res = parse_resolution(res_str);
            auto written = run::cmd_transform(collect_inputs(input_path), image_kind_from_string(feature),
                                              res, out_path);
            std::printf("wrote %zu image(s) to %s\n", written.size(), out_path.c_str());
        } else if (train_cmd->parsed()) {
            run::RunConfig cfg = load_config_with_seed(config_path, seed_override);
            run::TrainOutputs out = run::cmd_train(cfg, out_path);
            std::printf("trained %zu iteration rows; history: %s\n", out.result.history.size(),
                        out.history_path.c_str());
            std::printf("checkpoints: %s, %s\n", out.final_checkpoint.c_str(), out.best_checkpoint.c_str());
        } else if (eval_cmd->parsed()) {
            run::RunConfig cfg = load_config_with_seed(config_path, seed_override);
            EvalReport rep = run::cmd_eval(cfg, checkpoint_path, episodes, out_path);
            std::printf("accuracy %.4f +/- %.4f over %d episodes\n", rep.accuracy, rep.ci95, rep.episodes);
        } else if (sweep->parsed()) {
            run::SweepParam param = run::sweep_param_from_string(param_str);
            std::vector<double> values = parse_values(values_str);
            run::RunConfig cfg = load_config_with_seed(config_path, seed_override);
            auto rows = run::cmd_sweep(cfg, param, values, out_path);
            for (const auto& r : rows) std::printf("%g,%.4f,%.4f\n", r.value, r.accuracy, r.ci95);
        } else if (inspect->parsed()) {
            run::cmd_inspect(checkpoint_path, support_file, query_file, out_path);
            std::printf("inspection artifacts written to %s\n", out_path.c_str());
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
