#include <cstdio>
#include <fstream>
#include <optional>
#include <iostream>

#include "CLI11.hpp"
#include "tempofuse/harness.hpp"

using namespace tempofuse;

namespace {

ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& out) {
    std::ifstream probe(path);
    if (!probe) throw IoError("cannot read config file " + path);
    KeyValueConfig kv = KeyValueConfig::load(path);
    if (seed) kv.set("seed", std::to_string(*seed));
    if (!out.empty()) kv.set("output.dir", out);
    return experiment_config_from(std::move(kv));
}

void print_summary(const ExperimentResult& result, const ExperimentConfig& cfg) {
    std::cout << comparison_markdown(result, cfg);
    if (result.training)
        std::cout << "training loss " << result.training->initial_loss << " -> " << result.training->final_loss << '\n';
    std::cout << "artifacts in " << cfg.output_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tempofuse: temporally consistent stereo via motion fusion"};
    app.require_subcommand(1);

    std::string config_path, out_dir, out_model, pred_dir, gt_dir;
    std::optional<std::uint64_t> seed;

    auto* run = app.add_subcommand("run", "run the configured suite and write artifacts");
    run->add_option("--config", config_path, "key/value config file")->required();
    run->add_option("--seed", seed, "override the scene seed");
    run->add_option("--out", out_dir, "override the output directory");

    auto* compare = app.add_subcommand("compare", "run every configured method and print the comparison table");
    compare->add_option("--config", config_path, "key/value config file")->required();

    auto* train = app.add_subcommand("train", "train the fusion weight model");
    train->add_option("--config", config_path, "key/value config file")->required();
    train->add_option("--out-model", out_model, "output model path")->required();

    auto* eval = app.add_subcommand("eval", "metrics on external PFM disparity and flow files");
    eval->add_option("--pred-dir", pred_dir, "directory with disp_NNNN.pfm")->required();
    eval->add_option("--gt-dir", gt_dir, "directory with disp_NNNN.pfm and flow_NNNN.pfm")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            const ExperimentConfig cfg = load(config_path, seed, out_dir);
            print_summary(run_and_write(cfg), cfg);
        } else if (compare->parsed()) {
            ExperimentConfig cfg = load(config_path, std::nullopt, "");
            if (cfg.methods.size() < 2) throw InvalidConfig("compare needs at least two fusion.methods");
            print_summary(run_and_write(cfg), cfg);
        } else if (train->parsed()) {
            const ExperimentConfig cfg = load(config_path, std::nullopt, "");
            const TrainingOutcome outcome = train_models(cfg, true);
            outcome.models.weights.save(out_model);
            std::cout << "loss " << outcome.train.initial_loss << " -> " << outcome.train.final_loss << '\n';
            std::cout << "model written to " << out_model << '\n';
        } else if (eval->parsed()) {
            std::cout << report_to_json(evaluate_directories(pred_dir, gt_dir), false) << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
