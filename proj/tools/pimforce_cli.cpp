#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pimforce/commands.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pimforce;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;

std::vector<std::string> split_names(const std::string& list) {
    std::vector<std::string> names;
    std::stringstream ss(list);
    for (std::string n; std::getline(ss, n, ',');)
        if (!n.empty()) names.push_back(n);
    return names;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pimforce: hand pressure estimation from sEMG and hand pose"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "pimforce 1.0.0");

    commands::SynthOptions sa;
    std::string postures;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic recording session");
    synth->add_option("--config", sa.config, "Synthesis config JSON")->check(CLI::ExistingFile);
    synth->add_option("--seed", sa.seed, "Random seed (overrides the config)");
    synth->add_option("--out", sa.out, "Output directory")->required();
    synth->add_option("--postures", postures, "Comma separated posture names");
    synth->add_option("--duration", sa.duration, "Seconds per posture segment");

    commands::PreprocessOptions pa;
    auto* pre = app.add_subcommand("preprocess", "Turn a session into a training dataset");
    pre->add_option("--in", pa.in, "Session directory")->required()->check(CLI::ExistingDirectory);
    pre->add_option("--out", pa.out, "Dataset directory")->required();
    pre->add_option("--config", pa.config, "Pipeline config JSON")->check(CLI::ExistingFile);
    pre->add_flag("--materialize", pa.materialize, "Write the dense heatmap tensor H");
    pre->add_option("--stride", pa.stride, "Window stride in sEMG samples");
    pre->add_option("--scaler-from", pa.scaler_from, "Reuse the scaler of this dataset directory");

    commands::TrainOptions ta;
    auto* tr = app.add_subcommand("train", "Train a model on a dataset");
    tr->add_option("--data", ta.data, "Dataset directory")->required();
    tr->add_option("--out", ta.out, "Checkpoint path")->required();
    tr->add_option("--config", ta.config, "Training config JSON")->check(CLI::ExistingFile);
    tr->add_option("--model", ta.model, "Model config JSON")->check(CLI::ExistingFile);
    tr->add_option("--preset", ta.preset, "Model preset (paper or desk)");
    tr->add_option("--seed", ta.seed, "Random seed (overrides the config)");
    tr->add_option("--epochs", ta.epochs, "Epochs (overrides the config)");
    tr->add_option("--lr", ta.lr, "Learning rate (overrides the config)");

    commands::EvalOptions ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--ckpt", ea.ckpt, "Checkpoint path")->required();
    ev->add_option("--out", ea.out, "Write the JSON report here");
    ev->add_flag("--teacher-forced", ea.teacher_forced, "Score the ground truth against itself");

    commands::InferOptions ia;
    auto* inf = app.add_subcommand("infer", "Per-window pressure from sEMG and pose streams");
    inf->add_option("--ckpt", ia.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
    inf->add_option("--emg", ia.emg, "sEMG CSV (timestamp + 8 channels)")->required();
    inf->add_option("--pose", ia.pose, "Pose CSV or JSON (20 angles or 63 joint coordinates)")->required();
    inf->add_option("--out", ia.out, "Output CSV")->required();
    inf->add_option("--config", ia.config, "Pipeline config JSON")->check(CLI::ExistingFile);
    auto* canon = inf->add_flag("--canonical", ia.canonical, "Joints are already canonical");
    inf->add_flag("--detector", ia.detector, "Joints come from a detector and are canonicalized")->excludes(canon);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }
    try {
        if (*synth) {
            sa.postures = split_names(postures);
            commands::synth(sa, &std::cerr);
        } else if (*pre) {
            commands::preprocess(pa, &std::cerr);
        } else if (*tr) {
            commands::train(ta, &std::cerr);
        } else if (*ev) {
            const auto report = commands::evaluate(ea);
            std::cout << report.to_json().dump(2) << "\n" << report.table();
        } else if (*inf) {
            commands::infer(ia, &std::cerr);
        } else {
            return kUsage;
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
}
