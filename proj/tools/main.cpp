// latshield CLI: dataset / train / attack / swap / defend / eval / report /
// transfer, all driven by a flat key=value config with flag overrides.
#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "latshield/pipeline.hpp"

using namespace latshield;

int main(int argc, char** argv) {
    CLI::App app{"latent-space face-swap protection pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, stage;
    long long seed = -1;
    int threads = -1;
    app.add_option("--config", config_path, "flat key = value config file")->expected(1);
    app.add_option("--out", out_dir, "output directory (overrides output_dir)");
    app.add_option("--seed", seed, "master seed override");
    app.add_option("--threads", threads, "worker threads (1 = bitwise reproducible)");

    auto* sub_dataset = app.add_subcommand("dataset", "generate the synthetic face dataset");
    auto* sub_train = app.add_subcommand("train", "train one stage");
    sub_train->add_option("--stage", stage, "ae | id | diff")->required();
    auto* sub_attack = app.add_subcommand("attack", "craft protected source images");
    auto* sub_swap = app.add_subcommand("swap", "swap clean sources onto targets");
    auto* sub_defend = app.add_subcommand("defend", "apply the defense battery to protected images");
    auto* sub_eval = app.add_subcommand("eval", "measure every condition x defense pair");
    auto* sub_report = app.add_subcommand("report", "aggregate pair measurements into reports");
    auto* sub_transfer = app.add_subcommand("transfer", "evaluate the attack on an independent bundle");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough(); // global flags after the subcommand

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        if (!out_dir.empty()) cfg.set("output_dir", out_dir);
        if (seed >= 0) cfg.set("master_seed", std::to_string(seed));
        if (threads >= 0) cfg.set("threads", std::to_string(threads));

        if (sub_dataset->parsed()) cmd_dataset(cfg);
        if (sub_train->parsed()) cmd_train(cfg, stage);
        if (sub_attack->parsed()) cmd_attack(cfg);
        if (sub_swap->parsed()) cmd_swap(cfg);
        if (sub_defend->parsed()) cmd_defend(cfg);
        if (sub_eval->parsed()) cmd_eval(cfg);
        if (sub_report->parsed()) cmd_report(cfg);
        if (sub_transfer->parsed()) cmd_transfer(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "latshield: %s\n", e.what());
        return 1;
    }
    return 0;
}
