#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "refnet/errors.hpp"
#include "refnet/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kRuntime = 3 };

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("refnet"));
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"Multimodal fusion with refiner self-supervision: experiments and checks"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string log_level = "info";
    app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Overrides the config seed");
    app.add_option("--out", out_dir, "Output directory (REFNET_OUT takes precedence)");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    auto* generate = app.add_subcommand("generate", "Write the synthetic train/val/test splits as JSONL");
    auto* grad_check = app.add_subcommand("grad-check", "Finite-difference check of every op and the training loss");
    auto* theorem = app.add_subcommand("theorem", "Linear refiner sweep: identity and adjacency recovery");
    auto* train = app.add_subcommand("train", "Optional refiner pretraining, joint training and test evaluation");
    std::string resume;
    train->add_option("--resume", resume, "Continue from a saved train_state.json")->check(CLI::ExistingFile);
    std::optional<std::size_t> stop_at;
    train->add_option("--stop-at", stop_at, "Pause after this many updates (resumable with --resume)");
    auto* ablate = app.add_subcommand("ablate", "Label-fraction ablation over baseline, ReFNet and ReFNet_MS");
    auto* export_emb = app.add_subcommand("export-embeddings", "Write fused embeddings of a split as CSV");
    std::string checkpoint;
    std::string split = "test";
    export_emb->add_option("--checkpoint", checkpoint, "checkpoint.json written by train")->required()->check(CLI::ExistingFile);
    export_emb->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    spdlog::set_level(spdlog::level::from_str(log_level));
    if (const char* env = std::getenv("REFNET_OUT"); env != nullptr && *env != '\0') out_dir = env;

    try {
        using namespace refnet::experiment;
        ExperimentConfig config = config_path.empty() ? ExperimentConfig::from_json(nlohmann::json::object())
                                                      : ExperimentConfig::load(config_path);
        if (seed) config.seed = *seed;

        if (*generate) return cmd_generate(config, out_dir);
        if (*grad_check) return cmd_grad_check(config, out_dir);
        if (*theorem) return cmd_theorem(config, out_dir);
        if (*train) {
            return cmd_train(config, out_dir, resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume),
                             stop_at);
        }
        if (*ablate) return cmd_ablate(config, out_dir);
        if (*export_emb) return cmd_export_embeddings(config, checkpoint, split, out_dir);
    } catch (const refnet::ConfigError& e) {
        spdlog::error("config: {}", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRuntime;
    }
    return kUsage;
}
