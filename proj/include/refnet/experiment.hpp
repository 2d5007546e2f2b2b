#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refnet/data.hpp"
#include "refnet/grad_check.hpp"
#include "refnet/losses.hpp"
#include "refnet/metrics.hpp"
#include "refnet/model.hpp"
#include "refnet/trainer.hpp"

namespace refnet::experiment {

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" or "jsonl"
    data::SyntheticSpec synthetic;
    std::string train_path;
    std::string val_path;
    std::string test_path;
    double label_fraction = 1.0;  // share of training labels visible to `train`
};

struct AblationConfig {
    std::vector<double> label_fractions{0.05, 0.10, 0.20};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<double> gamma;  // empty = loss.gamma, or 0.1 per modality when that is all zero
    double zeta = 0.1;
};

struct TheoremConfig {
    std::vector<std::size_t> modalities{2, 3, 5};
    std::vector<std::size_t> extra_k{0, 2};  // k = m + extra
    std::size_t instances = 20;
    std::size_t d = 6;
    double edge_probability = 0.5;
    std::vector<double> noise{0.0, 0.01};
    std::size_t gradient_steps = 2000;
    double gradient_lr = 0.1;
    bool whiten = true;       // cosine fit in whitened embedding coordinates
    bool line_search = true;  // Armijo backtracking instead of a fixed step
    double residual_tolerance = 1e-8;
    double inverse_tolerance = 1e-6;
    double cosine_ratio_tolerance = 1e-2;
};

struct GradCheckConfig {
    double step = 1e-5;
    double tolerance = 1e-5;
    double floor = 1e-3;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;  // input_dims and num_classes are filled in from the data
    LossConfig loss;
    TrainConfig train;
    AblationConfig ablation;
    TheoremConfig theorem;
    GradCheckConfig grad_check;

    /// Fully resolved config, echoed into every report.
    nlohmann::ordered_json to_json() const;
    /// Missing keys take defaults; unknown keys raise ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
};

/// Loads or generates the three splits and completes the model dimensions from them.
data::Splits load_data(ExperimentConfig& config);

struct RunResult {
    ParamStore params;  // best checkpoint by validation metric
    std::vector<StepLog> pretrain_log;
    std::vector<StepLog> train_log;
    TrainState state;
    metrics::EvalReport test;
    std::optional<double> silhouette;
};

/// Optional refiner pretraining on all training features, then joint training and a
/// test evaluation of the best checkpoint. `seed` drives initialisation and batch order.
/// `stop_at` pauses joint training after that many updates; the saved state can be resumed.
RunResult run_training(const ExperimentConfig& config, const data::Splits& splits, const LossConfig& loss,
                       std::uint64_t seed, const std::optional<TrainState>& resume = std::nullopt,
                       std::optional<std::size_t> stop_at = std::nullopt);

Tensor embed(const ModelConfig& model, const ParamStore& params, const ModalFeatureBatch& batch);
std::optional<double> embedding_silhouette(const Tensor& embeddings, const ModalFeatureBatch& batch);

struct TheoremReport {
    nlohmann::ordered_json json;
    bool pass = false;
};
TheoremReport run_theorem(const TheoremConfig& config, std::uint64_t seed);

struct AblationRow {
    double fraction = 0.0;
    std::string variant;
    std::uint64_t seed = 0;
    std::map<std::string, double> test;
    std::optional<double> silhouette;
};
std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const data::Splits& splits);

/// Command entry points. Each writes its artifacts into `out` and returns the process exit code.
int cmd_generate(ExperimentConfig config, const std::filesystem::path& out);
int cmd_grad_check(const ExperimentConfig& config, const std::filesystem::path& out);
int cmd_theorem(const ExperimentConfig& config, const std::filesystem::path& out);
int cmd_train(ExperimentConfig config, const std::filesystem::path& out,
              const std::optional<std::filesystem::path>& resume = std::nullopt,
              std::optional<std::size_t> stop_at = std::nullopt);
int cmd_ablate(ExperimentConfig config, const std::filesystem::path& out);
int cmd_export_embeddings(ExperimentConfig config, const std::filesystem::path& checkpoint, const std::string& split,
                          const std::filesystem::path& out);

/// Two-space indented JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace refnet::experiment
