#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refnet/batch.hpp"
#include "refnet/losses.hpp"
#include "refnet/model.hpp"
#include "refnet/optim.hpp"

namespace refnet {

struct TrainConfig {
    std::size_t max_epochs = 10;
    std::size_t max_updates = 0;  // 0 = max_epochs full passes
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    AdamWConfig adamw;
    double base_lr = 5e-5;
    ScheduleKind schedule = ScheduleKind::CosineWarmupCosineDecay;
    double warmup_fraction = 0.1;
    std::size_t eval_every = 0;  // 0 = once per epoch
    std::size_t patience = 10;
    std::string selection_metric;  // empty = task default
    std::uint64_t seed = 0;
    std::size_t pretrain_epochs = 0;
    double pretrain_lr = 0.0;  // 0 = base_lr

    void validate() const;
    std::size_t updates_for(std::size_t samples) const;
    std::size_t batches_per_epoch(std::size_t samples) const;
};

/// AUROC for binary tasks, micro-F1 for multi-label, accuracy for single-label.
std::string default_selection_metric(TaskKind task);

/// Selection metric of `params` on a fully labeled validation batch.
double selection_score(const ModelConfig& model, const ParamStore& params, const ModalFeatureBatch& val,
                       const std::string& metric);

struct StepLog {
    std::size_t step = 0;
    double total = 0.0;
    double downstream = 0.0;
    double refiner = 0.0;
    double ms = 0.0;
    double lr = 0.0;
};

struct EvalLog {
    std::size_t step = 0;
    double metric = 0.0;
};

struct TrainState {
    ParamStore params;
    Optimizer optimizer;
    std::size_t step = 0;
    bool has_best = false;
    double best_metric = 0.0;
    std::size_t best_step = 0;
    ParamStore best_params;
    std::size_t evals_without_improvement = 0;
    bool finished = false;
    std::uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
    static TrainState from_json(const nlohmann::ordered_json& j);
};

/// Joint training loop: fuse, refine, predict, combined loss, backward, scheduled optimizer
/// step, periodic validation with best-checkpoint tracking and patience-based stopping.
class Trainer {
   public:
    Trainer(ModelConfig model, TrainConfig config, LossConfig loss, ModalFeatureBatch train, ModalFeatureBatch val,
            ParamStore initial);
    /// Continues a run from a saved state.
    Trainer(ModelConfig model, TrainConfig config, LossConfig loss, ModalFeatureBatch train, ModalFeatureBatch val,
            TrainState resume);

    bool finished() const { return state_.finished; }
    /// One optimizer update, plus a validation pass when one is due.
    void step();
    /// Runs until finished, or until the step counter reaches `stop_at`.
    void run(std::optional<std::size_t> stop_at = std::nullopt);

    const TrainState& state() const { return state_; }
    const std::vector<StepLog>& log() const { return log_; }
    const std::vector<EvalLog>& evals() const { return evals_; }
    std::size_t total_updates() const { return total_; }
    std::size_t unsupervised_steps() const { return unsupervised_steps_; }

   private:
    std::vector<std::size_t> batch_rows(std::size_t step) const;
    void evaluate();

    ModelConfig model_;
    TrainConfig config_;
    LossConfig loss_;
    ModalFeatureBatch train_;
    ModalFeatureBatch val_;
    std::string metric_;
    std::size_t total_;
    TrainState state_;
    std::vector<StepLog> log_;
    std::vector<EvalLog> evals_;
    std::size_t unsupervised_steps_ = 0;
};

/// Refiner-only phase: minimises sum_i gamma_i C_i over all samples (labels ignored),
/// updating the fusion, decoder and target-map weights. The head is left untouched.
std::vector<StepLog> pretrain(ReFNetModel& model, const ModalFeatureBatch& data, const TrainConfig& config,
                              const LossConfig& loss);

/// Marks round(fraction * n) samples as labeled, drawn without replacement and
/// stratified by class so each class keeps at least one label when the budget allows.
ModalFeatureBatch mask_labels(const ModalFeatureBatch& data, double fraction, std::uint64_t seed);

}  // namespace refnet
