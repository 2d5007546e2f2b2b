#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "refnet/model.hpp"
#include "refnet/tensor.hpp"

namespace refnet {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// One decoupled-weight-decay Adam update at step t >= 1 (bias-corrected moments).
void adamw_step(std::span<double> params, std::span<const double> grads, std::span<double> first_moment,
                std::span<double> second_moment, std::size_t t, double lr, const AdamWConfig& config);

void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

enum class OptimizerKind { Sgd, AdamW };
enum class ScheduleKind { Constant, LinearWarmupLinearDecay, CosineWarmupCosineDecay };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view s);
std::string to_string(ScheduleKind kind);
ScheduleKind schedule_from_string(std::string_view s);

/// Learning rate for update `step` (1-based) out of `total_steps`. Warmup covers the
/// first floor(warmup_fraction * total) updates and reaches base_lr on its last one;
/// the decay phase reaches 0 on the final update.
double scheduled_lr(ScheduleKind kind, double base_lr, double warmup_fraction, std::size_t step, std::size_t total_steps);

/// Optimizer state for a named subset of a ParamStore.
class Optimizer {
   public:
    Optimizer() = default;
    Optimizer(OptimizerKind kind, AdamWConfig adamw, std::vector<std::string> names);

    /// Applies one update; `grads` holds one tensor per managed parameter name.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr);

    std::size_t steps_taken() const { return t_; }
    const std::vector<std::string>& names() const { return names_; }

    nlohmann::ordered_json to_json() const;
    static Optimizer from_json(const nlohmann::ordered_json& j);

   private:
    OptimizerKind kind_ = OptimizerKind::AdamW;
    AdamWConfig adamw_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    std::size_t t_ = 0;
};

}  // namespace refnet
