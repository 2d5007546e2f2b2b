#include "refnet/optim.hpp"

#include <cmath>
#include <numbers>

#include "refnet/errors.hpp"

namespace refnet {

void adamw_step(std::span<double> params, std::span<const double> grads, std::span<double> first_moment,
                std::span<double> second_moment, std::size_t t, double lr, const AdamWConfig& config) {
    if (grads.size() != params.size() || first_moment.size() != params.size() || second_moment.size() != params.size()) {
        throw DimensionError("adamw_step: parameter, gradient and moment sizes differ");
    }
    if (t == 0) throw ConfigError("adamw_step: step counter starts at 1");
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * config.weight_decay * params[i];
        first_moment[i] = config.beta1 * first_moment[i] + (1.0 - config.beta1) * grads[i];
        second_moment[i] = config.beta2 * second_moment[i] + (1.0 - config.beta2) * grads[i] * grads[i];
        const double m_hat = first_moment[i] / c1;
        const double v_hat = second_moment[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
    if (grads.size() != params.size()) throw DimensionError("sgd_step: parameter and gradient sizes differ");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adamw"; }

OptimizerKind optimizer_from_string(std::string_view s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd or adamw)");
}

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Constant:
            return "constant";
        case ScheduleKind::LinearWarmupLinearDecay:
            return "linear";
        case ScheduleKind::CosineWarmupCosineDecay:
            return "cosine";
    }
    return "unknown";
}

ScheduleKind schedule_from_string(std::string_view s) {
    if (s == "constant") return ScheduleKind::Constant;
    if (s == "linear") return ScheduleKind::LinearWarmupLinearDecay;
    if (s == "cosine") return ScheduleKind::CosineWarmupCosineDecay;
    throw ConfigError("unknown schedule '" + std::string(s) + "' (expected constant, linear or cosine)");
}

double scheduled_lr(ScheduleKind kind, double base_lr, double warmup_fraction, std::size_t step, std::size_t total_steps) {
    if (kind == ScheduleKind::Constant) return base_lr;
    if (total_steps == 0) return base_lr;
    const auto warmup = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
    const double pi = std::numbers::pi;
    if (step <= warmup) {
        double p = static_cast<double>(step) / static_cast<double>(warmup);
        return kind == ScheduleKind::CosineWarmupCosineDecay ? base_lr * 0.5 * (1.0 - std::cos(pi * p)) : base_lr * p;
    }
    double p = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    if (p > 1.0) p = 1.0;
    return kind == ScheduleKind::CosineWarmupCosineDecay ? base_lr * 0.5 * (1.0 + std::cos(pi * p)) : base_lr * (1.0 - p);
}

Optimizer::Optimizer(OptimizerKind kind, AdamWConfig adamw, std::vector<std::string> names)
    : kind_(kind), adamw_(adamw), names_(std::move(names)) {}

void Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr) {
    ++t_;
    for (const auto& name : names_) {
        Tensor& p = params.at(name);
        auto it = grads.find(name);
        if (it == grads.end()) throw ConfigError("optimizer: no gradient for '" + name + "'");
        if (kind_ == OptimizerKind::Sgd) {
            sgd_step(p.data(), it->second.data(), lr);
            continue;
        }
        auto [mit, _m] = m_.try_emplace(name, Tensor::zeros(p.shape()));
        auto [vit, _v] = v_.try_emplace(name, Tensor::zeros(p.shape()));
        adamw_step(p.data(), it->second.data(), mit->second.data(), vit->second.data(), t_, lr, adamw_);
    }
}

namespace {
nlohmann::ordered_json moments_to_json(const std::map<std::string, Tensor>& m) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, t] : m) j[name] = {{"shape", t.shape()}, {"values", t.values()}};
    return j;
}

std::map<std::string, Tensor> moments_from_json(const nlohmann::ordered_json& j) {
    std::map<std::string, Tensor> m;
    for (const auto& [name, entry] : j.items()) {
        m.emplace(name, Tensor(entry.at("shape").get<std::vector<std::size_t>>(), entry.at("values").get<std::vector<double>>()));
    }
    return m;
}
}  // namespace

nlohmann::ordered_json Optimizer::to_json() const {
    return {{"kind", to_string(kind_)},
            {"beta1", adamw_.beta1},
            {"beta2", adamw_.beta2},
            {"epsilon", adamw_.epsilon},
            {"weight_decay", adamw_.weight_decay},
            {"names", names_},
            {"t", t_},
            {"m", moments_to_json(m_)},
            {"v", moments_to_json(v_)}};
}

Optimizer Optimizer::from_json(const nlohmann::ordered_json& j) {
    AdamWConfig cfg{j.at("beta1").get<double>(), j.at("beta2").get<double>(), j.at("epsilon").get<double>(),
                    j.at("weight_decay").get<double>()};
    Optimizer opt(optimizer_from_string(j.at("kind").get<std::string>()), cfg, j.at("names").get<std::vector<std::string>>());
    opt.t_ = j.at("t").get<std::size_t>();
    opt.m_ = moments_from_json(j.at("m"));
    opt.v_ = moments_from_json(j.at("v"));
    return opt;
}

}  // namespace refnet
