#include "refnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "refnet/errors.hpp"
#include "refnet/metrics.hpp"
#include "refnet/rng.hpp"

namespace refnet {

namespace {

constexpr std::uint64_t kPretrainStream = 1ULL << 32;

std::map<std::string, Tensor> collect_gradients(const ParamStore& params, const BoundParams& bound,
                                                const ad::GradientMap& grads, std::size_t step) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, value] : params.entries()) {
        const ad::Var& leaf = bound.at(name);
        Tensor g = grads.contains(leaf) ? grads[leaf] : Tensor::zeros(value.shape());
        if (!g.all_finite()) throw TrainingError("step " + std::to_string(step) + ": non-finite gradient for '" + name + "'");
        out.emplace(name, std::move(g));
    }
    return out;
}

std::vector<std::size_t> epoch_rows(std::uint64_t seed, std::uint64_t stream, std::size_t n, std::size_t batch_size,
                                    std::size_t position) {
    auto perm = Rng(derive_seed(seed, stream)).permutation(n);
    std::size_t begin = position * batch_size;
    std::size_t end = std::min(n, begin + batch_size);
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::string breakdown(const TrainLoss& l) {
    return "downstream=" + std::to_string(l.downstream) + " refiner=" + std::to_string(l.refiner) +
           " ms=" + std::to_string(l.ms);
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
    if (max_updates == 0 && max_epochs == 0) throw ConfigError("either max_epochs or max_updates must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (pretrain_lr < 0.0) throw ConfigError("pretrain_lr must be non-negative");
}

std::size_t TrainConfig::batches_per_epoch(std::size_t samples) const { return (samples + batch_size - 1) / batch_size; }

std::size_t TrainConfig::updates_for(std::size_t samples) const {
    return max_updates > 0 ? max_updates : max_epochs * batches_per_epoch(samples);
}

std::string default_selection_metric(TaskKind task) {
    switch (task) {
        case TaskKind::Binary:
            return "auroc";
        case TaskKind::MultiLabel:
            return "micro_f1";
        case TaskKind::SingleLabel:
            return "accuracy";
    }
    return "accuracy";
}

double selection_score(const ModelConfig& model, const ParamStore& params, const ModalFeatureBatch& val,
                       const std::string& metric) {
    if (val.size() == 0) throw Error("validation set is empty");
    if (!val.labels) throw Error("validation set has no labels");
    auto bound = bind(params, false);
    auto features = feature_vars(val);
    ad::Var emb = FusionModule(model).forward(bound, features);
    Tensor logits = DownstreamHead(model).forward(bound, emb).value();
    auto report = metrics::evaluate(logits, *val.labels, model.task);
    auto it = report.values.find(metric);
    if (it == report.values.end()) throw Error("selection metric '" + metric + "' is not available for this validation set");
    return it->second;
}

// -- TrainState ----------------------------------------------------------------

nlohmann::ordered_json TrainState::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["seed"] = seed;
    j["finished"] = finished;
    j["evals_without_improvement"] = evals_without_improvement;
    j["has_best"] = has_best;
    j["best_metric"] = best_metric;
    j["best_step"] = best_step;
    j["params"] = params_to_json(params);
    j["best_params"] = params_to_json(best_params);
    j["optimizer"] = optimizer.to_json();
    return j;
}

TrainState TrainState::from_json(const nlohmann::ordered_json& j) {
    TrainState s;
    try {
        s.step = j.at("step").get<std::size_t>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.finished = j.at("finished").get<bool>();
        s.evals_without_improvement = j.at("evals_without_improvement").get<std::size_t>();
        s.has_best = j.at("has_best").get<bool>();
        s.best_metric = j.at("best_metric").get<double>();
        s.best_step = j.at("best_step").get<std::size_t>();
        s.params = params_from_json(j.at("params"));
        s.best_params = params_from_json(j.at("best_params"));
        s.optimizer = Optimizer::from_json(j.at("optimizer"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("train state: ") + e.what(), 0);
    }
    return s;
}

// -- Trainer -------------------------------------------------------------------

Trainer::Trainer(ModelConfig model, TrainConfig config, LossConfig loss, ModalFeatureBatch train, ModalFeatureBatch val,
                 ParamStore initial)
    : Trainer(std::move(model), config, std::move(loss), std::move(train), std::move(val), [&] {
          TrainState s;
          std::vector<std::string> names;
          for (const auto& [name, _] : initial.entries()) names.push_back(name);
          s.optimizer = Optimizer(config.optimizer, config.adamw, std::move(names));
          s.params = std::move(initial);
          s.seed = config.seed;
          return s;
      }()) {}

Trainer::Trainer(ModelConfig model, TrainConfig config, LossConfig loss, ModalFeatureBatch train, ModalFeatureBatch val,
                 TrainState resume)
    : model_(std::move(model)),
      config_(std::move(config)),
      loss_(std::move(loss)),
      train_(std::move(train)),
      val_(std::move(val)),
      state_(std::move(resume)) {
    model_.validate();
    config_.validate();
    loss_.validate(model_.modalities());
    train_.validate();
    val_.validate();
    if (train_.labeled_count() == 0) throw Error("training data has no labeled samples");
    if (val_.size() == 0) throw Error("validation set is empty");
    metric_ = config_.selection_metric.empty() ? default_selection_metric(model_.task) : config_.selection_metric;
    total_ = config_.updates_for(train_.size());
    if (state_.step >= total_) state_.finished = true;
}

std::vector<std::size_t> Trainer::batch_rows(std::size_t step) const {
    const std::size_t per_epoch = config_.batches_per_epoch(train_.size());
    const std::size_t epoch = (step - 1) / per_epoch;
    return epoch_rows(state_.seed, epoch, train_.size(), config_.batch_size, (step - 1) % per_epoch);
}

void Trainer::step() {
    if (state_.finished) return;
    const std::size_t t = state_.step + 1;
    const auto rows = batch_rows(t);
    const ModalFeatureBatch batch = train_.subset(rows);
    const double lr = scheduled_lr(config_.schedule, config_.base_lr, config_.warmup_fraction, t, total_);

    BoundParams bound = bind(state_.params, true);
    TrainLoss loss;
    try {
        loss = train_loss(model_, bound, batch, loss_);
    } catch (const NumericError& e) {
        throw TrainingError("step " + std::to_string(t) + ": " + e.what());
    }
    const double total = loss.total.value().item();
    if (!std::isfinite(total)) throw TrainingError("step " + std::to_string(t) + ": non-finite loss (" + breakdown(loss) + ")");
    if (!loss.supervised) ++unsupervised_steps_;

    if (loss.has_gradient) {
        auto grads = ad::backward(loss.total);
        state_.optimizer.step(state_.params, collect_gradients(state_.params, bound, grads, t), lr);
    }
    log_.push_back({t, total, loss.downstream, loss.refiner, loss.ms, lr});
    state_.step = t;

    const std::size_t every = config_.eval_every > 0 ? config_.eval_every : config_.batches_per_epoch(train_.size());
    if (t % every == 0 || t == total_) evaluate();
    if (t >= total_) state_.finished = true;
}

void Trainer::evaluate() {
    const double score = selection_score(model_, state_.params, val_, metric_);
    evals_.push_back({state_.step, score});
    if (!state_.has_best || score > state_.best_metric) {
        state_.has_best = true;
        state_.best_metric = score;
        state_.best_step = state_.step;
        state_.best_params = state_.params;
        state_.evals_without_improvement = 0;
    } else {
        ++state_.evals_without_improvement;
        if (config_.patience > 0 && state_.evals_without_improvement >= config_.patience) state_.finished = true;
    }
}

void Trainer::run(std::optional<std::size_t> stop_at) {
    while (!state_.finished && (!stop_at || state_.step < *stop_at)) step();
    if (state_.finished && unsupervised_steps_ > 0 && loss_.zeta > 0.0) {
        spdlog::warn("{} of {} steps saw no labeled samples; their downstream and MS terms were set to 0", unsupervised_steps_,
                     log_.size());
    }
}

// -- pretraining ---------------------------------------------------------------

std::vector<StepLog> pretrain(ReFNetModel& model, const ModalFeatureBatch& data, const TrainConfig& config,
                              const LossConfig& loss) {
    std::vector<StepLog> log;
    if (config.pretrain_epochs == 0) return log;
    config.validate();
    loss.validate(model.config().modalities());
    if (!loss.refiner_enabled()) throw ConfigError("pretraining needs at least one positive gamma");
    data.validate();

    Optimizer opt(config.optimizer, config.adamw, model.refiner_path_params());
    const double lr = config.pretrain_lr > 0.0 ? config.pretrain_lr : config.base_lr;
    const std::size_t per_epoch = config.batches_per_epoch(data.size());
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
        for (std::size_t pos = 0; pos < per_epoch; ++pos) {
            ++t;
            auto rows = epoch_rows(config.seed, kPretrainStream + epoch, data.size(), config.batch_size, pos);
            ModalFeatureBatch batch = data.subset(rows);
            BoundParams bound = bind(model.params(), true);
            TrainLoss l;
            try {
                l = pretrain_loss(model.config(), bound, batch, loss);
            } catch (const NumericError& e) {
                throw TrainingError("pretrain step " + std::to_string(t) + ": " + e.what());
            }
            auto grads = ad::backward(l.total);
            std::map<std::string, Tensor> g;
            for (const auto& name : opt.names()) {
                const ad::Var& leaf = bound.at(name);
                g.emplace(name, grads.contains(leaf) ? grads[leaf] : Tensor::zeros(leaf.value().shape()));
            }
            opt.step(model.params(), g, lr);
            log.push_back({t, l.refiner, 0.0, l.refiner, 0.0, lr});
        }
    }
    return log;
}

// -- label masking -------------------------------------------------------------

ModalFeatureBatch mask_labels(const ModalFeatureBatch& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
    if (!data.labels) throw Error("mask_labels: dataset has no labels");
    data.validate();

    std::map<std::string, std::vector<std::size_t>> groups;
    std::size_t n = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        if (!data.label_mask[s]) continue;
        groups[data.label_key(s)].push_back(s);
        ++n;
    }
    const auto budget = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    const std::size_t g = groups.size();

    std::vector<std::vector<std::size_t>*> members;
    for (auto& [_, idx] : groups) members.push_back(&idx);
    std::vector<std::size_t> alloc(g, 0);

    if (budget >= g) {
        // one label per class, the rest by largest remainder in proportion to class size
        std::fill(alloc.begin(), alloc.end(), 1);
        const std::size_t rest = budget - g;
        const std::size_t spare_total = n - g;
        std::vector<double> remainder(g, 0.0);
        std::size_t given = 0;
        for (std::size_t k = 0; k < g && spare_total > 0; ++k) {
            const double quota = static_cast<double>(rest) * static_cast<double>(members[k]->size() - 1) /
                                 static_cast<double>(spare_total);
            const auto whole = static_cast<std::size_t>(std::floor(quota));
            alloc[k] += whole;
            given += whole;
            remainder[k] = quota - static_cast<double>(whole);
        }
        std::vector<std::size_t> order(g);
        for (std::size_t k = 0; k < g; ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t k : order) {
            if (given >= rest) break;
            if (alloc[k] < members[k]->size()) {
                ++alloc[k];
                ++given;
            }
        }
    } else {
        spdlog::warn("label fraction {} keeps {} labels for {} classes; some classes get none", fraction, budget, g);
        std::vector<std::size_t> order(g);
        for (std::size_t k = 0; k < g; ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return members[a]->size() > members[b]->size(); });
        for (std::size_t k = 0; k < budget; ++k) alloc[order[k]] = 1;
    }

    ModalFeatureBatch out = data;
    std::fill(out.label_mask.begin(), out.label_mask.end(), false);
    Rng rng(seed);
    for (std::size_t k = 0; k < g; ++k) {
        std::vector<std::size_t> idx = *members[k];
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t i = 0; i < alloc[k]; ++i) out.label_mask[idx[i]] = true;
    }
    return out;
}

}  // namespace refnet
