#include "refnet/model.hpp"

#include <cmath>

#include "refnet/errors.hpp"
#include "refnet/rng.hpp"

namespace refnet {

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::SingleLabel:
            return "single-label";
        case TaskKind::MultiLabel:
            return "multi-label";
        case TaskKind::Binary:
            return "binary";
    }
    return "unknown";
}

TaskKind task_kind_from_string(std::string_view s) {
    if (s == "single-label") return TaskKind::SingleLabel;
    if (s == "multi-label") return TaskKind::MultiLabel;
    if (s == "binary") return TaskKind::Binary;
    throw ConfigError("unknown task kind '" + std::string(s) + "' (expected single-label, multi-label or binary)");
}

std::string to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + std::string(s) + "' (expected tanh or relu)");
}

std::size_t ModelConfig::refiner_dim(std::size_t i) const {
    return refiner_dims.empty() ? input_dims.at(i) : refiner_dims.at(i);
}

void ModelConfig::validate() const {
    if (input_dims.empty()) throw ConfigError("model needs at least one modality");
    for (auto d : input_dims)
        if (d == 0) throw ConfigError("modality dimensions must be positive");
    if (embed_dim == 0) throw ConfigError("embedding dimension must be positive");
    if (!refiner_dims.empty()) {
        if (refiner_dims.size() != input_dims.size()) {
            throw ConfigError("refiner_dims has " + std::to_string(refiner_dims.size()) + " entries for " +
                              std::to_string(input_dims.size()) + " modalities");
        }
        for (auto r : refiner_dims)
            if (r == 0) throw ConfigError("refiner dimensions must be positive");
    }
    if (task == TaskKind::SingleLabel && num_classes < 2) throw ConfigError("single-label task needs at least 2 classes");
    if (task == TaskKind::MultiLabel && num_classes < 1) throw ConfigError("multi-label task needs at least 1 class");
}

// -- ParamStore --------------------------------------------------------------

void ParamStore::add(std::string name, Tensor value) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamStore::contains(std::string_view name) const {
    for (const auto& [n, _] : entries_)
        if (n == name) return true;
    return false;
}

const Tensor& ParamStore::at(std::string_view name) const {
    for (const auto& [n, t] : entries_)
        if (n == name) return t;
    throw ConfigError("no parameter named '" + std::string(name) + "'");
}

Tensor& ParamStore::at(std::string_view name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw ConfigError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
}

nlohmann::ordered_json params_to_json(const ParamStore& params) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, t] : params.entries()) {
        j[name] = {{"shape", t.shape()}, {"values", t.values()}};
    }
    return j;
}

ParamStore params_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw ParseError("checkpoint must be a JSON object", 0);
    ParamStore params;
    for (const auto& [name, entry] : j.items()) {
        try {
            auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            auto values = entry.at("values").get<std::vector<double>>();
            params.add(name, Tensor(std::move(shape), std::move(values)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("checkpoint entry '" + name + "': " + e.what(), 0);
        }
    }
    return params;
}

BoundParams bind(const ParamStore& params, bool requires_grad) {
    BoundParams out;
    for (const auto& [name, t] : params.entries()) out.emplace(name, ad::Var(t, requires_grad));
    return out;
}

// -- layers ------------------------------------------------------------------

namespace {
const ad::Var& lookup(const BoundParams& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}
}  // namespace

ad::Var Affine::operator()(const BoundParams& params, const ad::Var& x) const {
    if (x.value().rank() != 2 || x.value().cols() != in) {
        throw DimensionError(name + ": expected input with " + std::to_string(in) + " columns, got " + x.value().shape_str());
    }
    ad::Var y = ad::matmul(x, lookup(params, weight_name()));
    if (bias) y = ad::add_row(y, lookup(params, bias_name()));
    return y;
}

ad::Var activate(Activation act, const ad::Var& x) { return act == Activation::Tanh ? ad::tanh(x) : ad::relu(x); }

FusionModule::FusionModule(const ModelConfig& config) : dims_(config.input_dims), act_(config.activation) {
    std::size_t total = 0;
    for (auto d : dims_) total += d;
    if (config.fusion_hidden > 0) {
        layers_.push_back({"fusion.hidden", total, config.fusion_hidden});
        layers_.push_back({"fusion.out", config.fusion_hidden, config.embed_dim});
    } else {
        layers_.push_back({"fusion.out", total, config.embed_dim});
    }
}

ad::Var FusionModule::forward(const BoundParams& params, std::span<const ad::Var> features) const {
    if (features.size() != dims_.size()) {
        throw ConfigError("fusion expects " + std::to_string(dims_.size()) + " modalities, got " + std::to_string(features.size()));
    }
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (features[i].value().rank() != 2 || features[i].value().cols() != dims_[i]) {
            throw ConfigError("modality " + std::to_string(i) + " has shape " + features[i].value().shape_str() +
                              ", model expects " + std::to_string(dims_[i]) + " columns");
        }
    }
    ad::Var x = features.size() == 1 ? features[0] : ad::concat_cols(features);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        x = layers_[l](params, x);
        if (l + 1 < layers_.size()) x = activate(act_, x);
    }
    return x;
}

RefinerModule::RefinerModule(const ModelConfig& config) : embed_dim_(config.embed_dim), act_(config.activation) {
    const std::size_t h = config.decoder_hidden();
    for (std::size_t i = 0; i < config.modalities(); ++i) {
        const std::string prefix = "refiner." + std::to_string(i);
        decoders_.emplace_back(Affine{prefix + ".hidden", config.embed_dim, h}, Affine{prefix + ".out", h, config.refiner_dim(i)});
        if (config.identity_target(i)) {
            targets_.push_back({});
        } else {
            targets_.push_back({"target." + std::to_string(i), config.input_dims[i], config.refiner_dim(i), false});
        }
    }
}

std::vector<ad::Var> RefinerModule::forward(const BoundParams& params, const ad::Var& embedding) const {
    if (embedding.value().rank() != 2 || embedding.value().cols() != embed_dim_) {
        throw ConfigError("refiner expects an embedding with " + std::to_string(embed_dim_) + " columns, got " +
                          embedding.value().shape_str());
    }
    std::vector<ad::Var> out;
    out.reserve(decoders_.size());
    for (const auto& [hidden, last] : decoders_) out.push_back(last(params, activate(act_, hidden(params, embedding))));
    return out;
}

std::vector<ad::Var> RefinerModule::targets(const BoundParams& params, std::span<const ad::Var> features) const {
    if (features.size() != targets_.size()) {
        throw ConfigError("refiner expects " + std::to_string(targets_.size()) + " modalities, got " + std::to_string(features.size()));
    }
    std::vector<ad::Var> out;
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        out.push_back(targets_[i].out == 0 ? features[i] : targets_[i](params, features[i]));
    }
    return out;
}

std::vector<Affine> RefinerModule::layers() const {
    std::vector<Affine> out;
    for (const auto& [hidden, last] : decoders_) {
        out.push_back(hidden);
        out.push_back(last);
    }
    for (const auto& t : targets_)
        if (t.out != 0) out.push_back(t);
    return out;
}

DownstreamHead::DownstreamHead(const ModelConfig& config) : embed_dim_(config.embed_dim) {
    layers_.push_back({"head.hidden", config.embed_dim, config.head_hidden()});
    layers_.push_back({"head.out", config.head_hidden(), config.output_dim()});
}

ad::Var DownstreamHead::forward(const BoundParams& params, const ad::Var& embedding) const {
    if (embedding.value().rank() != 2 || embedding.value().cols() != embed_dim_) {
        throw DimensionError("head expects an embedding with " + std::to_string(embed_dim_) + " columns, got " +
                             embedding.value().shape_str());
    }
    return layers_[1](params, ad::tanh(layers_[0](params, embedding)));
}

ParamStore init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ParamStore params;
    std::vector<Affine> all = FusionModule(config).layers();
    const std::vector<Affine> refiner = RefinerModule(config).layers();
    const std::vector<Affine> head = DownstreamHead(config).layers();
    all.insert(all.end(), refiner.begin(), refiner.end());
    all.insert(all.end(), head.begin(), head.end());
    for (const auto& layer : all) {
        const double s = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        Tensor w = Tensor::zeros({layer.in, layer.out});
        for (auto& v : w.data()) v = rng.uniform(-s, s);
        params.add(layer.weight_name(), std::move(w));
        if (layer.bias) params.add(layer.bias_name(), Tensor::zeros({layer.out}));
    }
    return params;
}

std::vector<ad::Var> feature_vars(const ModalFeatureBatch& batch) {
    std::vector<ad::Var> out;
    out.reserve(batch.features.size());
    for (const auto& f : batch.features) out.emplace_back(f, false);
    return out;
}

// -- ReFNetModel -------------------------------------------------------------

ReFNetModel::ReFNetModel(ModelConfig config, ParamStore params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    ParamStore expected = init_weights(config_, 0);
    for (const auto& [name, t] : expected.entries()) {
        if (!params_.contains(name)) throw ConfigError("checkpoint is missing parameter '" + name + "'");
        if (params_.at(name).shape() != t.shape()) {
            throw ConfigError("parameter '" + name + "' has shape " + params_.at(name).shape_str() + ", model expects " +
                              t.shape_str());
        }
    }
    if (params_.size() != expected.size()) throw ConfigError("checkpoint has parameters the model does not use");
}

ReFNetModel ReFNetModel::initialize(ModelConfig config, std::uint64_t seed) {
    ParamStore params = init_weights(config, seed);
    return ReFNetModel(std::move(config), std::move(params));
}

std::vector<std::string> ReFNetModel::refiner_path_params() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : params_.entries())
        if (name.rfind("head.", 0) != 0) names.push_back(name);
    return names;
}

Tensor ReFNetModel::fuse(const ModalFeatureBatch& batch) const {
    auto params = bind(params_, false);
    auto features = feature_vars(batch);
    return fusion().forward(params, features).value();
}

std::vector<Tensor> ReFNetModel::refine(const Tensor& embedding) const {
    auto params = bind(params_, false);
    std::vector<Tensor> out;
    for (const auto& r : refiner().forward(params, ad::Var(embedding))) out.push_back(r.value());
    return out;
}

Tensor ReFNetModel::predict(const Tensor& embedding) const {
    auto params = bind(params_, false);
    return head().forward(params, ad::Var(embedding)).value();
}

}  // namespace refnet
