#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refnet/autodiff.hpp"
#include "refnet/batch.hpp"
#include "refnet/tensor.hpp"

namespace refnet {

enum class TaskKind { SingleLabel, MultiLabel, Binary };
enum class Activation { Tanh, Relu };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view s);
std::string to_string(Activation act);
Activation activation_from_string(std::string_view s);

struct ModelConfig {
    std::vector<std::size_t> input_dims;
    std::size_t embed_dim = 16;
    // 0 = fusion is a single affine map from the concatenated features to the embedding.
    std::size_t fusion_hidden = 0;
    // 0 = same width as the embedding.
    std::size_t refiner_hidden = 0;
    // Empty = identity target maps, refiner space equals feature space.
    std::vector<std::size_t> refiner_dims;
    std::size_t num_classes = 2;
    TaskKind task = TaskKind::SingleLabel;
    Activation activation = Activation::Tanh;

    std::size_t modalities() const { return input_dims.size(); }
    std::size_t refiner_dim(std::size_t i) const;
    bool identity_target(std::size_t i) const { return refiner_dims.empty() || refiner_dims[i] == input_dims[i]; }
    std::size_t head_hidden() const { return embed_dim / 2 == 0 ? 1 : embed_dim / 2; }
    std::size_t output_dim() const { return task == TaskKind::Binary ? 1 : num_classes; }
    std::size_t decoder_hidden() const { return refiner_hidden == 0 ? embed_dim : refiner_hidden; }

    void validate() const;
};

/// Named parameter tensors in a fixed insertion order.
class ParamStore {
   public:
    void add(std::string name, Tensor value);
    bool contains(std::string_view name) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t parameter_count() const;

    bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

   private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Checkpoint format: {name: {"shape": [...], "values": [...]}}, doubles in shortest round-trip form.
nlohmann::ordered_json params_to_json(const ParamStore& params);
ParamStore params_from_json(const nlohmann::ordered_json& j);

using BoundParams = std::map<std::string, ad::Var, std::less<>>;

/// Wraps every parameter in a leaf Var.
BoundParams bind(const ParamStore& params, bool requires_grad);

struct Affine {
    std::string name;
    std::size_t in = 0;
    std::size_t out = 0;
    bool bias = true;

    std::string weight_name() const { return name + ".weight"; }
    std::string bias_name() const { return name + ".bias"; }
    ad::Var operator()(const BoundParams& params, const ad::Var& x) const;
};

ad::Var activate(Activation act, const ad::Var& x);

/// Concatenates the modality features and maps them to the embedding space.
class FusionModule {
   public:
    explicit FusionModule(const ModelConfig& config);
    ad::Var forward(const BoundParams& params, std::span<const ad::Var> features) const;
    const std::vector<Affine>& layers() const { return layers_; }

   private:
    std::vector<std::size_t> dims_;
    Activation act_;
    std::vector<Affine> layers_;
};

/// Per-modality decoders D_i (affine, activation, affine) and target maps H_i.
class RefinerModule {
   public:
    explicit RefinerModule(const ModelConfig& config);
    std::vector<ad::Var> forward(const BoundParams& params, const ad::Var& embedding) const;
    /// H_i(F_i): the features themselves for identity targets, otherwise a linear map.
    std::vector<ad::Var> targets(const BoundParams& params, std::span<const ad::Var> features) const;
    std::vector<Affine> layers() const;
    const std::vector<Affine>& target_layers() const { return targets_; }

   private:
    std::size_t embed_dim_;
    Activation act_;
    std::vector<std::pair<Affine, Affine>> decoders_;
    std::vector<Affine> targets_;  // empty entries (out == 0) for identity maps
};

/// Two affine layers k -> k/2 -> C with tanh in between.
class DownstreamHead {
   public:
    explicit DownstreamHead(const ModelConfig& config);
    ad::Var forward(const BoundParams& params, const ad::Var& embedding) const;
    const std::vector<Affine>& layers() const { return layers_; }

   private:
    std::size_t embed_dim_;
    std::vector<Affine> layers_;
};

/// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
ParamStore init_weights(const ModelConfig& config, std::uint64_t seed);

std::vector<ad::Var> feature_vars(const ModalFeatureBatch& batch);

class ReFNetModel {
   public:
    ReFNetModel(ModelConfig config, ParamStore params);
    static ReFNetModel initialize(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    FusionModule fusion() const { return FusionModule(config_); }
    RefinerModule refiner() const { return RefinerModule(config_); }
    DownstreamHead head() const { return DownstreamHead(config_); }

    /// Parameter names touched by the self-supervised refiner cost (fusion, decoders, target maps).
    std::vector<std::string> refiner_path_params() const;

    Tensor fuse(const ModalFeatureBatch& batch) const;
    std::vector<Tensor> refine(const Tensor& embedding) const;
    Tensor predict(const Tensor& embedding) const;

   private:
    ModelConfig config_;
    ParamStore params_;
};

}  // namespace refnet
