#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refnet/batch.hpp"
#include "refnet/tensor.hpp"

namespace refnet::data {

enum class SyntheticMode { Additive, Complementary };

std::string to_string(SyntheticMode mode);
SyntheticMode synthetic_mode_from_string(const std::string& s);

/// Gaussian multimodal generator with a known modality dependency graph.
///
/// Additive: class centre z_c ~ N(0, I_L); modality latent s_i = z_c + u_i, u_i ~ N(0, sigma^2 I).
/// Complementary: s_i ~ N(0, I_L) with the first coordinate pushed to +-(margin + |g|);
/// the label is the parity of the signs of s_0[0] and s_1[0], so neither modality alone
/// carries the label. Both modes emit F_i = P_i (sum_j A_ij s_j) + eps_i, eps_i ~ N(0, sigma^2 I).
struct SyntheticSpec {
    std::size_t modalities = 2;
    std::vector<std::size_t> dims{8, 8};
    std::size_t classes = 2;
    std::size_t n_train = 2000;
    std::size_t n_val = 500;
    std::size_t n_test = 1000;
    std::size_t latent_dim = 2;
    Tensor adjacency = Tensor::identity(2);
    double noise = 0.1;
    double margin = 0.5;
    SyntheticMode mode = SyntheticMode::Additive;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    ModalFeatureBatch train;
    ModalFeatureBatch val;
    ModalFeatureBatch test;
};

Splits generate(const SyntheticSpec& spec);

/// One JSON object per line: {"id": str, "label": int | [0/1, ...] | null, "modalities": [[float, ...], ...]}.
/// A missing or null label marks the sample unlabeled.
ModalFeatureBatch load_jsonl(const std::filesystem::path& path);
ModalFeatureBatch parse_jsonl(std::istream& in);
void save_jsonl(const ModalFeatureBatch& batch, const std::filesystem::path& path);
void write_jsonl(const ModalFeatureBatch& batch, std::ostream& out);

}  // namespace refnet::data
