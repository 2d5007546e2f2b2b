#include "refnet/data.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "refnet/errors.hpp"
#include "refnet/rng.hpp"

namespace refnet::data {

std::string to_string(SyntheticMode mode) { return mode == SyntheticMode::Additive ? "additive" : "complementary"; }

SyntheticMode synthetic_mode_from_string(const std::string& s) {
    if (s == "additive") return SyntheticMode::Additive;
    if (s == "complementary") return SyntheticMode::Complementary;
    throw ConfigError("unknown synthetic mode '" + s + "' (expected additive or complementary)");
}

void SyntheticSpec::validate() const {
    if (modalities == 0) throw ConfigError("synthetic data needs at least one modality");
    if (dims.size() != modalities) throw ConfigError("synthetic dims must list one size per modality");
    for (auto d : dims)
        if (d == 0) throw ConfigError("synthetic dims must be positive");
    if (classes == 0 || latent_dim == 0) throw ConfigError("classes and latent_dim must be positive");
    if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("every split needs at least one sample");
    if (adjacency.rank() != 2 || adjacency.rows() != modalities || adjacency.cols() != modalities) {
        throw ConfigError("adjacency must be " + std::to_string(modalities) + "x" + std::to_string(modalities));
    }
    for (std::size_t i = 0; i < modalities; ++i)
        for (std::size_t j = 0; j < modalities; ++j) {
            double a = adjacency(i, j);
            if (a != 0.0 && a != 1.0) throw ConfigError("adjacency entries must be 0 or 1");
            if (i == j && a != 1.0) throw ConfigError("adjacency must have a unit diagonal");
        }
    if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
    if (mode == SyntheticMode::Complementary && (modalities < 2 || classes != 2)) {
        throw ConfigError("complementary mode needs at least 2 modalities and exactly 2 classes");
    }
}

namespace {

struct Generator {
    const SyntheticSpec& spec;
    Rng rng;
    std::vector<Tensor> projections;  // d_i x L
    std::vector<std::vector<double>> centres;

    explicit Generator(const SyntheticSpec& s) : spec(s), rng(s.seed) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.latent_dim));
        for (std::size_t i = 0; i < s.modalities; ++i) {
            Tensor p = Tensor::zeros({s.dims[i], s.latent_dim});
            for (auto& v : p.data()) v = scale * rng.normal();
            projections.push_back(std::move(p));
        }
        if (s.mode == SyntheticMode::Additive) {
            for (std::size_t c = 0; c < s.classes; ++c) {
                std::vector<double> z(s.latent_dim);
                for (auto& v : z) v = rng.normal();
                centres.push_back(std::move(z));
            }
        }
    }

    ModalFeatureBatch split(const std::string& name, std::size_t n) {
        const std::size_t m = spec.modalities, L = spec.latent_dim;
        ModalFeatureBatch batch;
        std::vector<std::vector<double>> feats(m);
        std::vector<double> labels(n);
        std::vector<std::vector<double>> latent(m, std::vector<double>(L));
        for (std::size_t s = 0; s < n; ++s) {
            std::ostringstream id;
            id << name << '-' << std::setw(6) << std::setfill('0') << s;
            batch.sample_ids.push_back(id.str());

            std::size_t label = 0;
            if (spec.mode == SyntheticMode::Additive) {
                label = rng.index(spec.classes);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < L; ++l) latent[i][l] = centres[label][l] + spec.noise * rng.normal();
            } else {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < L; ++l) latent[i][l] = rng.normal();
                    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                    latent[i][0] = sign * (spec.margin + std::abs(latent[i][0]));
                }
                label = (latent[0][0] > 0.0) != (latent[1][0] > 0.0) ? 1 : 0;
            }
            labels[s] = static_cast<double>(label);

            for (std::size_t i = 0; i < m; ++i) {
                std::vector<double> mixed(L, 0.0);
                for (std::size_t j = 0; j < m; ++j)
                    if (spec.adjacency(i, j) != 0.0)
                        for (std::size_t l = 0; l < L; ++l) mixed[l] += latent[j][l];
                const Tensor& P = projections[i];
                for (std::size_t r = 0; r < P.rows(); ++r) {
                    double v = 0.0;
                    for (std::size_t l = 0; l < L; ++l) v += P(r, l) * mixed[l];
                    feats[i].push_back(v + spec.noise * rng.normal());
                }
            }
        }
        for (std::size_t i = 0; i < m; ++i) batch.features.push_back(Tensor::matrix(n, spec.dims[i], std::move(feats[i])));
        batch.labels = Tensor::vector(std::move(labels));
        batch.label_mask.assign(n, true);
        return batch;
    }
};

}  // namespace

Splits generate(const SyntheticSpec& spec) {
    spec.validate();
    Generator gen(spec);
    Splits out;
    out.train = gen.split("train", spec.n_train);
    out.val = gen.split("val", spec.n_val);
    out.test = gen.split("test", spec.n_test);
    return out;
}

ModalFeatureBatch parse_jsonl(std::istream& in) {
    ModalFeatureBatch batch;
    std::vector<std::vector<double>> feats;
    std::vector<std::size_t> dims;
    std::vector<double> class_labels;
    std::vector<double> multi_labels;
    std::size_t label_width = 0;
    int label_kind = 0;  // 0 unknown, 1 class index, 2 multi-hot
    std::size_t first_line = 0;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what(), lineno);
        }
        auto fail = [&](const std::string& msg) { throw ParseError("line " + std::to_string(lineno) + ": " + msg, lineno); };
        if (!j.is_object()) fail("expected a JSON object");
        for (const auto& [key, _] : j.items())
            if (key != "id" && key != "label" && key != "modalities") fail("unknown key '" + key + "'");
        if (!j.contains("id") || !j["id"].is_string()) fail("missing string field 'id'");
        if (!j.contains("modalities") || !j["modalities"].is_array() || j["modalities"].empty()) {
            fail("missing non-empty array field 'modalities'");
        }
        const auto& mods = j["modalities"];
        if (dims.empty()) {
            first_line = lineno;
            for (const auto& m : mods) {
                if (!m.is_array() || m.empty()) fail("each modality must be a non-empty array of numbers");
                dims.push_back(m.size());
            }
            feats.resize(dims.size());
        } else if (mods.size() != dims.size()) {
            fail("has " + std::to_string(mods.size()) + " modalities, line " + std::to_string(first_line) + " has " +
                 std::to_string(dims.size()));
        }
        for (std::size_t i = 0; i < dims.size(); ++i) {
            const auto& m = mods[i];
            if (!m.is_array() || m.size() != dims[i]) {
                fail("modality " + std::to_string(i) + " has dimension " + std::to_string(m.is_array() ? m.size() : 0) +
                     ", line " + std::to_string(first_line) + " has " + std::to_string(dims[i]));
            }
            for (const auto& v : m) {
                if (!v.is_number()) fail("modality " + std::to_string(i) + " contains a non-numeric value");
                feats[i].push_back(v.get<double>());
            }
        }
        batch.sample_ids.push_back(j["id"].get<std::string>());

        const bool has_label = j.contains("label") && !j["label"].is_null();
        batch.label_mask.push_back(has_label);
        if (!has_label) {
            class_labels.push_back(0.0);
            multi_labels.insert(multi_labels.end(), label_width, 0.0);
            continue;
        }
        const auto& lab = j["label"];
        if (lab.is_number_integer()) {
            if (label_kind == 2) fail("mixes class-index and multi-hot labels");
            label_kind = 1;
            if (lab.get<long long>() < 0) fail("label must be non-negative");
            class_labels.push_back(static_cast<double>(lab.get<long long>()));
        } else if (lab.is_array()) {
            if (label_kind == 1) fail("mixes class-index and multi-hot labels");
            if (label_kind == 0) {
                label_width = lab.size();
                if (label_width == 0) fail("multi-hot label must not be empty");
                multi_labels.assign(label_width * (batch.sample_ids.size() - 1), 0.0);
            }
            label_kind = 2;
            if (lab.size() != label_width) fail("multi-hot label has " + std::to_string(lab.size()) + " entries, expected " +
                                                std::to_string(label_width));
            for (const auto& v : lab) {
                if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
                    fail("multi-hot label entries must be 0 or 1");
                }
                multi_labels.push_back(static_cast<double>(v.get<long long>()));
            }
        } else {
            fail("label must be an integer, an array of 0/1 integers, or null");
        }
    }
    if (batch.sample_ids.empty()) throw ParseError("no samples", lineno);
    const std::size_t n = batch.sample_ids.size();
    for (std::size_t i = 0; i < dims.size(); ++i) batch.features.push_back(Tensor::matrix(n, dims[i], std::move(feats[i])));
    if (label_kind == 1) batch.labels = Tensor::vector(std::move(class_labels));
    if (label_kind == 2) batch.labels = Tensor::matrix(n, label_width, std::move(multi_labels));
    batch.validate();
    return batch;
}

ModalFeatureBatch load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    return parse_jsonl(in);
}

void write_jsonl(const ModalFeatureBatch& batch, std::ostream& out) {
    batch.validate();
    for (std::size_t s = 0; s < batch.size(); ++s) {
        nlohmann::ordered_json j;
        j["id"] = batch.sample_ids[s];
        if (batch.labels && batch.label_mask[s]) {
            if (batch.labels->rank() == 2) {
                std::vector<long long> row;
                for (std::size_t c = 0; c < batch.labels->cols(); ++c) row.push_back(static_cast<long long>((*batch.labels)(s, c)));
                j["label"] = row;
            } else {
                j["label"] = static_cast<long long>((*batch.labels)[s]);
            }
        } else {
            j["label"] = nullptr;
        }
        nlohmann::ordered_json mods = nlohmann::ordered_json::array();
        for (const auto& f : batch.features) mods.push_back(f.row(s));
        j["modalities"] = mods;
        out << j.dump() << '\n';
    }
}

void save_jsonl(const ModalFeatureBatch& batch, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_jsonl(batch, out);
}

}  // namespace refnet::data
