#include "refnet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "refnet/csv.hpp"
#include "refnet/errors.hpp"
#include "refnet/graph_recovery.hpp"
#include "refnet/linalg.hpp"
#include "refnet/rng.hpp"

namespace refnet::experiment {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

bool non_negative_integer(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads one JSON object, remembering which keys were consumed so leftovers can be rejected.
class Section {
   public:
    Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!non_negative_integer(*it)) throw ConfigError("'" + where(key) + "' must be a non-negative integer");
        }
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("'" + where(key) + "' has the wrong type");
        }
    }

    void get_sizes(const std::string& key, std::vector<std::size_t>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_array()) throw ConfigError("'" + where(key) + "' must be an array");
        out.clear();
        for (const auto& v : *it) {
            if (!non_negative_integer(v)) throw ConfigError("'" + where(key) + "' must hold non-negative integers");
            out.push_back(v.get<std::size_t>());
        }
    }

    void get_doubles(const std::string& key, std::vector<double>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_array()) throw ConfigError("'" + where(key) + "' must be an array");
        out.clear();
        for (const auto& v : *it) {
            if (!v.is_number()) throw ConfigError("'" + where(key) + "' must hold numbers");
            out.push_back(v.get<double>());
        }
    }

    std::optional<Section> child(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return std::nullopt;
        return Section(*it, where(key));
    }

    const nlohmann::json* raw(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

   private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

Tensor parse_matrix(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ConfigError("'" + what + "' must be a non-empty array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    if (cols == 0) throw ConfigError("'" + what + "' must be a non-empty array of rows");
    Tensor t = Tensor::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw ConfigError("'" + what + "' rows differ in length");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) throw ConfigError("'" + what + "' must hold numbers");
            t(r, c) = j[r][c].get<double>();
        }
    }
    return t;
}

ojson matrix_json(const Tensor& t) {
    ojson rows = ojson::array();
    for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(t.row(r));
    return rows;
}

std::string similarity_name(SimilarityMode m) { return m == SimilarityMode::Cosine ? "cosine" : "dot"; }
std::string positive_rule_name(PositiveRule r) { return r == PositiveRule::ExactMatch ? "exact" : "jaccard"; }

void read_data(Section s, DataConfig& d) {
    s.get("source", d.source);
    if (d.source != "synthetic" && d.source != "jsonl") {
        throw ConfigError("data.source must be 'synthetic' or 'jsonl', got '" + d.source + "'");
    }
    s.get("label_fraction", d.label_fraction);
    if (d.source == "jsonl") {
        s.get("train", d.train_path);
        s.get("val", d.val_path);
        s.get("test", d.test_path);
        if (d.train_path.empty() || d.val_path.empty() || d.test_path.empty()) {
            throw ConfigError("jsonl data needs 'train', 'val' and 'test' paths");
        }
    } else {
        auto& sp = d.synthetic;
        s.get("modalities", sp.modalities);
        if (!s.has("dims")) sp.dims.assign(sp.modalities, 8);
        s.get_sizes("dims", sp.dims);
        s.get("classes", sp.classes);
        s.get("n_train", sp.n_train);
        s.get("n_val", sp.n_val);
        s.get("n_test", sp.n_test);
        s.get("latent_dim", sp.latent_dim);
        s.get("noise", sp.noise);
        s.get("margin", sp.margin);
        std::string mode = data::to_string(sp.mode);
        s.get("mode", mode);
        sp.mode = data::synthetic_mode_from_string(mode);
        s.get("seed", sp.seed);
        if (const auto* a = s.raw("adjacency")) {
            sp.adjacency = parse_matrix(*a, "data.adjacency");
        } else {
            sp.adjacency = Tensor::identity(sp.modalities);
        }
        sp.validate();
    }
    if (!(d.label_fraction > 0.0 && d.label_fraction <= 1.0)) throw ConfigError("data.label_fraction must lie in (0, 1]");
    s.finish();
}

void read_model(Section s, ModelConfig& m) {
    s.get("embed_dim", m.embed_dim);
    s.get("fusion_hidden", m.fusion_hidden);
    s.get("refiner_hidden", m.refiner_hidden);
    s.get_sizes("refiner_dims", m.refiner_dims);
    s.get("num_classes", m.num_classes);
    std::string task = to_string(m.task), act = to_string(m.activation);
    s.get("task", task);
    s.get("activation", act);
    m.task = task_kind_from_string(task);
    m.activation = activation_from_string(act);
    s.finish();
}

void read_loss(Section s, LossConfig& l) {
    if (s.has("eta")) {
        if (s.has("gamma")) throw ConfigError("loss.eta is an alias of loss.gamma; give only one");
        spdlog::warn("loss.eta is deprecated, use loss.gamma");
        s.get_doubles("eta", l.gamma);
    }
    s.get_doubles("gamma", l.gamma);
    s.get("zeta", l.zeta);
    s.get("alpha", l.alpha);
    s.get("beta", l.beta);
    s.get("lambda", l.lambda);
    s.get("jaccard_threshold", l.jaccard_threshold);
    std::string sim = similarity_name(l.similarity), rule = positive_rule_name(l.positive_rule);
    s.get("similarity", sim);
    s.get("positive_rule", rule);
    if (sim == "cosine") {
        l.similarity = SimilarityMode::Cosine;
    } else if (sim == "dot") {
        l.similarity = SimilarityMode::RawDot;
    } else {
        throw ConfigError("loss.similarity must be 'cosine' or 'dot'");
    }
    if (rule == "exact") {
        l.positive_rule = PositiveRule::ExactMatch;
    } else if (rule == "jaccard") {
        l.positive_rule = PositiveRule::Jaccard;
    } else {
        throw ConfigError("loss.positive_rule must be 'exact' or 'jaccard'");
    }
    s.finish();
}

void read_train(Section s, TrainConfig& t) {
    s.get("max_epochs", t.max_epochs);
    s.get("max_updates", t.max_updates);
    s.get("batch_size", t.batch_size);
    s.get("base_lr", t.base_lr);
    s.get("warmup_fraction", t.warmup_fraction);
    s.get("eval_every", t.eval_every);
    s.get("patience", t.patience);
    s.get("selection_metric", t.selection_metric);
    s.get("pretrain_epochs", t.pretrain_epochs);
    s.get("pretrain_lr", t.pretrain_lr);
    std::string opt = to_string(t.optimizer), sched = to_string(t.schedule);
    s.get("optimizer", opt);
    s.get("schedule", sched);
    t.optimizer = optimizer_from_string(opt);
    t.schedule = schedule_from_string(sched);
    if (auto a = s.child("adamw")) {
        a->get("beta1", t.adamw.beta1);
        a->get("beta2", t.adamw.beta2);
        a->get("epsilon", t.adamw.epsilon);
        a->get("weight_decay", t.adamw.weight_decay);
        a->finish();
    }
    s.finish();
    t.validate();
}

void read_ablation(Section s, AblationConfig& a) {
    s.get_doubles("label_fractions", a.label_fractions);
    s.get("seeds", a.seeds);
    s.get_doubles("gamma", a.gamma);
    s.get("zeta", a.zeta);
    s.finish();
    if (a.label_fractions.empty()) throw ConfigError("ablation.label_fractions must not be empty");
    for (double f : a.label_fractions)
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("ablation.label_fractions must lie in (0, 1]");
    if (a.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
    if (!(a.zeta >= 0.0)) throw ConfigError("ablation.zeta must be non-negative");
}

void read_theorem(Section s, TheoremConfig& t) {
    s.get_sizes("modalities", t.modalities);
    s.get_sizes("extra_k", t.extra_k);
    s.get("instances", t.instances);
    s.get("d", t.d);
    s.get("edge_probability", t.edge_probability);
    s.get_doubles("noise", t.noise);
    s.get("gradient_steps", t.gradient_steps);
    s.get("gradient_lr", t.gradient_lr);
    s.get("whiten", t.whiten);
    s.get("line_search", t.line_search);
    s.get("residual_tolerance", t.residual_tolerance);
    s.get("inverse_tolerance", t.inverse_tolerance);
    s.get("cosine_ratio_tolerance", t.cosine_ratio_tolerance);
    s.finish();
    for (auto m : t.modalities)
        if (m == 0) throw ConfigError("theorem.modalities must be positive");
    if (t.d == 0) throw ConfigError("theorem.d must be positive");
    if (!(t.edge_probability >= 0.0 && t.edge_probability <= 1.0)) throw ConfigError("theorem.edge_probability must lie in [0, 1]");
    for (double n : t.noise)
        if (!(n >= 0.0)) throw ConfigError("theorem.noise entries must be non-negative");
}

void read_grad_check(Section s, GradCheckConfig& g) {
    s.get("step", g.step);
    s.get("tolerance", g.tolerance);
    s.get("floor", g.floor);
    s.finish();
    if (!(g.step > 0.0) || !(g.tolerance > 0.0) || !(g.floor > 0.0)) throw ConfigError("grad_check values must be positive");
}

std::size_t infer_classes(const data::Splits& s) {
    const ModalFeatureBatch* parts[] = {&s.train, &s.val, &s.test};
    std::size_t classes = 0;
    for (const auto* b : parts) {
        if (!b->labels) continue;
        if (b->labels->rank() == 2) {
            classes = std::max(classes, b->labels->cols());
        } else {
            for (double v : b->labels->data()) classes = std::max(classes, static_cast<std::size_t>(v) + 1);
        }
    }
    return classes;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stdev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_log_csv(const fs::path& path, const std::vector<StepLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    w.row({"step", "L_total", "L_downstream", "L_refiner", "L_MS", "learning_rate"});
    for (const auto& s : log) {
        w.row({std::to_string(s.step), csv::format_double(s.total), csv::format_double(s.downstream),
               csv::format_double(s.refiner), csv::format_double(s.ms), csv::format_double(s.lr)});
    }
}

ojson report_header(const ExperimentConfig& config, const std::string& command) {
    ojson j;
    j["command"] = command;
    j["seed"] = config.seed;
    j["config"] = config.to_json();
    return j;
}

std::vector<double> resolved_ablation_gamma(const ExperimentConfig& config) {
    if (!config.ablation.gamma.empty()) return config.ablation.gamma;
    if (config.loss.refiner_enabled()) return config.loss.gamma;
    return std::vector<double>(config.model.modalities(), 0.1);
}

}  // namespace

// -- config --------------------------------------------------------------------

ojson ExperimentConfig::to_json() const {
    ojson j;
    j["seed"] = seed;

    ojson d;
    d["source"] = data.source;
    d["label_fraction"] = data.label_fraction;
    if (data.source == "jsonl") {
        d["train"] = data.train_path;
        d["val"] = data.val_path;
        d["test"] = data.test_path;
    } else {
        const auto& sp = data.synthetic;
        d["modalities"] = sp.modalities;
        d["dims"] = sp.dims;
        d["classes"] = sp.classes;
        d["n_train"] = sp.n_train;
        d["n_val"] = sp.n_val;
        d["n_test"] = sp.n_test;
        d["latent_dim"] = sp.latent_dim;
        d["adjacency"] = matrix_json(sp.adjacency);
        d["noise"] = sp.noise;
        d["margin"] = sp.margin;
        d["mode"] = data::to_string(sp.mode);
        d["seed"] = sp.seed;
    }
    j["data"] = d;

    j["model"] = {{"input_dims", model.input_dims},
                  {"embed_dim", model.embed_dim},
                  {"fusion_hidden", model.fusion_hidden},
                  {"refiner_hidden", model.refiner_hidden},
                  {"refiner_dims", model.refiner_dims},
                  {"num_classes", model.num_classes},
                  {"task", to_string(model.task)},
                  {"activation", to_string(model.activation)}};
    j["loss"] = {{"gamma", loss.gamma},
                 {"zeta", loss.zeta},
                 {"alpha", loss.alpha},
                 {"beta", loss.beta},
                 {"lambda", loss.lambda},
                 {"similarity", similarity_name(loss.similarity)},
                 {"positive_rule", positive_rule_name(loss.positive_rule)},
                 {"jaccard_threshold", loss.jaccard_threshold}};
    j["train"] = {{"max_epochs", train.max_epochs},
                  {"max_updates", train.max_updates},
                  {"batch_size", train.batch_size},
                  {"optimizer", to_string(train.optimizer)},
                  {"adamw",
                   {{"beta1", train.adamw.beta1},
                    {"beta2", train.adamw.beta2},
                    {"epsilon", train.adamw.epsilon},
                    {"weight_decay", train.adamw.weight_decay}}},
                  {"base_lr", train.base_lr},
                  {"schedule", to_string(train.schedule)},
                  {"warmup_fraction", train.warmup_fraction},
                  {"eval_every", train.eval_every},
                  {"patience", train.patience},
                  {"selection_metric", train.selection_metric},
                  {"pretrain_epochs", train.pretrain_epochs},
                  {"pretrain_lr", train.pretrain_lr}};
    j["ablation"] = {{"label_fractions", ablation.label_fractions},
                     {"seeds", ablation.seeds},
                     {"gamma", ablation.gamma},
                     {"zeta", ablation.zeta}};
    j["theorem"] = {{"modalities", theorem.modalities},
                    {"extra_k", theorem.extra_k},
                    {"instances", theorem.instances},
                    {"d", theorem.d},
                    {"edge_probability", theorem.edge_probability},
                    {"noise", theorem.noise},
                    {"gradient_steps", theorem.gradient_steps},
                    {"gradient_lr", theorem.gradient_lr},
                    {"whiten", theorem.whiten},
                    {"line_search", theorem.line_search},
                    {"residual_tolerance", theorem.residual_tolerance},
                    {"inverse_tolerance", theorem.inverse_tolerance},
                    {"cosine_ratio_tolerance", theorem.cosine_ratio_tolerance}};
    j["grad_check"] = {{"step", grad_check.step}, {"tolerance", grad_check.tolerance}, {"floor", grad_check.floor}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    Section root(j, "");
    root.get("seed", c.seed);
    if (auto s = root.child("data")) read_data(*s, c.data);
    if (auto s = root.child("model")) {
        // input_dims are taken from the data and may be echoed back from an earlier report
        if (s->has("input_dims")) s->get_sizes("input_dims", c.model.input_dims);
        read_model(*s, c.model);
    }
    if (auto s = root.child("loss")) read_loss(*s, c.loss);
    if (auto s = root.child("train")) read_train(*s, c.train);
    if (auto s = root.child("ablation")) read_ablation(*s, c.ablation);
    if (auto s = root.child("theorem")) read_theorem(*s, c.theorem);
    if (auto s = root.child("grad_check")) read_grad_check(*s, c.grad_check);
    root.finish();
    if (c.data.source == "synthetic" && c.loss.gamma.empty()) c.loss.gamma.assign(c.data.synthetic.modalities, 0.0);
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void write_json(const fs::path& path, const ojson& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

// -- data and training -----------------------------------------------------------

data::Splits load_data(ExperimentConfig& config) {
    data::Splits splits;
    if (config.data.source == "jsonl") {
        splits.train = data::load_jsonl(config.data.train_path);
        splits.val = data::load_jsonl(config.data.val_path);
        splits.test = data::load_jsonl(config.data.test_path);
    } else {
        splits = data::generate(config.data.synthetic);
    }
    std::vector<std::size_t> dims;
    for (const auto& f : splits.train.features) dims.push_back(f.cols());
    const ModalFeatureBatch* others[] = {&splits.val, &splits.test};
    for (const auto* b : others) {
        if (b->modalities() != dims.size()) throw DimensionError("splits disagree on the number of modalities");
        for (std::size_t i = 0; i < dims.size(); ++i)
            if (b->features[i].cols() != dims[i]) throw DimensionError("splits disagree on modality " + std::to_string(i) + " dims");
    }
    if (!config.model.input_dims.empty() && config.model.input_dims != dims) {
        throw ConfigError("model.input_dims does not match the data");
    }
    config.model.input_dims = dims;
    if (config.data.source == "synthetic") {
        config.model.num_classes = config.data.synthetic.classes;
    } else {
        const std::size_t inferred = infer_classes(splits);
        if (inferred > config.model.num_classes) config.model.num_classes = inferred;
        if (splits.train.multi_label()) config.model.task = TaskKind::MultiLabel;
    }
    if (config.loss.gamma.empty()) config.loss.gamma.assign(dims.size(), 0.0);
    config.model.validate();
    config.loss.validate(dims.size());
    return splits;
}

Tensor embed(const ModelConfig& model, const ParamStore& params, const ModalFeatureBatch& batch) {
    return ReFNetModel(model, params).fuse(batch);
}

std::optional<double> embedding_silhouette(const Tensor& embeddings, const ModalFeatureBatch& batch) {
    if (!batch.labels) return std::nullopt;
    std::vector<std::string> keys;
    for (std::size_t s = 0; s < batch.size(); ++s) keys.push_back(batch.label_key(s));
    try {
        return metrics::cluster_separation(embeddings, keys);
    } catch (const Error& e) {
        spdlog::warn("silhouette unavailable: {}", e.what());
        return std::nullopt;
    }
}

RunResult run_training(const ExperimentConfig& config, const data::Splits& splits, const LossConfig& loss,
                       std::uint64_t seed, const std::optional<TrainState>& resume, std::optional<std::size_t> stop_at) {
    RunResult result;
    TrainConfig tc = config.train;
    tc.seed = derive_seed(seed, 2);
    ReFNetModel model = ReFNetModel::initialize(config.model, derive_seed(seed, 1));
    if (!resume && tc.pretrain_epochs > 0 && loss.refiner_enabled()) {
        result.pretrain_log = pretrain(model, splits.train, tc, loss);
    }
    Trainer trainer = resume ? Trainer(config.model, tc, loss, splits.train, splits.val, *resume)
                             : Trainer(config.model, tc, loss, splits.train, splits.val, model.params());
    trainer.run(stop_at);
    result.train_log = trainer.log();
    result.state = trainer.state();
    result.params = result.state.has_best ? result.state.best_params : result.state.params;

    ReFNetModel best(config.model, result.params);
    const Tensor emb = best.fuse(splits.test);
    if (!splits.test.labels) throw Error("test split has no labels");
    result.test = metrics::evaluate(best.predict(emb), *splits.test.labels, config.model.task);
    result.silhouette = embedding_silhouette(emb, splits.test);
    return result;
}

// -- theorem sweep ---------------------------------------------------------------

namespace {

// Off-diagonal edges drawn independently; redrawn until A is invertible, since a singular
// adjacency admits no invertible W A.
Tensor random_adjacency(std::size_t m, double p, std::uint64_t seed) {
    Rng rng(seed);
    for (;;) {
        Tensor a = Tensor::identity(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < m; ++c)
                if (r != c && rng.uniform() < p) a(r, c) = 1.0;
        if (std::abs(linalg::determinant(a)) > 0.5) return a;
    }
}

// Frobenius-norm condition number ||M||_F ||M^-1||_F.
double condition_number(const Tensor& m) { return frobenius_norm(m) * frobenius_norm(linalg::inverse(m)); }

}  // namespace

TheoremReport run_theorem(const TheoremConfig& config, std::uint64_t seed) {
    TheoremReport report;
    report.pass = true;
    ojson instances = ojson::array();
    std::size_t checked = 0, failed = 0;

    for (std::size_t m : config.modalities) {
        for (std::size_t extra : config.extra_k) {
            const std::size_t k = m + extra;
            for (std::size_t ni = 0; ni < config.noise.size(); ++ni) {
                const double noise = config.noise[ni];
                for (std::size_t i = 0; i < config.instances; ++i) {
                    const std::uint64_t inst_seed = derive_seed(derive_seed(seed, m * 1000 + extra), ni * 100000 + i);
                    Tensor a = random_adjacency(m, config.edge_probability, derive_seed(inst_seed, 1));

                    const bool clean = noise == 0.0;
                    for (const char* mode : {"least-squares", "cosine"}) {
                        ojson e;
                        e["m"] = m;
                        e["d"] = config.d;
                        e["k"] = k;
                        e["noise"] = noise;
                        e["fit_mode"] = mode;
                        e["instance"] = i;
                        bool pass = true;
                        try {
                            graph::InstanceOptions opts;
                            opts.noise_sigma = noise;
                            auto inst = graph::make_instance(m, config.d, k, a, inst_seed, opts);
                            if (k == m) e["condition_number"] = condition_number(linalg::matmul(inst.weights, a));
                            Tensor gamma;
                            if (std::string(mode) == "least-squares") {
                                auto fit = graph::fit_refiner_least_squares(inst);
                                gamma = fit.gamma;
                                e["minimum_norm"] = fit.minimum_norm;
                                auto check = graph::verify_theorem(gamma, inst.weights, a, config.residual_tolerance);
                                e["residual"] = check.residual;
                                pass = check.pass;
                            } else {
                                graph::GradientOptions go;
                                go.backtracking = config.line_search;
                                go.normalize_rows = config.line_search;
                                go.whiten = config.whiten;
                                auto fit = graph::fit_refiner_gradient(inst, graph::FitLoss::Cosine, config.gradient_steps,
                                                                       config.gradient_lr, graph::initial_gamma(m, k, inst_seed), go);
                                e["steps_taken"] = fit.loss_curve.size() - 1;
                                gamma = graph::rescale_to_unit_diagonal(fit.gamma, inst.weights, a);
                                const Tensor product = linalg::matmul(linalg::matmul(gamma, inst.weights), a);
                                const double ratio = graph::off_diagonal_ratio(product);
                                auto check = graph::verify_theorem(gamma, inst.weights, a, config.cosine_ratio_tolerance);
                                e["final_loss"] = fit.loss_curve.back();
                                e["residual"] = check.residual;
                                e["off_diagonal_ratio"] = ratio;
                                pass = ratio < config.cosine_ratio_tolerance && check.pass;
                            }
                            if (k == m) {
                                auto rec = graph::recover_adjacency(gamma, inst.weights, a);
                                const Tensor wa = linalg::matmul(inst.weights, a);
                                const double inv_err = max_abs_diff(rec.weighted_adjacency, wa);
                                e["inverse_error"] = inv_err;
                                e["support_recovery_rate"] = *rec.support_recovery_rate;
                                if (std::string(mode) == "least-squares") {
                                    pass = pass && inv_err < config.inverse_tolerance && *rec.support_recovery_rate == 1.0;
                                } else {
                                    pass = pass && *rec.support_recovery_rate == 1.0;
                                }
                            } else {
                                e["support_recovery_rate"] = nullptr;
                            }
                        } catch (const Error& err) {
                            e["error"] = err.what();
                            pass = false;
                        }
                        e["checked"] = clean;
                        e["pass"] = pass;
                        if (clean) {
                            ++checked;
                            if (!pass) {
                                ++failed;
                                report.pass = false;
                            }
                        }
                        instances.push_back(e);
                    }
                }
            }
        }
    }
    report.json["checked_instances"] = checked;
    report.json["failed_instances"] = failed;
    report.json["pass"] = report.pass;
    report.json["instances"] = instances;
    return report;
}

// -- ablation --------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const data::Splits& splits) {
    const std::vector<double> gamma = resolved_ablation_gamma(config);
    struct Variant {
        const char* name;
        bool refiner;
        bool ms;
    };
    const Variant variants[] = {{"baseline", false, false}, {"ReFNet", true, false}, {"ReFNet_MS", true, true}};

    std::vector<AblationRow> rows;
    for (double fraction : config.ablation.label_fractions) {
        for (const auto& v : variants) {
            for (std::uint64_t seed : config.ablation.seeds) {
                LossConfig loss = config.loss;
                loss.gamma = v.refiner ? gamma : std::vector<double>(config.model.modalities(), 0.0);
                loss.zeta = v.ms ? config.ablation.zeta : 0.0;
                data::Splits cell{mask_labels(splits.train, fraction, derive_seed(seed, 3)), splits.val, splits.test};
                spdlog::info("ablation: fraction {} variant {} seed {}", fraction, v.name, seed);
                RunResult r = run_training(config, cell, loss, seed);
                rows.push_back({fraction, v.name, seed, r.test.values, r.silhouette});
            }
        }
    }
    return rows;
}

// -- commands --------------------------------------------------------------------

int cmd_generate(ExperimentConfig config, const fs::path& out) {
    if (config.data.source != "synthetic") throw ConfigError("generate needs data.source = 'synthetic'");
    data::Splits splits = load_data(config);
    fs::create_directories(out);
    data::save_jsonl(splits.train, out / "train.jsonl");
    data::save_jsonl(splits.val, out / "val.jsonl");
    data::save_jsonl(splits.test, out / "test.jsonl");
    ojson j = report_header(config, "generate");
    j["splits"] = {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}};
    write_json(out / "generate_report.json", j);
    return 0;
}

int cmd_grad_check(const ExperimentConfig& config, const fs::path& out) {
    const auto& g = config.grad_check;
    auto report = gradcheck::run(gradcheck::default_cases(config.seed), g.step, g.tolerance, g.floor, config.seed);
    fs::create_directories(out);
    ojson j = report_header(config, "grad-check");
    j["report"] = report.to_json();
    write_json(out / "grad_check.json", j);
    for (const auto& c : report.cases) {
        if (!c.pass) spdlog::error("gradient check failed for {}: max relative error {} {}", c.name, c.max_error, c.error);
    }
    return report.pass() ? 0 : 1;
}

int cmd_theorem(const ExperimentConfig& config, const fs::path& out) {
    auto report = run_theorem(config.theorem, config.seed);
    fs::create_directories(out);
    ojson j = report_header(config, "theorem");
    for (auto& [k, v] : report.json.items()) j[k] = v;
    write_json(out / "theorem.json", j);
    if (!report.pass) spdlog::error("{} clean instances failed", report.json["failed_instances"].get<std::size_t>());
    return report.pass ? 0 : 1;
}

int cmd_train(ExperimentConfig config, const fs::path& out, const std::optional<fs::path>& resume,
              std::optional<std::size_t> stop_at) {
    data::Splits splits = load_data(config);
    if (config.data.label_fraction < 1.0) {
        splits.train = mask_labels(splits.train, config.data.label_fraction, derive_seed(config.seed, 3));
    }
    std::optional<TrainState> state;
    if (resume) {
        std::ifstream in(*resume);
        if (!in) throw ConfigError("cannot open train state " + resume->string());
        try {
            state = TrainState::from_json(ojson::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("train state: ") + e.what(), 0);
        }
    }
    RunResult r = run_training(config, splits, config.loss, config.seed, state, stop_at);

    fs::create_directories(out);
    write_log_csv(out / "train_log.csv", r.train_log);
    if (!r.pretrain_log.empty()) write_log_csv(out / "pretrain_log.csv", r.pretrain_log);
    write_json(out / "checkpoint.json", params_to_json(r.params));
    write_json(out / "train_state.json", r.state.to_json());

    ojson j = report_header(config, "train");
    j["pretrain_steps"] = r.pretrain_log.size();
    if (!r.pretrain_log.empty()) {
        j["pretrain_refiner_loss"] = {{"first", r.pretrain_log.front().refiner}, {"last", r.pretrain_log.back().refiner}};
    }
    j["updates"] = r.state.step;
    j["finished"] = r.state.finished;
    j["selection_metric"] = config.train.selection_metric.empty() ? default_selection_metric(config.model.task)
                                                                  : config.train.selection_metric;
    j["best_step"] = r.state.best_step;
    j["best_val_metric"] = r.state.best_metric;
    j["test"] = r.test.to_json();
    j["test_silhouette"] = r.silhouette ? ojson(*r.silhouette) : ojson(nullptr);
    write_json(out / "train_report.json", j);
    return 0;
}

int cmd_ablate(ExperimentConfig config, const fs::path& out) {
    data::Splits splits = load_data(config);
    auto rows = run_ablation(config, splits);

    std::set<std::string> metric_names;
    for (const auto& r : rows)
        for (const auto& [k, _] : r.test) metric_names.insert(k);

    fs::create_directories(out);
    ojson runs = ojson::array();
    ojson cells = ojson::array();
    std::ofstream runs_csv(out / "ablation_runs.csv", std::ios::binary);
    std::ofstream table_csv(out / "ablation.csv", std::ios::binary);
    if (!runs_csv || !table_csv) throw Error("cannot write ablation tables in " + out.string());
    csv::Writer rw(runs_csv), tw(table_csv);

    std::vector<std::string> header{"label_fraction", "variant", "seed"};
    for (const auto& m : metric_names) header.push_back(m);
    header.push_back("silhouette");
    rw.row(header);
    std::vector<std::string> theader{"label_fraction", "variant", "seeds"};
    for (const auto& m : metric_names) {
        theader.push_back(m + "_mean");
        theader.push_back(m + "_std");
    }
    theader.push_back("silhouette_mean");
    theader.push_back("silhouette_std");
    tw.row(theader);

    auto metric_or_empty = [](const std::map<std::string, double>& m, const std::string& k) {
        auto it = m.find(k);
        return it == m.end() ? std::string() : csv::format_double(it->second);
    };

    for (const auto& r : rows) {
        std::vector<std::string> f{csv::format_double(r.fraction), r.variant, std::to_string(r.seed)};
        for (const auto& m : metric_names) f.push_back(metric_or_empty(r.test, m));
        f.push_back(r.silhouette ? csv::format_double(*r.silhouette) : "");
        rw.row(f);
        ojson e{{"label_fraction", r.fraction}, {"variant", r.variant}, {"seed", r.seed}, {"test", r.test}};
        e["silhouette"] = r.silhouette ? ojson(*r.silhouette) : ojson(nullptr);
        runs.push_back(e);
    }

    // rows are grouped by (fraction, variant) in run order
    for (std::size_t begin = 0; begin < rows.size();) {
        std::size_t end = begin;
        while (end < rows.size() && rows[end].fraction == rows[begin].fraction && rows[end].variant == rows[begin].variant) ++end;
        std::vector<std::string> f{csv::format_double(rows[begin].fraction), rows[begin].variant, std::to_string(end - begin)};
        ojson cell{{"label_fraction", rows[begin].fraction}, {"variant", rows[begin].variant}, {"seeds", end - begin}};
        for (const auto& m : metric_names) {
            std::vector<double> v;
            for (std::size_t i = begin; i < end; ++i) {
                auto it = rows[i].test.find(m);
                if (it != rows[i].test.end()) v.push_back(it->second);
            }
            f.push_back(v.empty() ? "" : csv::format_double(mean_of(v)));
            f.push_back(v.empty() ? "" : csv::format_double(stdev_of(v)));
            if (!v.empty()) cell[m] = {{"mean", mean_of(v)}, {"std", stdev_of(v)}};
        }
        std::vector<double> sil;
        for (std::size_t i = begin; i < end; ++i)
            if (rows[i].silhouette) sil.push_back(*rows[i].silhouette);
        f.push_back(sil.empty() ? "" : csv::format_double(mean_of(sil)));
        f.push_back(sil.empty() ? "" : csv::format_double(stdev_of(sil)));
        if (!sil.empty()) cell["silhouette"] = {{"mean", mean_of(sil)}, {"std", stdev_of(sil)}};
        tw.row(f);
        cells.push_back(cell);
        begin = end;
    }

    ojson j = report_header(config, "ablate");
    j["gamma"] = resolved_ablation_gamma(config);
    j["zeta"] = config.ablation.zeta;
    j["cells"] = cells;
    j["runs"] = runs;
    write_json(out / "ablation.json", j);
    return 0;
}

int cmd_export_embeddings(ExperimentConfig config, const fs::path& checkpoint, const std::string& split, const fs::path& out) {
    data::Splits splits = load_data(config);
    const ModalFeatureBatch* batch = nullptr;
    if (split == "train") {
        batch = &splits.train;
    } else if (split == "val") {
        batch = &splits.val;
    } else if (split == "test") {
        batch = &splits.test;
    } else {
        throw ConfigError("split must be train, val or test, got '" + split + "'");
    }

    std::ifstream in(checkpoint);
    if (!in) throw ConfigError("cannot open checkpoint " + checkpoint.string());
    ojson cj;
    try {
        cj = ojson::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what(), 0);
    }
    ReFNetModel model(config.model, params_from_json(cj));
    const Tensor emb = model.fuse(*batch);

    fs::create_directories(out);
    std::ofstream csv_out(out / "embeddings.csv", std::ios::binary);
    if (!csv_out) throw Error("cannot write embeddings.csv");
    csv::Writer w(csv_out);
    std::vector<std::string> header{"id", "label"};
    for (std::size_t c = 0; c < emb.cols(); ++c) header.push_back("e" + std::to_string(c + 1));
    w.row(header);
    for (std::size_t s = 0; s < batch->size(); ++s) {
        std::vector<std::string> f{batch->sample_ids[s], batch->label_mask.empty() || batch->label_mask[s] ? batch->label_key(s) : ""};
        for (std::size_t c = 0; c < emb.cols(); ++c) f.push_back(csv::format_double(emb(s, c)));
        w.row(f);
    }

    ojson j = report_header(config, "export-embeddings");
    j["checkpoint"] = checkpoint.filename().string();
    j["split"] = split;
    j["samples"] = batch->size();
    j["embed_dim"] = emb.cols();
    auto sil = embedding_silhouette(emb, *batch);
    j["silhouette"] = sil ? ojson(*sil) : ojson(nullptr);
    write_json(out / "embeddings_report.json", j);
    return 0;
}

}  // namespace refnet::experiment
