#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "refnet/csv.hpp"
#include "refnet/errors.hpp"
#include "refnet/experiment.hpp"

using namespace refnet;
using namespace refnet::experiment;
using nlohmann::json;

namespace {

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json tiny_config() {
    return json::parse(R"({
        "seed": 3,
        "data": {"source": "synthetic", "modalities": 2, "dims": [3, 2], "classes": 2,
                 "n_train": 40, "n_val": 20, "n_test": 20, "mode": "complementary"},
        "model": {"embed_dim": 4, "fusion_hidden": 4},
        "loss": {"gamma": [0.1, 0.1], "zeta": 0.1},
        "train": {"max_epochs": 2, "batch_size": 8, "base_lr": 0.01, "pretrain_epochs": 1},
        "ablation": {"label_fractions": [0.5], "seeds": [0, 1]}
    })");
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("refnet_exp_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("CSV fields are quoted per RFC 4180") {
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("a,b") == "\"a,b\"");
    CHECK(csv::escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv::escape("two\nlines") == "\"two\nlines\"");
    std::ostringstream out;
    csv::Writer w(out);
    w.row({"x", "y,z"});
    w.row({"1", ""});
    CHECK(out.str() == "x,\"y,z\"\r\n1,\r\n");
}

TEST_CASE("doubles print in shortest round-trip form") {
    CHECK(csv::format_double(0.1) == "0.1");
    CHECK(csv::format_double(1.0) == "1");
    CHECK(std::stod(csv::format_double(0.30000000000000004)) == 0.30000000000000004);
    CHECK(std::stod(csv::format_double(-2.5e-300)) == -2.5e-300);
}

TEST_CASE("config defaults and round-trip") {
    auto c = ExperimentConfig::from_json(json::object());
    CHECK(c.loss.alpha == 50.0);
    CHECK(c.loss.beta == 2.0);
    CHECK(c.ablation.label_fractions == std::vector<double>{0.05, 0.10, 0.20});
    auto again = ExperimentConfig::from_json(json::parse(c.to_json().dump()));
    CHECK(again.to_json() == c.to_json());
}

TEST_CASE("unknown keys are rejected") {
    auto j = tiny_config();
    j["trian"] = json::object();
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = tiny_config();
    j["loss"]["zeta_typo"] = 1;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = tiny_config();
    j["train"]["batch_size"] = -4;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("eta is accepted as an alias of gamma") {
    auto j = tiny_config();
    j["loss"].erase("gamma");
    j["loss"]["eta"] = {0.2, 0.3};
    auto c = ExperimentConfig::from_json(j);
    CHECK(c.loss.gamma == std::vector<double>{0.2, 0.3});
    j["loss"]["gamma"] = {0.1, 0.1};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("loading data completes the model dimensions") {
    auto c = ExperimentConfig::from_json(tiny_config());
    auto splits = load_data(c);
    CHECK(c.model.input_dims == std::vector<std::size_t>{3, 2});
    CHECK(c.model.num_classes == 2);
    CHECK(splits.train.size() == 40);
}

TEST_CASE("training runs end to end") {
    auto c = ExperimentConfig::from_json(tiny_config());
    auto splits = load_data(c);
    auto r = run_training(c, splits, c.loss, c.seed);
    CHECK_FALSE(r.pretrain_log.empty());
    CHECK(r.train_log.size() == 10);
    CHECK(r.test.values.count("accuracy") == 1);
    auto again = run_training(c, splits, c.loss, c.seed);
    CHECK(again.params == r.params);
}

TEST_CASE("theorem sweep passes on a reduced grid") {
    TheoremConfig t;
    t.modalities = {2, 3};
    t.instances = 3;
    auto r = run_theorem(t, 0);
    CHECK(r.pass);
    CHECK(r.json["failed_instances"] == 0);
    CHECK(r.json["checked_instances"].get<std::size_t>() > 0);
}

TEST_CASE("commands write deterministic artifacts that embed the config") {
    auto c = ExperimentConfig::from_json(tiny_config());
    auto a = scratch("train_a"), b = scratch("train_b");
    CHECK(cmd_train(c, a) == 0);
    CHECK(cmd_train(c, b) == 0);
    for (const char* f : {"train_log.csv", "pretrain_log.csv", "checkpoint.json", "train_state.json", "train_report.json"}) {
        INFO(f);
        CHECK(std::filesystem::exists(a / f));
        CHECK(read_text(a / f) == read_text(b / f));
    }
    auto report = json::parse(read_text(a / "train_report.json"));
    CHECK(report["seed"] == 3);
    CHECK(report["config"]["data"]["mode"] == "complementary");
    CHECK(read_text(a / "train_log.csv").rfind("step,L_total,L_downstream,L_refiner,L_MS,learning_rate\r\n", 0) == 0);

    auto e = scratch("emb");
    CHECK(cmd_export_embeddings(c, a / "checkpoint.json", "test", e) == 0);
    auto emb = read_text(e / "embeddings.csv");
    CHECK(emb.rfind("id,label,e1,e2,e3,e4\r\n", 0) == 0);
    for (const auto& p : {a, b, e}) std::filesystem::remove_all(p);
}

TEST_CASE("resuming from a saved state matches the uninterrupted run") {
    auto j = tiny_config();
    j["train"]["pretrain_epochs"] = 0;
    j["train"]["max_epochs"] = 4;
    auto full = ExperimentConfig::from_json(j);
    auto a = scratch("resume_full");
    CHECK(cmd_train(full, a) == 0);

    auto b = scratch("resume_part");
    CHECK(cmd_train(full, b, std::nullopt, 9) == 0);
    CHECK(json::parse(read_text(b / "train_report.json"))["finished"] == false);
    auto c = scratch("resume_rest");
    CHECK(cmd_train(full, c, b / "train_state.json") == 0);
    CHECK(read_text(a / "checkpoint.json") == read_text(c / "checkpoint.json"));
    CHECK(read_text(a / "train_state.json") == read_text(c / "train_state.json"));
    for (const auto& p : {a, b, c}) std::filesystem::remove_all(p);
}

TEST_CASE("ablation writes one row per variant and seed") {
    auto c = ExperimentConfig::from_json(tiny_config());
    auto out = scratch("ablate");
    CHECK(cmd_ablate(c, out) == 0);
    auto runs = read_text(out / "ablation_runs.csv");
    CHECK(std::count(runs.begin(), runs.end(), '\n') == 1 + 3 * 2);
    auto table = read_text(out / "ablation.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 3);
    auto j = json::parse(read_text(out / "ablation.json"));
    CHECK(j["cells"].size() == 3);
    CHECK(j["config"]["seed"] == 3);
    std::filesystem::remove_all(out);
}
