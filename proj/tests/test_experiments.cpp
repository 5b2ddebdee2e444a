// Experiment-preset tests: construction of the named presets (arms and their
// config deltas), the statistics helpers, and a miniature end-to-end preset
// run checking every artifact it leaves on disk.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ufnrec/config.hpp"
#include "ufnrec/experiments.hpp"

using namespace ufnrec;
using namespace ufnrec::experiments;
using nlohmann::json;

namespace {

// Flatten a config JSON into dotted keys for diffing.
std::map<std::string, json> flatten(const json& j) {
    std::map<std::string, json> out;
    for (auto& [k, v] : j.items()) {
        if (v.is_object())
            for (auto& [k2, v2] : v.items()) out[k + "." + k2] = v2;
        else
            out[k] = v;
    }
    return out;
}

std::set<std::string> changed_keys(const trainer::TrainConfig& base,
                                   const trainer::TrainConfig& modified) {
    auto fa = flatten(json::parse(config::to_json_string(base)));
    auto fb = flatten(json::parse(config::to_json_string(modified)));
    std::set<std::string> changed;
    for (auto& [k, v] : fa)
        if (fb.at(k) != v) changed.insert(k);
    return changed;
}

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& name) : path("experiments_test_" + name) {
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::map<std::string, std::string> csv_row(const std::string& header, const std::string& row) {
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    auto hs = split(header);
    auto rs = split(row);
    std::map<std::string, std::string> out;
    for (size_t i = 0; i < hs.size() && i < rs.size(); ++i) out[hs[i]] = rs[i];
    return out;
}

}  // namespace

TEST_CASE("the preset catalogue and arm structure match the study design") {
    auto names = preset_names();
    CHECK(names == std::vector<std::string>{"table3_ablation", "table4_removal_vs_util",
                                            "fig4_sweeps", "fig5_curves", "synth_acceptance"});
    CHECK_THROWS(make_preset("no_such_preset"));

    Preset t3 = make_preset("table3_ablation");
    REQUIRE(t3.arms.size() == 4);
    CHECK(t3.arms[0].name == "backbone");
    CHECK(t3.arms[1].name == "+FMR");
    CHECK(t3.arms[2].name == "+FCR");
    CHECK(t3.arms[3].name == "+UFN");
    CHECK(t3.n_seeds == 3);

    // Arms touch exactly the fields their override maps declare.
    for (const auto& arm : t3.arms) {
        trainer::TrainConfig cfg = t3.base;
        for (const auto& [k, v] : arm.overrides) config::apply_override(cfg, k, v);
        auto changed = changed_keys(t3.base, cfg);
        for (const auto& k : changed) {
            INFO("arm ", arm.name, " changed ", k);
            CHECK(arm.overrides.count(k) == 1);
        }
    }

    // The ablation deltas themselves.
    trainer::TrainConfig backbone = t3.base;
    for (auto& [k, v] : t3.arms[0].overrides) config::apply_override(backbone, k, v);
    CHECK(backbone.mining == negatives::MiningKind::none);
    CHECK(backbone.alpha == 0.0);

    trainer::TrainConfig fmr = t3.base;
    for (auto& [k, v] : t3.arms[1].overrides) config::apply_override(fmr, k, v);
    CHECK(fmr.mining == negatives::MiningKind::ufnrec_threshold);
    CHECK(fmr.fn_action == negatives::FnAction::reverse);
    CHECK(fmr.alpha == 0.0);

    trainer::TrainConfig fcr = t3.base;
    for (auto& [k, v] : t3.arms[2].overrides) config::apply_override(fcr, k, v);
    CHECK(fcr.fn_action == negatives::FnAction::keep_negative);
    CHECK(fcr.alpha > 0.0);

    trainer::TrainConfig ufn = t3.base;
    for (auto& [k, v] : t3.arms[3].overrides) config::apply_override(ufn, k, v);
    CHECK(ufn.mining == negatives::MiningKind::ufnrec_threshold);
    CHECK(ufn.fn_action == negatives::FnAction::reverse);
    CHECK(ufn.alpha > 0.0);

    Preset t4 = make_preset("table4_removal_vs_util");
    std::set<std::string> t4_names;
    for (auto& a : t4.arms) t4_names.insert(a.name);
    CHECK(t4_names.count("SASRec_R") == 1);
    CHECK(t4_names.count("+UFN") == 1);

    Preset acc = make_preset("synth_acceptance");
    REQUIRE(acc.arms.size() == 5);
    CHECK(acc.n_seeds == 3);

    Preset sweeps = make_preset("fig4_sweeps");
    CHECK(sweeps.n_seeds == 1);
    bool has_alpha_sweep = false;
    for (auto& a : sweeps.arms) has_alpha_sweep |= (a.name.rfind("alpha=", 0) == 0);
    CHECK(has_alpha_sweep);
}

TEST_CASE("helper functions: name sanitizing and moment statistics") {
    CHECK(sanitize_name("+UFN") == "_UFN");
    CHECK(sanitize_name("alpha=0.5") == "alpha_0_5");
    CHECK(sanitize_name("plain") == "plain");

    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    CHECK(mean_of(v) == doctest::Approx(2.5));
    // Sample standard deviation with the n-1 divisor.
    CHECK(sd_of(v) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    CHECK(sd_of({7.0}) == 0.0);
    CHECK(mean_of({}) == 0.0);
}

TEST_CASE("compare_runs pairs users and counts directions") {
    std::map<int, int> a = {{0, 3}, {1, 5}, {2, 9}};
    CompareReport self = compare_runs(a, a);
    CHECK(self.wins == 0);
    CHECK(self.losses == 0);
    CHECK(self.ties == 3);
    CHECK(self.p_value == 1.0);

    std::map<int, int> b = {{0, 4}, {1, 2}, {2, 9}};
    CompareReport r = compare_runs(a, b);  // a vs b: lower rank wins
    CHECK(r.wins == 1);    // user 0: 3 < 4
    CHECK(r.losses == 1);  // user 1: 5 > 2
    CHECK(r.ties == 1);

    std::map<int, int> mismatched = {{0, 1}, {7, 2}};
    CHECK_THROWS(compare_runs(a, mismatched));
}

TEST_CASE("mined_pairs folds the ledger's false sets per user") {
    negatives::RecordLedger led;
    led.mark_false(3, 0, 17);
    led.mark_false(3, 4, 17);  // same item at another step counts once
    led.mark_false(3, 2, 21);
    led.mark_false(8, 0, 5);
    auto mp = mined_pairs(led);
    REQUIRE(mp.size() == 2);
    CHECK(mp.at(3) == std::set<int>{17, 21});
    CHECK(mp.at(8) == std::set<int>{5});
}

TEST_CASE("a micro preset run writes every artifact") {
    // Tiny corpus and model so the full pipeline runs in seconds.
    Preset micro;
    micro.name = "micro";
    micro.base.enc.kind = encoder::EncoderConfig::Kind::mean_pool;
    micro.base.enc.d_model = 8;
    micro.base.enc.dropout = 0.0;
    micro.base.batch_size = 64;
    micro.base.max_epochs = 6;
    micro.base.early_stop_patience = 100;
    micro.base.warmup_policy = trainer::WarmupPolicyKind::fixed_epochs;
    micro.base.warmup_fixed_epochs = 1;
    micro.base.m = 2;
    micro.arms = {
        {"backbone", {{"mining", "none"}, {"alpha", "0"}}},
        {"+FCR", {{"mining", "ufnrec"}, {"fn_action", "keep_negative"}, {"alpha", "0.2"}}},
        {"+UFN", {{"mining", "ufnrec"}, {"fn_action", "reverse"}, {"alpha", "0.2"}}},
    };
    micro.n_seeds = 2;
    micro.seed_base = 500;

    DataSource src;
    src.is_synth = true;
    src.synth_cfg.n_users = 50;
    src.synth_cfg.n_items = 210;
    src.synth_cfg.latent_dim = 8;
    src.synth_cfg.seq_len_min = 6;
    src.synth_cfg.seq_len_max = 10;
    src.synth_cfg.plant_rate = 0.25;
    src.synth_cfg.seed = 77;

    TempDir dir("micro");
    PresetResult result = run_preset(micro, src, dir.path);
    CHECK(result.all_ok);
    REQUIRE(result.runs.size() == 6);  // 3 arms x 2 seeds

    // results.csv: header plus one row per run, readable by column name.
    auto lines = read_lines(dir.path + "/results.csv");
    REQUIRE(lines.size() == 7);
    for (size_t i = 1; i < lines.size(); ++i) {
        auto row = csv_row(lines[0], lines[i]);
        CHECK(row.at("preset") == "micro");
        CHECK(row.at("ok") == "1");
        CHECK(std::stod(row.at("test_ndcg10")) >= 0.0);
        CHECK(std::stod(row.at("test_ndcg10")) <= 1.0);
        CHECK(std::stoi(row.at("epochs")) == 6);
    }

    // The +FCR arm keeps negatives (no reversals) but pays consistency terms;
    // +UFN reverses. The CSV columns carry the audit.
    bool saw_fcr = false, saw_ufn = false;
    for (size_t i = 1; i < lines.size(); ++i) {
        auto row = csv_row(lines[0], lines[i]);
        if (row.at("arm") == "+FCR") {
            saw_fcr = true;
            CHECK(std::stol(row.at("reversed_positives")) == 0);
            CHECK(std::stol(row.at("kept_negatives")) > 0);
            CHECK(std::stol(row.at("consistency_terms")) > 0);
        }
        if (row.at("arm") == "+UFN") {
            saw_ufn = true;
            CHECK(std::stol(row.at("reversed_positives")) > 0);
            CHECK(std::stol(row.at("kept_negatives")) == 0);
        }
        if (row.at("arm") == "backbone") {
            CHECK(std::stol(row.at("n_false")) == 0);
            CHECK(row.at("mining_precision").empty());  // no mining, no score
        }
    }
    CHECK(saw_fcr);
    CHECK(saw_ufn);

    // Per-run directory with a manifest whose config round-trips.
    for (const auto& run : result.runs) {
        std::string run_dir =
            dir.path + "/" + sanitize_name(run.arm) + "/seed" + std::to_string(run.seed_index);
        json manifest = json::parse(std::ifstream(run_dir + "/manifest.json"));
        CHECK(manifest.at("status") == "done");
        CHECK(manifest.at("preset") == "micro");
        CHECK(manifest.at("arm") == run.arm);
        CHECK(manifest.at("seed") == run.seed);
        CHECK(manifest.at("code_version") == std::string(kCodeVersion));
        trainer::TrainConfig cfg = config::from_json_string(manifest.at("config").dump());
        CHECK(config::to_json_string(cfg) == config::to_json_string(run.cfg));
        CHECK(std::filesystem::exists(run_dir + "/checkpoint_best.bin"));
        CHECK(std::filesystem::exists(run_dir + "/reports.jsonl"));
    }

    // Significance table: per-seed and pooled rows, p in [0,1].
    auto sig = read_lines(dir.path + "/significance.csv");
    REQUIRE(sig.size() >= 2);
    CHECK(sig[0] == "arm,vs,scope,wins,losses,ties,p");
    bool pooled_seen = false;
    for (size_t i = 1; i < sig.size(); ++i) {
        auto row = csv_row(sig[0], sig[i]);
        double p = std::stod(row.at("p"));
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        pooled_seen |= (row.at("scope") == "pooled");
    }
    CHECK(pooled_seen);

    // Markdown summary and training-curve plot.
    auto md = read_lines(dir.path + "/results.md");
    CHECK(!md.empty());
    bool mentions_ufn = false;
    for (auto& l : md) mentions_ufn |= (l.find("+UFN") != std::string::npos);
    CHECK(mentions_ufn);
    CHECK(std::filesystem::exists(dir.path + "/curves_ndcg10.png"));

    // Mining-vs-planted scores on a synthetic source for the mining arms.
    for (const auto& run : result.runs) {
        if (run.arm == "+UFN") {
            CHECK(run.has_mining);
            CHECK(run.mining.mined > 0);
        }
        if (run.arm == "backbone") CHECK_FALSE(run.has_mining);
    }
}

TEST_CASE("an arm that fails is recorded without sinking the preset") {
    Preset broken;
    broken.name = "broken";
    broken.base.enc.kind = encoder::EncoderConfig::Kind::mean_pool;
    broken.base.enc.d_model = 8;
    broken.base.enc.dropout = 0.0;
    broken.base.max_epochs = 2;
    broken.base.warmup_policy = trainer::WarmupPolicyKind::fixed_epochs;
    broken.base.warmup_fixed_epochs = 1;
    broken.arms = {
        {"good", {{"mining", "none"}, {"alpha", "0"}}},
        {"bad", {{"alpha", "not_a_number"}}},
    };
    broken.n_seeds = 1;

    DataSource src;
    src.is_synth = true;
    src.synth_cfg.n_users = 30;
    src.synth_cfg.n_items = 205;
    src.synth_cfg.latent_dim = 4;
    src.synth_cfg.seq_len_min = 5;
    src.synth_cfg.seq_len_max = 8;
    src.synth_cfg.seed = 3;

    TempDir dir("broken");
    PresetResult result = run_preset(broken, src, dir.path);
    CHECK_FALSE(result.all_ok);
    REQUIRE(result.runs.size() == 2);
    CHECK(result.runs[0].ok);
    CHECK_FALSE(result.runs[1].ok);
    CHECK(!result.runs[1].error.empty());

    // Partial results persist: the good run's row is in the CSV with ok=1,
    // the bad one with ok=0 and its error preserved in the manifest.
    auto lines = read_lines(dir.path + "/results.csv");
    REQUIRE(lines.size() == 3);
    auto good = csv_row(lines[0], lines[1]);
    auto bad = csv_row(lines[0], lines[2]);
    CHECK(good.at("ok") == "1");
    CHECK(bad.at("ok") == "0");

    json manifest =
        json::parse(std::ifstream(dir.path + "/bad/seed0/manifest.json"));
    CHECK(manifest.at("status") == "failed");
    CHECK(!manifest.at("error").get<std::string>().empty());
}
