// Configuration serialization tests: JSON round-trips, unknown-key rejection,
// and the single override path shared by the CLI and the experiment presets.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>

#include <json.hpp>

#include "ufnrec/config.hpp"

using namespace ufnrec;
using namespace ufnrec::config;
using trainer::TrainConfig;

namespace {

TrainConfig nondefault_cfg() {
    TrainConfig cfg;
    cfg.enc.kind = encoder::EncoderConfig::Kind::mean_pool;
    cfg.enc.d_model = 48;
    cfg.enc.n_layers = 3;
    cfg.enc.n_heads = 4;
    cfg.enc.max_len = 33;
    cfg.enc.dropout = 0.35;
    cfg.enc.share_output_embeddings = false;
    cfg.learning_rate = 0.0042;
    cfg.batch_size = 96;
    cfg.optimizer = trainer::OptimizerKind::sgd;
    cfg.adam_beta1 = 0.85;
    cfg.adam_beta2 = 0.995;
    cfg.adam_eps = 1e-7;
    cfg.clip_norm = 5.5;
    cfg.max_epochs = 123;
    cfg.early_stop_patience = 17;
    cfg.seed = 987654321;
    cfg.eval_seed = 13;
    cfg.warmup_policy = trainer::WarmupPolicyKind::fixed_epochs;
    cfg.warmup_fixed_epochs = 6;
    cfg.warmup_rel_eps = 0.02;
    cfg.warmup_window = 4;
    cfg.warmup_cap = 77;
    cfg.mining = negatives::MiningKind::variance_based;
    cfg.m = 5;
    cfg.count_mode = negatives::CountMode::consecutive;
    cfg.fn_action = negatives::FnAction::keep_negative;
    cfg.n_negatives = 3;
    cfg.variance_window = 7;
    cfg.variance_quantile = 0.15;
    cfg.variance_from_rec = false;
    cfg.variance_pool = 12;
    cfg.alpha = 0.31;
    cfg.ema_decay = 0.9901;
    cfg.eval_teacher = true;
    cfg.eval_candidates = 64;
    cfg.eval_neg_mode = dataio::EvalNegMode::exclude_positive_only;
    return cfg;
}

bool configs_equal(const TrainConfig& a, const TrainConfig& b) {
    return to_json_string(a) == to_json_string(b);
}

}  // namespace

TEST_CASE("JSON round-trip preserves every field") {
    TrainConfig cfg = nondefault_cfg();
    std::string text = to_json_string(cfg);
    TrainConfig back = from_json_string(text);
    CHECK(configs_equal(cfg, back));

    // Defaults round-trip too (and differ from the non-default config).
    TrainConfig def;
    CHECK(configs_equal(def, from_json_string(to_json_string(def))));
    CHECK_FALSE(configs_equal(def, cfg));
}

TEST_CASE("file save/load round-trip") {
    std::string path = "config_test_roundtrip.json";
    TrainConfig cfg = nondefault_cfg();
    save_file(cfg, path);
    TrainConfig back = load_file(path);
    CHECK(configs_equal(cfg, back));
    std::remove(path.c_str());
    CHECK_THROWS(load_file("config_test_missing_file.json"));
}

TEST_CASE("unknown keys are rejected at both levels") {
    TrainConfig def;
    std::string good = to_json_string(def);

    std::string bad1 = good;
    bad1.insert(bad1.find_last_of('}'), ",\"not_a_field\": 1");
    CHECK_THROWS(from_json_string(bad1));

    // Inside the encoder block as well.
    std::string bad2 = good;
    size_t enc_pos = bad2.find("\"encoder\"");
    REQUIRE(enc_pos != std::string::npos);
    size_t open = bad2.find('{', enc_pos);
    bad2.insert(open + 1, "\"mystery\": 2,");
    CHECK_THROWS(from_json_string(bad2));

    CHECK_THROWS(from_json_string("[1,2,3]"));
    CHECK_THROWS(from_json_string("not json at all"));
}

TEST_CASE("apply_override: typed routing for every advertised key") {
    TrainConfig cfg;

    apply_override(cfg, "alpha", "0.45");
    CHECK(cfg.alpha == 0.45);
    apply_override(cfg, "m", "7");
    CHECK(cfg.m == 7);
    apply_override(cfg, "mining", "variance");
    CHECK(cfg.mining == negatives::MiningKind::variance_based);
    apply_override(cfg, "mining", "none");
    CHECK(cfg.mining == negatives::MiningKind::none);
    apply_override(cfg, "fn_action", "keep_negative");
    CHECK(cfg.fn_action == negatives::FnAction::keep_negative);
    apply_override(cfg, "count_mode", "consecutive");
    CHECK(cfg.count_mode == negatives::CountMode::consecutive);
    apply_override(cfg, "ema_decay", "0.9");
    CHECK(cfg.ema_decay == 0.9);
    apply_override(cfg, "n_negatives", "4");
    CHECK(cfg.n_negatives == 4);
    apply_override(cfg, "eval_neg_mode", "exclude_positive_only");
    CHECK(cfg.eval_neg_mode == dataio::EvalNegMode::exclude_positive_only);
    apply_override(cfg, "seed", "424242");
    CHECK(cfg.seed == 424242);
    apply_override(cfg, "encoder.d_model", "24");
    CHECK(cfg.enc.d_model == 24);
    apply_override(cfg, "encoder.kind", "mean_pool");
    CHECK(cfg.enc.kind == encoder::EncoderConfig::Kind::mean_pool);
    apply_override(cfg, "encoder.share_output_embeddings", "false");
    CHECK(cfg.enc.share_output_embeddings == false);
    apply_override(cfg, "optimizer", "sgd");
    CHECK(cfg.optimizer == trainer::OptimizerKind::sgd);
    apply_override(cfg, "warmup_policy", "fixed_epochs");
    CHECK(cfg.warmup_policy == trainer::WarmupPolicyKind::fixed_epochs);
    apply_override(cfg, "eval_teacher", "true");
    CHECK(cfg.eval_teacher == true);
    apply_override(cfg, "variance_from_rec", "false");
    CHECK(cfg.variance_from_rec == false);
}

TEST_CASE("apply_override: unknown keys and bad values throw") {
    TrainConfig cfg;
    CHECK_THROWS(apply_override(cfg, "no_such_key", "1"));
    CHECK_THROWS(apply_override(cfg, "encoder.no_such_key", "1"));
    CHECK_THROWS(apply_override(cfg, "alpha", "banana"));
    CHECK_THROWS(apply_override(cfg, "m", "2.5th"));
    CHECK_THROWS(apply_override(cfg, "mining", "psychic"));
    CHECK_THROWS(apply_override(cfg, "fn_action", "explode"));
    CHECK_THROWS(apply_override(cfg, "eval_teacher", "maybe"));
    // Failed overrides must not half-apply.
    CHECK(configs_equal(cfg, TrainConfig{}));
}

TEST_CASE("override_keys covers the whole config surface") {
    const auto& keys = override_keys();
    std::set<std::string> key_set(keys.begin(), keys.end());
    CHECK(key_set.size() == keys.size());  // no duplicates

    // Overriding every key with its own serialized value reproduces the
    // donor config exactly: proves the list is complete and the parsers
    // agree with the serializer.
    TrainConfig donor = nondefault_cfg();
    nlohmann::json dumped = nlohmann::json::parse(to_json_string(donor));

    auto value_of = [&](const std::string& key) -> std::string {
        nlohmann::json v = (key.rfind("encoder.", 0) == 0) ? dumped.at("encoder").at(key.substr(8))
                                                           : dumped.at(key);
        return v.is_string() ? v.get<std::string>() : v.dump();
    };

    // encoder.kind first so later encoder overrides land on a valid variant.
    std::vector<std::string> ordered(keys.begin(), keys.end());
    std::stable_partition(ordered.begin(), ordered.end(),
                          [](const std::string& k) { return k == "encoder.kind"; });

    TrainConfig built;
    std::set<std::string> flattened;
    for (auto& [k, v] : dumped.items()) {
        if (k == "encoder")
            for (auto& [ek, ev] : v.items()) flattened.insert("encoder." + ek);
        else
            flattened.insert(k);
    }
    CHECK(flattened == key_set);  // the advertised list covers the JSON surface

    for (const auto& key : ordered) apply_override(built, key, value_of(key));
    CHECK(configs_equal(built, donor));
}
