#include "ufnrec/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace ufnrec::config {

namespace {

std::string neg_mode_name(dataio::EvalNegMode m) {
    return m == dataio::EvalNegMode::exclude_history ? "exclude_history" : "exclude_positive_only";
}

dataio::EvalNegMode parse_neg_mode(const std::string& s) {
    if (s == "exclude_history") return dataio::EvalNegMode::exclude_history;
    if (s == "exclude_positive_only") return dataio::EvalNegMode::exclude_positive_only;
    throw std::runtime_error("unknown eval negative mode: " + s);
}

json to_json(const trainer::TrainConfig& c) {
    json j;
    j["encoder"]["kind"] = encoder::to_string(c.enc.kind);
    j["encoder"]["d_model"] = c.enc.d_model;
    j["encoder"]["n_layers"] = c.enc.n_layers;
    j["encoder"]["n_heads"] = c.enc.n_heads;
    j["encoder"]["max_len"] = c.enc.max_len;
    j["encoder"]["dropout"] = c.enc.dropout;
    j["encoder"]["share_output_embeddings"] = c.enc.share_output_embeddings;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["optimizer"] = trainer::to_string(c.optimizer);
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["clip_norm"] = c.clip_norm;
    j["max_epochs"] = c.max_epochs;
    j["early_stop_patience"] = c.early_stop_patience;
    j["seed"] = c.seed;
    j["eval_seed"] = c.eval_seed;
    j["warmup_policy"] = trainer::to_string(c.warmup_policy);
    j["warmup_fixed_epochs"] = c.warmup_fixed_epochs;
    j["warmup_rel_eps"] = c.warmup_rel_eps;
    j["warmup_window"] = c.warmup_window;
    j["warmup_cap"] = c.warmup_cap;
    j["mining"] = negatives::to_string(c.mining);
    j["m"] = c.m;
    j["count_mode"] = negatives::to_string(c.count_mode);
    j["fn_action"] = negatives::to_string(c.fn_action);
    j["n_negatives"] = c.n_negatives;
    j["variance_window"] = c.variance_window;
    j["variance_quantile"] = c.variance_quantile;
    j["variance_from_rec"] = c.variance_from_rec;
    j["variance_pool"] = c.variance_pool;
    j["alpha"] = c.alpha;
    j["ema_decay"] = c.ema_decay;
    j["eval_teacher"] = c.eval_teacher;
    j["eval_candidates"] = c.eval_candidates;
    j["eval_neg_mode"] = neg_mode_name(c.eval_neg_mode);
    return j;
}

trainer::TrainConfig from_json(const json& j) {
    trainer::TrainConfig c;
    json known = to_json(c);
    for (auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::runtime_error("unknown config key: " + key);
        if (key == "encoder")
            for (auto& [ekey, evalue] : value.items())
                if (!known["encoder"].contains(ekey))
                    throw std::runtime_error("unknown config key: encoder." + ekey);
    }
    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        if (e.contains("kind")) c.enc.kind = encoder::parse_encoder_kind(e["kind"]);
        if (e.contains("d_model")) c.enc.d_model = e["d_model"];
        if (e.contains("n_layers")) c.enc.n_layers = e["n_layers"];
        if (e.contains("n_heads")) c.enc.n_heads = e["n_heads"];
        if (e.contains("max_len")) c.enc.max_len = e["max_len"];
        if (e.contains("dropout")) c.enc.dropout = e["dropout"];
        if (e.contains("share_output_embeddings"))
            c.enc.share_output_embeddings = e["share_output_embeddings"];
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    if (j.contains("optimizer")) c.optimizer = trainer::parse_optimizer(j["optimizer"]);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    get("clip_norm", c.clip_norm);
    get("max_epochs", c.max_epochs);
    get("early_stop_patience", c.early_stop_patience);
    get("seed", c.seed);
    get("eval_seed", c.eval_seed);
    if (j.contains("warmup_policy"))
        c.warmup_policy = trainer::parse_warmup_policy(j["warmup_policy"]);
    get("warmup_fixed_epochs", c.warmup_fixed_epochs);
    get("warmup_rel_eps", c.warmup_rel_eps);
    get("warmup_window", c.warmup_window);
    get("warmup_cap", c.warmup_cap);
    if (j.contains("mining")) c.mining = negatives::parse_mining_kind(j["mining"]);
    get("m", c.m);
    if (j.contains("count_mode")) c.count_mode = negatives::parse_count_mode(j["count_mode"]);
    if (j.contains("fn_action")) c.fn_action = negatives::parse_fn_action(j["fn_action"]);
    get("n_negatives", c.n_negatives);
    get("variance_window", c.variance_window);
    get("variance_quantile", c.variance_quantile);
    get("variance_from_rec", c.variance_from_rec);
    get("variance_pool", c.variance_pool);
    get("alpha", c.alpha);
    get("ema_decay", c.ema_decay);
    get("eval_teacher", c.eval_teacher);
    get("eval_candidates", c.eval_candidates);
    if (j.contains("eval_neg_mode")) c.eval_neg_mode = parse_neg_mode(j["eval_neg_mode"]);
    return c;
}

}  // namespace

std::string to_json_string(const trainer::TrainConfig& cfg, int indent) {
    return to_json(cfg).dump(indent);
}

trainer::TrainConfig from_json_string(const std::string& text) {
    return from_json(json::parse(text));
}

trainer::TrainConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

void save_file(const trainer::TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << to_json_string(cfg) << '\n';
}

void apply_override(trainer::TrainConfig& cfg, const std::string& key, const std::string& value) {
    json j = to_json(cfg);
    json* slot = nullptr;
    if (key.rfind("encoder.", 0) == 0) {
        std::string sub = key.substr(8);
        if (!j["encoder"].contains(sub)) throw std::runtime_error("unknown config key: " + key);
        slot = &j["encoder"][sub];
    } else {
        if (!j.contains(key) || key == "encoder")
            throw std::runtime_error("unknown config key: " + key);
        slot = &j[key];
    }
    try {
        switch (slot->type()) {
            case json::value_t::string: *slot = value; break;
            case json::value_t::boolean:
                if (value == "true" || value == "1")
                    *slot = true;
                else if (value == "false" || value == "0")
                    *slot = false;
                else
                    throw std::runtime_error("expected a boolean");
                break;
            case json::value_t::number_float: {
                size_t pos = 0;
                double v = std::stod(value, &pos);
                if (pos != value.size()) throw std::runtime_error("trailing characters");
                *slot = v;
                break;
            }
            default: {
                size_t pos = 0;
                long long v = std::stoll(value, &pos);
                if (pos != value.size()) throw std::runtime_error("trailing characters");
                *slot = static_cast<int64_t>(v);
                break;
            }
        }
    } catch (const std::exception&) {
        throw std::runtime_error("bad value for " + key + ": " + value);
    }
    cfg = from_json(j);
}

const std::vector<std::string>& override_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        json j = to_json(trainer::TrainConfig{});
        for (auto& [key, value] : j.items()) {
            if (key == "encoder")
                for (auto& [ekey, ev] : value.items()) out.push_back("encoder." + ekey);
            else
                out.push_back(key);
        }
        return out;
    }();
    return keys;
}

}  // namespace ufnrec::config
