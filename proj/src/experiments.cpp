#include "ufnrec/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ufnrec/config.hpp"
#include "ufnrec/eval.hpp"
#include "ufnrec/plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ufnrec::experiments {

namespace {

// Desk-scale base: small model, short runs, fixed eval seed so every arm
// ranks identical candidate sets and per-user sign tests pair up.
trainer::TrainConfig desk_base() {
    trainer::TrainConfig cfg;
    cfg.enc.kind = encoder::EncoderConfig::Kind::self_attention;
    cfg.enc.d_model = 32;
    cfg.enc.n_layers = 2;
    cfg.enc.n_heads = 2;
    cfg.enc.max_len = 50;
    cfg.enc.dropout = 0.2;
    cfg.learning_rate = 0.001;
    cfg.batch_size = 128;
    cfg.max_epochs = 60;
    cfg.early_stop_patience = 10;
    cfg.eval_seed = 7;
    return cfg;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

PresetArm arm(std::string name, std::map<std::string, std::string> ov) {
    return PresetArm{std::move(name), std::move(ov)};
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::string fmt(double v, int prec = 6) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

double metric_or(const std::map<int, double>& m, int k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
}

json data_json(const DataSource& src) {
    json j;
    if (src.is_synth) {
        j["source"] = "synth";
        j["n_users"] = src.synth_cfg.n_users;
        j["n_items"] = src.synth_cfg.n_items;
        j["latent_dim"] = src.synth_cfg.latent_dim;
        j["seq_len_min"] = src.synth_cfg.seq_len_min;
        j["seq_len_max"] = src.synth_cfg.seq_len_max;
        j["plant_rate"] = src.synth_cfg.plant_rate;
        j["noise_temp"] = src.synth_cfg.noise_temp;
        j["seed"] = src.synth_cfg.seed;
    } else {
        j["source"] = "file";
        j["path"] = src.path;
        j["subsample_users"] = src.subsample_users;
    }
    return j;
}

void write_manifest(const std::string& path, const Preset& preset, const DataSource& data,
                    const RunRecord& rec, const std::string& status) {
    json j;
    j["preset"] = preset.name;
    j["arm"] = rec.arm;
    j["seed_index"] = rec.seed_index;
    j["seed"] = rec.seed;
    j["code_version"] = kCodeVersion;
    j["status"] = status;
    j["data"] = data_json(data);
    j["config"] = json::parse(config::to_json_string(rec.cfg));
    if (status == "done" || status == "failed") {
        j["ok"] = rec.ok;
        j["error"] = rec.error;
        j["wall_time_s"] = rec.wall_time;
        if (rec.ok) {
            json m;
            m["best_epoch"] = rec.result.best_epoch;
            m["best_valid_ndcg10"] = rec.result.best_valid_ndcg10;
            m["warmup_epochs"] = rec.result.warmup_epochs;
            m["epochs"] = rec.result.history.size();
            m["valid_hr10"] = metric_or(rec.result.valid_report.hr, 10);
            m["valid_ndcg10"] = metric_or(rec.result.valid_report.ndcg, 10);
            m["test_hr10"] = metric_or(rec.result.test_report.hr, 10);
            m["test_ndcg10"] = metric_or(rec.result.test_report.ndcg, 10);
            m["n_false"] = rec.result.ledger.false_total();
            if (rec.has_mining) {
                m["mining_precision"] = rec.mining.precision;
                m["mining_recall"] = rec.mining.recall;
                m["mining_random_baseline"] = rec.mining.random_baseline;
            }
            j["metrics"] = m;
        }
    }
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

const char* kCsvHeader =
    "preset,arm,seed_index,seed,ok,error,epochs,warmup_epochs,best_epoch,best_valid_ndcg10,"
    "valid_hr10,valid_ndcg10,test_hr1,test_hr5,test_hr10,test_ndcg1,test_ndcg5,test_ndcg10,"
    "n_rec,n_false,mined_pairs,mining_hits,mining_precision,mining_recall,"
    "mining_random_baseline,reversed_positives,kept_negatives,consistency_terms,wall_time_s";

std::string csv_row(const Preset& preset, const RunRecord& r) {
    std::ostringstream os;
    os << preset.name << ',' << csv_escape(r.arm) << ',' << r.seed_index << ',' << r.seed << ','
       << (r.ok ? 1 : 0) << ',' << csv_escape(r.error) << ',';
    if (r.ok) {
        const auto& res = r.result;
        os << res.history.size() << ',' << res.warmup_epochs << ',' << res.best_epoch << ','
           << fmt(res.best_valid_ndcg10) << ',' << fmt(metric_or(res.valid_report.hr, 10)) << ','
           << fmt(metric_or(res.valid_report.ndcg, 10)) << ','
           << fmt(metric_or(res.test_report.hr, 1)) << ','
           << fmt(metric_or(res.test_report.hr, 5)) << ','
           << fmt(metric_or(res.test_report.hr, 10)) << ','
           << fmt(metric_or(res.test_report.ndcg, 1)) << ','
           << fmt(metric_or(res.test_report.ndcg, 5)) << ','
           << fmt(metric_or(res.test_report.ndcg, 10)) << ',' << res.ledger.rec_total() << ','
           << res.ledger.false_total() << ',';
        if (r.has_mining)
            os << r.mining.mined << ',' << r.mining.hits << ','
               << (r.mining.has_precision ? fmt(r.mining.precision) : std::string()) << ','
               << fmt(r.mining.recall) << ',' << fmt(r.mining.random_baseline) << ',';
        else
            os << ",,,,,";
        os << r.result.term_counts.reversed_positives << ',' << r.result.term_counts.kept_negatives
           << ',' << r.result.term_counts.consistency << ',' << fmt(r.wall_time, 2);
    } else {
        os << ",,,,,,,,,,,,,,,,,,,,,," << fmt(r.wall_time, 2);
    }
    return os.str();
}

struct ArmStats {
    std::vector<double> test_hr10, test_ndcg10, best_valid;
};

void write_results_md(const std::string& path, const Preset& preset,
                      const std::vector<RunRecord>& runs,
                      const std::map<std::string, double>& pooled_p) {
    // Aggregate per arm in declaration order.
    std::vector<std::string> order;
    std::map<std::string, ArmStats> stats;
    for (const auto& r : runs) {
        if (!stats.count(r.arm)) order.push_back(r.arm);
        auto& s = stats[r.arm];
        if (!r.ok) continue;
        s.test_hr10.push_back(metric_or(r.result.test_report.hr, 10));
        s.test_ndcg10.push_back(metric_or(r.result.test_report.ndcg, 10));
        s.best_valid.push_back(r.result.best_valid_ndcg10);
    }
    std::ofstream out(path);
    out << "# " << preset.name << "\n\n";
    out << "Mean over completed seeds; +/- is the sample standard deviation. p-values are\n"
           "pooled two-sided sign tests on paired per-user test ranks against `"
        << (order.empty() ? std::string("-") : order.front()) << "`.\n\n";
    out << "| arm | seeds | test HR@10 | test NDCG@10 | best valid NDCG@10 | p vs baseline |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto& name : order) {
        const auto& s = stats[name];
        out << "| " << name << " | " << s.test_ndcg10.size() << " | ";
        if (s.test_ndcg10.empty()) {
            out << "- | - | - | - |\n";
            continue;
        }
        out << fmt(mean_of(s.test_hr10), 4) << " +/- " << fmt(sd_of(s.test_hr10), 4) << " | "
            << fmt(mean_of(s.test_ndcg10), 4) << " +/- " << fmt(sd_of(s.test_ndcg10), 4) << " | "
            << fmt(mean_of(s.best_valid), 4) << " +/- " << fmt(sd_of(s.best_valid), 4) << " | ";
        auto it = pooled_p.find(name);
        if (it == pooled_p.end()) out << "- |\n";
        else out << fmt(it->second, 4) << " |\n";
    }
    out << "\n";
    // Mining summary when any run has one.
    bool any_mining = false;
    for (const auto& r : runs) any_mining = any_mining || (r.ok && r.has_mining);
    if (any_mining) {
        out << "## Mining vs planted ground truth\n\n";
        out << "| arm | seed | mined | hits | precision | recall | random baseline |\n";
        out << "|---|---|---|---|---|---|---|\n";
        for (const auto& r : runs) {
            if (!r.ok || !r.has_mining) continue;
            out << "| " << r.arm << " | " << r.seed_index << " | " << r.mining.mined << " | "
                << r.mining.hits << " | "
                << (r.mining.has_precision ? fmt(r.mining.precision, 4) : std::string("-"))
                << " | " << fmt(r.mining.recall, 4) << " | " << fmt(r.mining.random_baseline, 4)
                << " |\n";
        }
        out << "\n";
    }
}

// Pool paired per-user test ranks across seeds: user u of seed k pairs with
// the same (k, u) in the baseline arm.
double pooled_sign_test(const std::vector<const RunRecord*>& base,
                        const std::vector<const RunRecord*>& arm_runs, int* wins_out = nullptr,
                        int* losses_out = nullptr, int* ties_out = nullptr) {
    std::map<int, int> a, b;
    int stride = 0;
    for (auto* r : base)
        for (const auto& [u, _] : r->result.test_report.per_user_rank) stride = std::max(stride, u + 1);
    for (auto* r : arm_runs)
        for (const auto& [u, _] : r->result.test_report.per_user_rank) stride = std::max(stride, u + 1);
    for (auto* r : base)
        for (const auto& [u, rank] : r->result.test_report.per_user_rank)
            a[r->seed_index * stride + u] = rank;
    for (auto* r : arm_runs)
        for (const auto& [u, rank] : r->result.test_report.per_user_rank)
            b[r->seed_index * stride + u] = rank;
    // Keep the intersection so a failed seed on one side drops its pairs.
    std::map<int, int> a2, b2;
    for (const auto& [k, v] : a) {
        auto it = b.find(k);
        if (it != b.end()) {
            a2[k] = v;
            b2[k] = it->second;
        }
    }
    if (a2.empty()) return 1.0;
    return eval::sign_test_p(b2, a2, wins_out, losses_out, ties_out);
}

void write_significance(const std::string& path, const std::vector<RunRecord>& runs,
                        std::map<std::string, double>* pooled_out) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord*>> by_arm;
    for (const auto& r : runs) {
        if (!by_arm.count(r.arm)) order.push_back(r.arm);
        if (r.ok) by_arm[r.arm].push_back(&r);
        else by_arm[r.arm];
    }
    std::ofstream out(path);
    out << "arm,vs,scope,wins,losses,ties,p\n";
    if (order.empty()) return;
    const std::string& base_name = order.front();
    const auto& base = by_arm[base_name];
    for (size_t i = 1; i < order.size(); ++i) {
        const auto& arm_runs = by_arm[order[i]];
        // Per-seed tests.
        for (auto* br : base)
            for (auto* ar : arm_runs) {
                if (br->seed_index != ar->seed_index) continue;
                int w = 0, l = 0, t = 0;
                double p = eval::sign_test_p(ar->result.test_report.per_user_rank,
                                             br->result.test_report.per_user_rank, &w, &l, &t);
                out << csv_escape(order[i]) << ',' << csv_escape(base_name) << ",seed"
                    << ar->seed_index << ',' << w << ',' << l << ',' << t << ',' << fmt(p) << "\n";
            }
        int w = 0, l = 0, t = 0;
        double p = pooled_sign_test(base, arm_runs, &w, &l, &t);
        out << csv_escape(order[i]) << ',' << csv_escape(base_name) << ",pooled," << w << ',' << l
            << ',' << t << ',' << fmt(p) << "\n";
        (*pooled_out)[order[i]] = p;
    }
}

void write_curve_plot(const std::string& out_dir, const std::vector<RunRecord>& runs) {
    // Validation NDCG@10 per epoch, seed 0 of every completed arm.
    std::vector<plot::Series> series;
    std::vector<std::string> seen;
    for (const auto& r : runs) {
        if (!r.ok || r.seed_index != 0 || r.result.history.empty()) continue;
        if (std::find(seen.begin(), seen.end(), r.arm) != seen.end()) continue;
        seen.push_back(r.arm);
        plot::Series s;
        s.label = r.arm;
        for (const auto& e : r.result.history) {
            s.x.push_back(e.epoch);
            s.y.push_back(e.valid_ndcg10);
        }
        series.push_back(std::move(s));
    }
    if (!series.empty())
        plot::write_line_png(out_dir + "/curves_ndcg10.png", "validation NDCG@10 by epoch",
                             "epoch", "NDCG@10", series);
}

void write_sweep_plots(const std::string& out_dir, const std::vector<RunRecord>& runs) {
    // Arms named "<group>=<value>" aggregate into one plot per group:
    // swept value on x, mean test NDCG@10 on y.
    std::map<std::string, std::map<double, std::vector<double>>> groups;
    std::vector<std::string> group_order;
    for (const auto& r : runs) {
        if (!r.ok) continue;
        auto eq = r.arm.find('=');
        if (eq == std::string::npos) continue;
        std::string group = r.arm.substr(0, eq);
        double value = 0.0;
        try {
            value = std::stod(r.arm.substr(eq + 1));
        } catch (...) {
            continue;
        }
        if (!groups.count(group)) group_order.push_back(group);
        groups[group][value].push_back(metric_or(r.result.test_report.ndcg, 10));
    }
    for (const auto& g : group_order) {
        plot::Series s;
        s.label = g;
        for (const auto& [v, ys] : groups[g]) {
            s.x.push_back(v);
            s.y.push_back(mean_of(ys));
        }
        if (s.x.size() < 1) continue;
        plot::write_line_png(out_dir + "/sweep_" + sanitize_name(g) + ".png",
                             "test NDCG@10 vs " + g, g, "NDCG@10", {s});
    }
}

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {
        "table3_ablation", "table4_removal_vs_util", "fig4_sweeps", "fig5_curves",
        "synth_acceptance",
    };
    return names;
}

Preset make_preset(const std::string& name) {
    Preset p;
    p.name = name;
    p.base = desk_base();
    p.n_seeds = 3;
    p.seed_base = 100;

    if (name == "table3_ablation") {
        p.arms = {
            arm("backbone", {{"mining", "none"}, {"alpha", "0"}}),
            arm("+FMR", {{"mining", "ufnrec"}, {"fn_action", "reverse"}, {"alpha", "0"}}),
            arm("+FCR", {{"mining", "ufnrec"}, {"fn_action", "keep_negative"}}),
            arm("+UFN", {{"mining", "ufnrec"}, {"fn_action", "reverse"}}),
        };
    } else if (name == "table4_removal_vs_util") {
        p.arms = {
            arm("SASRec", {{"mining", "none"}, {"alpha", "0"}}),
            arm("SASRec_R", {{"mining", "ufnrec"}, {"fn_action", "remove"}, {"alpha", "0"}}),
            arm("+SRNS_R", {{"mining", "variance"},
                            {"variance_from_rec", "true"},
                            {"fn_action", "remove"},
                            {"alpha", "0"}}),
            arm("+SRNS", {{"mining", "variance"},
                          {"variance_from_rec", "false"},
                          {"fn_action", "remove"},
                          {"alpha", "0"}}),
            arm("+UFN_srns_R", {{"mining", "variance"},
                                {"variance_from_rec", "true"},
                                {"fn_action", "reverse"}}),
            arm("+UFN_srns", {{"mining", "variance"},
                              {"variance_from_rec", "false"},
                              {"fn_action", "reverse"}}),
            arm("+UFN", {{"mining", "ufnrec"}, {"fn_action", "reverse"}}),
        };
    } else if (name == "fig4_sweeps") {
        p.n_seeds = 1;
        for (double a : {0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5})
            p.arms.push_back(arm("alpha=" + num(a), {{"alpha", num(a)}}));
        for (int m : {1, 2, 3, 4, 6, 8, 10})
            p.arms.push_back(arm("m=" + num(m), {{"m", num(m)}}));
        for (double d : {0.9, 0.99, 0.995, 0.999})
            p.arms.push_back(arm("ema_decay=" + num(d), {{"ema_decay", num(d)}}));
        for (int b : {32, 64, 128, 256, 512})
            p.arms.push_back(arm("batch_size=" + num(b), {{"batch_size", num(b)}}));
    } else if (name == "fig5_curves") {
        p.n_seeds = 1;
        // Full-length curves: disable early stopping so trajectories compare.
        p.arms = {
            arm("backbone",
                {{"mining", "none"}, {"alpha", "0"}, {"early_stop_patience", "1000"}}),
            arm("+UFN",
                {{"mining", "ufnrec"}, {"fn_action", "reverse"}, {"early_stop_patience", "1000"}}),
        };
    } else if (name == "synth_acceptance") {
        p.arms = {
            arm("backbone", {{"mining", "none"}, {"alpha", "0"}}),
            arm("+FMR", {{"mining", "ufnrec"}, {"fn_action", "reverse"}, {"alpha", "0"}}),
            arm("+FCR", {{"mining", "ufnrec"}, {"fn_action", "keep_negative"}}),
            arm("+UFN", {{"mining", "ufnrec"}, {"fn_action", "reverse"}}),
            arm("SASRec_R", {{"mining", "ufnrec"}, {"fn_action", "remove"}, {"alpha", "0"}}),
        };
    } else {
        throw std::runtime_error("unknown preset: " + name);
    }
    return p;
}

dataio::InteractionDataset load_source(const DataSource& src, synth::SynthCorpus* corpus_out) {
    if (src.is_synth) {
        synth::SynthCorpus corpus = synth::generate(src.synth_cfg);
        dataio::InteractionDataset ds = corpus.dataset;
        if (corpus_out) *corpus_out = std::move(corpus);
        return ds;
    }
    dataio::InteractionDataset ds = dataio::load_canonical(src.path);
    if (src.subsample_users > 0 && src.subsample_users < ds.user_count) {
        ds.sequences.resize(src.subsample_users);
        ds.user_keys.resize(src.subsample_users);
        ds.user_count = src.subsample_users;
    }
    return ds;
}

std::map<int, std::set<int>> mined_pairs(const negatives::RecordLedger& ledger) {
    std::map<int, std::set<int>> mined;
    for (const auto& [key, items] : ledger.falses)
        for (int it : items) mined[key.first].insert(it);
    return mined;
}

std::string sanitize_name(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return out;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mu = mean_of(v), s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

CompareReport compare_runs(const std::map<int, int>& ranks_a, const std::map<int, int>& ranks_b) {
    if (ranks_a.size() != ranks_b.size())
        throw std::runtime_error("rank dumps cover different user sets; candidate sets cannot match");
    for (const auto& [u, _] : ranks_a)
        if (!ranks_b.count(u))
            throw std::runtime_error(
                "rank dumps cover different user sets; candidate sets cannot match");
    CompareReport rep;
    rep.p_value = eval::sign_test_p(ranks_a, ranks_b, &rep.wins, &rep.losses, &rep.ties);
    return rep;
}

PresetResult run_preset(const Preset& preset, const DataSource& data, const std::string& out_dir) {
    if (preset.arms.empty()) throw std::runtime_error("preset has no arms");
    fs::create_directories(out_dir);

    synth::SynthCorpus corpus;
    dataio::InteractionDataset ds = load_source(data, data.is_synth ? &corpus : nullptr);

    PresetResult result;
    result.preset = preset.name;
    result.out_dir = out_dir;

    std::ofstream csv(out_dir + "/results.csv");
    if (!csv) throw std::runtime_error("cannot write " + out_dir + "/results.csv");
    csv << kCsvHeader << "\n" << std::flush;

    for (const auto& a : preset.arms) {
        for (int k = 0; k < preset.n_seeds; ++k) {
            RunRecord rec;
            rec.arm = a.name;
            rec.seed_index = k;
            rec.seed = preset.seed_base + static_cast<uint64_t>(k);
            rec.cfg = preset.base;
            std::string run_dir =
                out_dir + "/" + sanitize_name(a.name) + "/seed" + std::to_string(k);
            fs::create_directories(run_dir);
            auto started = std::chrono::steady_clock::now();
            try {
                for (const auto& [key, value] : a.overrides)
                    config::apply_override(rec.cfg, key, value);
                rec.cfg.seed = rec.seed;
                rec.cfg.validate();
                write_manifest(run_dir + "/manifest.json", preset, data, rec, "running");
                rec.result = trainer::fit(rec.cfg, ds, run_dir);
                rec.ok = true;
                if (data.is_synth && rec.cfg.mining != negatives::MiningKind::none) {
                    rec.mining = synth::score_mining(corpus, mined_pairs(rec.result.ledger));
                    rec.has_mining = true;
                }
            } catch (const std::exception& e) {
                rec.ok = false;
                rec.error = e.what();
                result.all_ok = false;
            }
            rec.wall_time =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            write_manifest(run_dir + "/manifest.json", preset, data, rec,
                           rec.ok ? "done" : "failed");
            csv << csv_row(preset, rec) << "\n" << std::flush;
            result.runs.push_back(std::move(rec));
        }
    }

    std::map<std::string, double> pooled_p;
    write_significance(out_dir + "/significance.csv", result.runs, &pooled_p);
    write_results_md(out_dir + "/results.md", preset, result.runs, pooled_p);
    write_curve_plot(out_dir, result.runs);
    if (preset.name == "fig4_sweeps") write_sweep_plots(out_dir, result.runs);
    return result;
}

}  // namespace ufnrec::experiments
