#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ufnrec/config.hpp"
#include "ufnrec/dataio.hpp"
#include "ufnrec/eval.hpp"
#include "ufnrec/experiments.hpp"
#include "ufnrec/kernels.hpp"
#include "ufnrec/synth.hpp"
#include "ufnrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace ufnrec;

namespace {

dataio::InteractionDataset load_data_arg(const std::string& data, synth::SynthCorpus* corpus_out) {
    experiments::DataSource src;
    if (data == "synth") {
        src.is_synth = true;
    } else {
        src.is_synth = false;
        src.path = data;
    }
    return experiments::load_source(src, src.is_synth ? corpus_out : nullptr);
}

// Typed CLI override: remembers the config key and the raw value when set.
struct OverrideSet {
    std::vector<std::pair<std::string, std::string>> entries;

    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        auto holder = std::make_shared<std::string>();
        cmd->add_option_function<std::string>(
               flag,
               [this, key, holder](const std::string& v) { entries.emplace_back(key, v); }, help)
            ->type_name("VALUE");
    }

    void apply(trainer::TrainConfig& cfg) const {
        for (const auto& [key, value] : entries) config::apply_override(cfg, key, value);
    }
};

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out_dir, bool resume, const OverrideSet& overrides,
              const std::vector<std::string>& sets) {
    trainer::TrainConfig cfg;
    if (!config_path.empty()) cfg = config::load_file(config_path);
    overrides.apply(cfg);
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
        config::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();

    synth::SynthCorpus corpus;
    dataio::InteractionDataset ds = load_data_arg(data, &corpus);
    std::printf("dataset: %d users, %d items\n", ds.user_count, ds.item_count);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        config::save_file(cfg, out_dir + "/config.json");
    }
    trainer::FitHooks hooks;
    hooks.on_epoch = [](const trainer::EpochReport& r) {
        std::printf("%s\n", trainer::to_json_line(r).c_str());
        std::fflush(stdout);
    };
    trainer::FitResult res = trainer::fit(cfg, ds, out_dir, hooks, resume);

    std::printf("best epoch %d (valid NDCG@10 %.6f), warmup %d epochs\n", res.best_epoch,
                res.best_valid_ndcg10, res.warmup_epochs);
    std::printf("valid: %s\n", eval::format_report(res.valid_report, {1, 5, 10}).c_str());
    std::printf("test:  %s\n", eval::format_report(res.test_report, {1, 5, 10}).c_str());
    std::printf("ledger: %zu recorded, %zu false negatives\n", res.ledger.rec_total(),
                res.ledger.false_total());
    if (data == "synth" && cfg.mining != negatives::MiningKind::none) {
        auto score = synth::score_mining(corpus, experiments::mined_pairs(res.ledger));
        std::printf("mining vs planted: mined %zu, hits %zu, precision %s, recall %.4f, "
                    "random baseline %.6f\n",
                    score.mined, score.hits,
                    score.has_precision ? std::to_string(score.precision).c_str() : "n/a",
                    score.recall, score.random_baseline);
    }
    return 0;
}

int cmd_preset_run(const std::string& name, const std::string& data, const std::string& out_dir,
                   int subsample_users, int seeds) {
    experiments::Preset preset = experiments::make_preset(name);
    if (seeds > 0) preset.n_seeds = seeds;
    experiments::DataSource src;
    if (data == "synth") {
        src.is_synth = true;
    } else {
        src.is_synth = false;
        src.path = data;
        src.subsample_users = subsample_users;
    }
    experiments::PresetResult result = experiments::run_preset(preset, src, out_dir);
    for (const auto& r : result.runs) {
        if (r.ok)
            std::printf("[ok]   %-16s seed %d  test NDCG@10 %.4f  (%.1fs)\n", r.arm.c_str(),
                        r.seed_index, r.result.test_report.ndcg.count(10)
                                          ? r.result.test_report.ndcg.at(10)
                                          : 0.0,
                        r.wall_time);
        else
            std::printf("[FAIL] %-16s seed %d  %s\n", r.arm.c_str(), r.seed_index,
                        r.error.c_str());
    }
    std::printf("results in %s\n", result.out_dir.c_str());
    if (!result.all_ok) {
        std::fprintf(stderr, "preset %s finished with failed arms; partial results kept\n",
                     name.c_str());
        return 1;
    }
    return 0;
}

int cmd_data_build(const std::string& in, const std::string& format, const std::string& out,
                   int min_seq_len, int k_core, int user_col, int item_col, int time_col,
                   const std::string& delimiter, bool header) {
    dataio::FileFormat fmt = dataio::parse_format(format);
    dataio::ColumnMap cols = dataio::default_columns(fmt);
    if (user_col >= 0) cols.user_col = user_col;
    if (item_col >= 0) cols.item_col = item_col;
    if (time_col >= 0) cols.time_col = time_col;
    if (!delimiter.empty()) cols.delimiter = delimiter[0];
    if (header) cols.has_header = true;

    dataio::ParseStats stats;
    auto interactions = dataio::load_interactions(in, fmt, cols, &stats);
    std::printf("parsed %zu rows (%zu malformed)\n", stats.total_rows, stats.malformed_rows);
    auto ds = dataio::build_dataset(std::move(interactions), min_seq_len, k_core);
    dataio::save_canonical(ds, out);
    size_t n_inter = 0;
    for (const auto& s : ds.sequences) n_inter += s.size();
    std::printf("dataset: %d users, %d items, %zu interactions -> %s\n", ds.user_count,
                ds.item_count, n_inter, out.c_str());
    return 0;
}

int cmd_synth(const std::string& out_dir, const synth::SynthConfig& cfg) {
    synth::SynthCorpus corpus = synth::generate(cfg);
    fs::create_directories(out_dir);
    dataio::save_canonical(corpus.dataset, out_dir + "/corpus.tsv");
    synth::save_planted(corpus, out_dir + "/planted.tsv");
    size_t n_planted = 0, n_inter = 0;
    for (const auto& [u, items] : corpus.planted) n_planted += items.size();
    for (const auto& s : corpus.dataset.sequences) n_inter += s.size();
    std::printf("synth corpus: %d users, %d items, %zu interactions, %zu planted false "
                "negatives (%zu dropped) -> %s\n",
                corpus.dataset.user_count, corpus.dataset.item_count, n_inter, n_planted,
                corpus.planted_dropped, out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& data, const std::string& stage_s, const std::string& ranks_out,
             bool use_teacher) {
    trainer::TrainConfig cfg = config::load_file(config_path);
    synth::SynthCorpus corpus;
    dataio::InteractionDataset ds = load_data_arg(data, &corpus);

    encoder::ModelParams student = encoder::init_params(cfg.enc, ds.item_count, cfg.seed);
    encoder::ModelParams teacher_buf = encoder::init_params(cfg.enc, ds.item_count, cfg.seed);
    encoder::ModelParams* teacher = use_teacher ? &teacher_buf : nullptr;
    encoder::load_checkpoint_params(checkpoint, student, teacher);
    const encoder::ModelParams& params = use_teacher ? teacher_buf : student;

    dataio::EvalStage stage =
        stage_s == "test" ? dataio::EvalStage::test : dataio::EvalStage::valid;
    auto split = dataio::split_leave_one_out(ds);
    auto report = eval::evaluate(params, cfg.enc, ds, split, stage, cfg.eval_seed,
                                 cfg.eval_neg_mode, cfg.eval_candidates);
    std::printf("%s (%s): %s\n", stage_s.c_str(), use_teacher ? "teacher" : "student",
                eval::format_report(report, {1, 5, 10}).c_str());
    if (!ranks_out.empty()) {
        eval::dump_ranks(report, ranks_out);
        std::printf("per-user ranks -> %s\n", ranks_out.c_str());
    }
    return 0;
}

int cmd_compare(const std::string& a, const std::string& b) {
    auto ranks_a = eval::load_ranks(a);
    auto ranks_b = eval::load_ranks(b);
    auto rep = experiments::compare_runs(ranks_a, ranks_b);
    std::printf("paired users: %zu\n", ranks_a.size());
    std::printf("a wins %d, b wins %d, ties %d\n", rep.wins, rep.losses, rep.ties);
    std::printf("two-sided sign test p = %.6g%s\n", rep.p_value,
                rep.p_value < 0.05 ? " (significant at 0.05)" : "");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequential recommender with false-negative mining and self-distillation"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads for compute kernels (0 = library default)");

    // --- train ---
    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    std::string tr_config, tr_data = "synth", tr_out;
    bool tr_resume = false;
    std::vector<std::string> tr_sets;
    OverrideSet tr_over;
    train->add_option("--config", tr_config, "JSON config file (defaults apply when omitted)");
    train->add_option("--data", tr_data, "'synth' or a canonical dataset file")->capture_default_str();
    train->add_option("--out", tr_out, "run directory (checkpoints, reports, ranks)");
    train->add_flag("--resume", tr_resume, "resume from <out>/checkpoint_last.bin");
    train->add_option("--set", tr_sets, "extra override key=value (repeatable)")->type_name("K=V");
    tr_over.add(train, "--mining", "mining", "mining strategy: ufnrec|variance|none");
    tr_over.add(train, "--m", "m", "false-negative threshold (epochs outscoring the positive)");
    tr_over.add(train, "--alpha", "alpha", "consistency loss weight");
    tr_over.add(train, "--d", "ema_decay", "teacher EMA decay");
    tr_over.add(train, "--fn-action", "fn_action", "mined-item action: reverse|remove|keep_negative");
    tr_over.add(train, "--count-mode", "count_mode", "cumulative|consecutive outscore counting");
    tr_over.add(train, "--n-negatives", "n_negatives", "negatives sampled per training step");
    tr_over.add(train, "--eval-neg-mode", "eval_neg_mode",
                "exclude_history|exclude_positive_only candidate sampling");
    tr_over.add(train, "--seed", "seed", "training seed");
    tr_over.add(train, "--epochs", "max_epochs", "epoch cap");
    tr_over.add(train, "--lr", "learning_rate", "learning rate");
    tr_over.add(train, "--batch-size", "batch_size", "sequences per batch");

    // --- preset ---
    auto* preset = app.add_subcommand("preset", "run or list experiment presets");
    preset->require_subcommand(1);
    auto* plist = preset->add_subcommand("list", "list preset names");
    auto* prun = preset->add_subcommand("run", "run every arm of a preset");
    std::string pr_name, pr_data = "synth", pr_out = "preset_out";
    int pr_subsample = 0, pr_seeds = 0;
    prun->add_option("name", pr_name, "preset name")->required();
    prun->add_option("--data", pr_data, "'synth' or a canonical dataset file")->capture_default_str();
    prun->add_option("--out", pr_out, "output directory")->capture_default_str();
    prun->add_option("--subsample-users", pr_subsample,
                     "keep only the first N users of a dataset file (bounds long runs)");
    prun->add_option("--seeds", pr_seeds, "override the preset's seed count");

    // --- data ---
    auto* data = app.add_subcommand("data", "dataset tools");
    data->require_subcommand(1);
    auto* dbuild = data->add_subcommand("build", "raw interactions -> canonical dataset");
    std::string db_in, db_format = "csv", db_out, db_delim;
    int db_min_seq = 3, db_kcore = 5, db_ucol = -1, db_icol = -1, db_tcol = -1;
    bool db_header = false;
    dbuild->add_option("--in", db_in, "raw interaction file")->required();
    dbuild->add_option("--format", db_format, "csv|tsv|amazon-ratings")->capture_default_str();
    dbuild->add_option("--out", db_out, "canonical dataset path")->required();
    dbuild->add_option("--min-seq-len", db_min_seq, "drop users with fewer interactions")
        ->capture_default_str();
    dbuild->add_option("--k-core", db_kcore, "k-core filtering (0 = off)")->capture_default_str();
    dbuild->add_option("--user-col", db_ucol, "override user column index");
    dbuild->add_option("--item-col", db_icol, "override item column index");
    dbuild->add_option("--time-col", db_tcol, "override timestamp column index");
    dbuild->add_option("--delimiter", db_delim, "override field delimiter");
    dbuild->add_flag("--header", db_header, "skip the first line");

    // --- synth ---
    auto* syn = app.add_subcommand("synth", "generate a synthetic corpus with planted false negatives");
    std::string sy_out = "synth_out";
    synth::SynthConfig sy_cfg;
    syn->add_option("--out", sy_out, "output directory (corpus.tsv, planted.tsv)")
        ->capture_default_str();
    syn->add_option("--users", sy_cfg.n_users, "user count")->capture_default_str();
    syn->add_option("--items", sy_cfg.n_items, "item count")->capture_default_str();
    syn->add_option("--latent-dim", sy_cfg.latent_dim, "latent factor dimension")
        ->capture_default_str();
    syn->add_option("--len-min", sy_cfg.seq_len_min, "shortest sequence")->capture_default_str();
    syn->add_option("--len-max", sy_cfg.seq_len_max, "longest sequence")->capture_default_str();
    syn->add_option("--plant-rate", sy_cfg.plant_rate, "withheld fraction per user")
        ->capture_default_str();
    syn->add_option("--temp", sy_cfg.noise_temp, "sampling temperature")->capture_default_str();
    syn->add_option("--seed", sy_cfg.seed, "corpus seed")->capture_default_str();

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_config, ev_checkpoint, ev_data = "synth", ev_stage = "test", ev_ranks;
    bool ev_teacher = false;
    ev->add_option("--config", ev_config, "run config JSON")->required();
    ev->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "'synth' or a canonical dataset file")->capture_default_str();
    ev->add_option("--stage", ev_stage, "valid|test")->capture_default_str();
    ev->add_option("--ranks-out", ev_ranks, "write per-user ranks here");
    ev->add_flag("--teacher", ev_teacher, "score with the teacher weights");

    // --- compare ---
    auto* cmp = app.add_subcommand("compare", "sign test between two per-user rank dumps");
    std::string cmp_a, cmp_b;
    cmp->add_option("a", cmp_a, "first ranks.tsv")->required();
    cmp->add_option("b", cmp_b, "second ranks.tsv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) kernels::set_threads(threads);
        if (app.got_subcommand(train))
            return cmd_train(tr_config, tr_data, tr_out, tr_resume, tr_over, tr_sets);
        if (app.got_subcommand(preset)) {
            if (preset->got_subcommand(plist)) {
                for (const auto& n : experiments::preset_names()) std::printf("%s\n", n.c_str());
                return 0;
            }
            return cmd_preset_run(pr_name, pr_data, pr_out, pr_subsample, pr_seeds);
        }
        if (app.got_subcommand(data))
            return cmd_data_build(db_in, db_format, db_out, db_min_seq, db_kcore, db_ucol,
                                  db_icol, db_tcol, db_delim, db_header);
        if (app.got_subcommand(syn)) {
            sy_cfg.validate();
            return cmd_synth(sy_out, sy_cfg);
        }
        if (app.got_subcommand(ev))
            return cmd_eval(ev_config, ev_checkpoint, ev_data, ev_stage, ev_ranks, ev_teacher);
        if (app.got_subcommand(cmp)) return cmd_compare(cmp_a, cmp_b);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
