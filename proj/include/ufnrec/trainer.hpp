#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "ufnrec/dataio.hpp"
#include "ufnrec/distill.hpp"
#include "ufnrec/encoder.hpp"
#include "ufnrec/eval.hpp"
#include "ufnrec/negatives.hpp"

namespace ufnrec::trainer {

enum class OptimizerKind { adam, sgd };
enum class WarmupPolicyKind { fixed_epochs, rel_improvement };

OptimizerKind parse_optimizer(const std::string& s);
WarmupPolicyKind parse_warmup_policy(const std::string& s);
std::string to_string(OptimizerKind k);
std::string to_string(WarmupPolicyKind k);

struct TrainConfig {
    encoder::EncoderConfig enc;

    double learning_rate = 0.001;
    int batch_size = 128;
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables gradient clipping
    int max_epochs = 100;
    int early_stop_patience = 10;
    uint64_t seed = 1;
    uint64_t eval_seed = 7;  // pins eval candidates; shared across runs to pair users

    WarmupPolicyKind warmup_policy = WarmupPolicyKind::rel_improvement;
    int warmup_fixed_epochs = 0;
    double warmup_rel_eps = 0.01;  // stop when relative loss improvement drops below this
    int warmup_window = 2;         // ... measured over this many epochs
    int warmup_cap = 50;

    negatives::MiningKind mining = negatives::MiningKind::ufnrec_threshold;
    int m = 3;
    negatives::CountMode count_mode = negatives::CountMode::cumulative;
    negatives::FnAction fn_action = negatives::FnAction::reverse;
    int n_negatives = 1;

    int variance_window = 5;
    double variance_quantile = 0.1;
    bool variance_from_rec = true;  // mine from N_rec; false = persistent random pools
    int variance_pool = 10;         // pool size per (user, t) when not using N_rec

    double alpha = 0.2;
    double ema_decay = 0.999;
    bool eval_teacher = false;

    int eval_candidates = 100;
    dataio::EvalNegMode eval_neg_mode = dataio::EvalNegMode::exclude_history;

    void validate() const;
};

struct EpochReport {
    int epoch = 0;  // 1-based
    bool warmup = false;
    double l_basic = 0.0;
    double l_con = 0.0;
    double l_final = 0.0;
    size_t n_rec = 0;
    size_t n_false = 0;
    double valid_hr10 = 0.0;
    double valid_ndcg10 = 0.0;
    double wall_time = 0.0;
};

std::string to_json_line(const EpochReport& r);
EpochReport epoch_report_from_json(const std::string& line);

// Counts of the loss terms contributed in one epoch, for ablation audits.
struct TermCounts {
    size_t positives = 0;
    size_t negatives = 0;
    size_t reversed_positives = 0;
    size_t kept_negatives = 0;
    size_t consistency = 0;
};

struct FitResult {
    encoder::ModelParams best;
    int best_epoch = -1;  // 1-based; -1 if never evaluated
    double best_valid_ndcg10 = 0.0;
    int warmup_epochs = 0;
    std::vector<EpochReport> history;
    negatives::RecordLedger ledger;
    TermCounts term_counts;  // totals over the whole run
    eval::RankingReport valid_report;  // of the best checkpoint
    eval::RankingReport test_report;
};

struct FitHooks {
    std::function<void(const EpochReport&)> on_epoch;
};

// Full training loop: warmup, mining epochs, EMA teacher, early stopping on
// validation NDCG@10. When out_dir is set, writes reports.jsonl,
// checkpoint_last.bin / checkpoint_best.bin, ledger.tsv and rank dumps there;
// resume=true restores from out_dir/checkpoint_last.bin.
FitResult fit(const TrainConfig& cfg, const dataio::InteractionDataset& ds,
              const std::string& out_dir = "", const FitHooks& hooks = {}, bool resume = false);

// ------------------------------------------------------- batch-level ops --

// One batch worth of supervision: row r of `batch` predicts positives[r]
// against negatives[r]; (user, t) for ledger purposes is (users[seq of r],
// row index within its sequence).
struct BatchPlan {
    encoder::Batch batch;
    std::vector<int> positives;            // per row
    std::vector<std::vector<int>> negatives;  // per row, drawn
};

// Computes L_basic + alpha * L_con for the batch (normalized by row count),
// accumulating parameter gradients when grads != nullptr. Extra terms come
// from the ledger's false-negative sets according to `action`; consistency
// soft labels come from `teacher` (dropout always off there). Optionally
// collects mining observations and variance-miner score histories.
distill::LossBreakdown compute_batch(
    const encoder::ModelParams& params, const distill::TeacherParams* teacher,
    const encoder::EncoderConfig& enc, double alpha, negatives::FnAction action,
    const negatives::RecordLedger& ledger, const BatchPlan& plan, const encoder::DropoutCtx& drop,
    encoder::ModelParams* grads, std::vector<negatives::Observation>* observations = nullptr,
    negatives::ScoreHistory* var_history = nullptr,
    const std::map<std::pair<int, int>, std::vector<int>>* var_pools = nullptr,
    TermCounts* terms = nullptr);

// Adam/SGD over the fixed parameter enumeration.
struct OptState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step = 0;
    encoder::ModelParams m, v;  // Adam moments (unused for SGD)

    static OptState make(const TrainConfig& cfg, const encoder::ModelParams& params);
    void apply(encoder::ModelParams& params, const encoder::ModelParams& grads, double clip_norm);
};

}  // namespace ufnrec::trainer
