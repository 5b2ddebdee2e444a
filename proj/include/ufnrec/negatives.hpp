#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ufnrec/rng.hpp"

namespace ufnrec::negatives {

// One (user, step) training context with its sampled negatives.
struct TrainingInstance {
    int user = 0;
    int t = 0;
    int positive = 0;
    std::vector<int> negatives;
};

enum class CountMode { cumulative, consecutive };
enum class FnAction { reverse, remove, keep_negative };
enum class MiningKind { ufnrec_threshold, variance_based, none };

CountMode parse_count_mode(const std::string& s);
FnAction parse_fn_action(const std::string& s);
MiningKind parse_mining_kind(const std::string& s);
std::string to_string(CountMode m);
std::string to_string(FnAction a);
std::string to_string(MiningKind k);

// Key for per-instance bookkeeping: the (user, step) context plus an item.
struct LedgerKey {
    int user = 0;
    int t = 0;
    int item = 0;
    bool operator<(const LedgerKey& o) const {
        if (user != o.user) return user < o.user;
        if (t != o.t) return t < o.t;
        return item < o.item;
    }
    bool operator==(const LedgerKey& o) const {
        return user == o.user && t == o.t && item == o.item;
    }
};

struct Observation {
    int user = 0;
    int t = 0;
    int item = 0;       // the sampled negative being scored
    int positive = 0;   // the true next item at (user, t), for sanity checks
    double neg_score = 0.0;
    double pos_score = 0.0;
};

// Tracks, per (user, t, item), how many epochs the negative outscored its
// positive. Items whose count reaches m are classified false negatives and
// leave the sampling pool permanently.
struct RecordLedger {
    int m = 3;
    CountMode count_mode = CountMode::cumulative;

    std::map<LedgerKey, int> counts;
    std::map<std::pair<int, int>, std::vector<int>> rec;    // (user,t) -> N_rec, sorted
    std::map<std::pair<int, int>, std::vector<int>> falses; // (user,t) -> N_false, sorted

    const std::vector<int>* rec_set(int user, int t) const;
    const std::vector<int>* false_set(int user, int t) const;
    bool is_false(int user, int t, int item) const;
    size_t rec_total() const;
    size_t false_total() const;

    // Returns the items newly classified as false negatives this epoch.
    std::vector<LedgerKey> record_epoch(const std::vector<Observation>& observations);

    // Classifies an item directly (used by external miners); removes it from
    // N_rec and permanently excludes it from the sampling pool.
    void mark_false(int user, int t, int item);

    void dump(const std::string& path) const;
    std::string dump_lines() const;
};

// Draw n distinct negatives for (user, t): all current N_rec members first
// (the n highest-count ones if there are more than n, ties by item index),
// then uniform fills. Never draws the padding index, anything in
// `exclusions`, or a classified false negative.
std::vector<int> draw_negatives(const RecordLedger& ledger, int user, int t, int n, int vocab,
                                const std::set<int>& exclusions, Rng& rng);

// Label reversal: the original instance plus one positive-only instance per
// false negative recorded at (user, t).
std::vector<TrainingInstance> reverse_labels(const RecordLedger& ledger,
                                             const TrainingInstance& instance);

// Sliding score history for the variance-based miner (SRNS-style stand-in).
struct ScoreHistory {
    int window = 5;
    std::map<LedgerKey, std::vector<double>> scores;

    void push(const LedgerKey& key, double score);
};

// High-mean, low-variance candidates: mean strictly above the (1 - var_quantile)
// quantile of candidate means and variance strictly below the var_quantile
// quantile of variances. Candidates with fewer than two recorded scores are
// skipped; if none qualify for consideration the result is empty.
std::vector<LedgerKey> mine_variance_based(const ScoreHistory& history, double var_quantile);

// Linear-interpolation quantile of a sorted sample, q in [0,1].
double quantile_sorted(const std::vector<double>& sorted_values, double q);

// Replace any mined negatives in the instance with fresh draws that avoid the
// mined set (removal ablation: excluded, never promoted to positives).
void removal_filter(const std::set<int>& mined, TrainingInstance& instance, int vocab,
                    const std::set<int>& exclusions, Rng& rng);

}  // namespace ufnrec::negatives
