#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ufnrec/rng.hpp"

namespace ufnrec::dataio {

struct Interaction {
    std::string user;
    std::string item;
    int64_t timestamp = 0;
};

enum class FileFormat { csv, tsv, amazon_ratings };

FileFormat parse_format(const std::string& s);

struct ColumnMap {
    int user_col = 0;
    int item_col = 1;
    int time_col = 2;
    char delimiter = ',';
    bool has_header = false;
};

ColumnMap default_columns(FileFormat fmt);

struct ParseStats {
    size_t total_rows = 0;
    size_t malformed_rows = 0;
};

// Reads all interactions; throws on unreadable file, empty file, or when more
// than 1% of rows are malformed.
std::vector<Interaction> load_interactions(const std::string& path, FileFormat fmt,
                                           const ColumnMap& cols, ParseStats* stats = nullptr);
std::vector<Interaction> load_interactions(const std::string& path, FileFormat fmt);

// Item ids are dense and 1-based; 0 is the padding id.
struct InteractionDataset {
    int user_count = 0;
    int item_count = 0;
    std::vector<std::vector<int>> sequences;   // indexed by dense user id
    std::vector<std::string> user_keys;        // dense id -> external key
    std::vector<std::string> item_keys;        // dense id -> external key (index 0 unused)
};

// Dense ids are assigned by sorted external key. Users with fewer than
// min_seq_len interactions are dropped; k_core > 0 filters users and items to
// a fixed point first. Throws if nothing survives.
InteractionDataset build_dataset(std::vector<Interaction> interactions, int min_seq_len,
                                 int k_core);

struct SplitDataset {
    std::vector<std::vector<int>> train;  // per-user prefix
    std::vector<int> valid_target;
    std::vector<int> test_target;
};

SplitDataset split_leave_one_out(const InteractionDataset& ds);

enum class EvalStage { valid, test };
enum class EvalNegMode { exclude_history, exclude_positive_only };

struct EvalCandidateSet {
    int user = 0;
    int positive = 0;
    std::vector<int> negatives;  // exactly n_candidates, no duplicates, no positive
};

// Uniform negatives over the vocabulary, deterministic in (seed, user, stage).
EvalCandidateSet sample_eval_candidates(const InteractionDataset& ds, const SplitDataset& split,
                                        int user, EvalStage stage, uint64_t seed,
                                        EvalNegMode mode = EvalNegMode::exclude_history,
                                        int n_candidates = 100);

// Canonical dump: "#version 1" header, then one line per user:
// "user_idx<TAB>item item item ...". Bit-exact across platforms.
void save_canonical(const InteractionDataset& ds, const std::string& path);
InteractionDataset load_canonical(const std::string& path);

}  // namespace ufnrec::dataio
