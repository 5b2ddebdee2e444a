#pragma once

#include <map>
#include <string>
#include <vector>

#include "ufnrec/dataio.hpp"
#include "ufnrec/encoder.hpp"

namespace ufnrec::eval {

struct RankingReport {
    std::map<int, int> per_user_rank;  // user -> 1-based rank of the positive
    std::map<int, double> hr;          // k -> hit rate
    std::map<int, double> ndcg;        // k -> normalized DCG
    int n_users = 0;
};

// 1 + number of negatives scoring strictly above the positive, plus ties
// (pessimistic: an equal-scoring negative ranks above the positive).
int rank_of_positive(double pos_score, const std::vector<double>& neg_scores);

// HR@k = fraction of ranks <= k; NDCG@k = mean of 1/log2(rank+1) over ranks
// <= k, zero otherwise (single relevant item, so ideal DCG = 1).
RankingReport compute_metrics(const std::vector<int>& ranks, const std::vector<int>& ks);

// Leave-one-out evaluation over sampled candidate sets. Candidate draws are
// pinned by (eval_seed, stage, user) so every checkpoint of a run — and every
// run sharing the seed — ranks the same candidates.
RankingReport evaluate(const encoder::ModelParams& params, const encoder::EncoderConfig& cfg,
                       const dataio::InteractionDataset& ds, const dataio::SplitDataset& split,
                       dataio::EvalStage stage, uint64_t eval_seed,
                       dataio::EvalNegMode mode = dataio::EvalNegMode::exclude_history,
                       int n_candidates = 100, const std::vector<int>& ks = {1, 5, 10},
                       int batch_seqs = 256);

// Exact two-sided binomial sign test on paired per-user ranks (lower rank
// wins; ties dropped). Returns the p-value.
double sign_test_p(const std::map<int, int>& ranks_a, const std::map<int, int>& ranks_b,
                   int* wins = nullptr, int* losses = nullptr, int* ties = nullptr);

// Per-user rank dump, "user<TAB>rank" per line, sorted by user.
void dump_ranks(const RankingReport& report, const std::string& path);
std::map<int, int> load_ranks(const std::string& path);

std::string format_report(const RankingReport& report, const std::vector<int>& ks);

}  // namespace ufnrec::eval
