#include "ufnrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ufnrec/kernels.hpp"

namespace ufnrec::eval {

int rank_of_positive(double pos_score, const std::vector<double>& neg_scores) {
    int rank = 1;
    for (double s : neg_scores)
        if (s >= pos_score) ++rank;
    return rank;
}

RankingReport compute_metrics(const std::vector<int>& ranks, const std::vector<int>& ks) {
    if (ranks.empty()) throw std::runtime_error("compute_metrics: no ranks");
    RankingReport report;
    report.n_users = static_cast<int>(ranks.size());
    for (int k : ks) {
        double hits = 0.0, gain = 0.0;
        for (int r : ranks)
            if (r <= k) {
                hits += 1.0;
                gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
            }
        report.hr[k] = hits / static_cast<double>(ranks.size());
        report.ndcg[k] = gain / static_cast<double>(ranks.size());
    }
    return report;
}

RankingReport evaluate(const encoder::ModelParams& params, const encoder::EncoderConfig& cfg,
                       const dataio::InteractionDataset& ds, const dataio::SplitDataset& split,
                       dataio::EvalStage stage, uint64_t eval_seed, dataio::EvalNegMode mode,
                       int n_candidates, const std::vector<int>& ks, int batch_seqs) {
    const int n_users = ds.user_count;
    std::vector<int> ranks;
    ranks.reserve(n_users);
    RankingReport report;

    encoder::DropoutCtx off;
    for (int start = 0; start < n_users; start += batch_seqs) {
        int end = std::min(n_users, start + batch_seqs);
        encoder::Batch batch;
        std::vector<std::vector<int>> prefixes(end - start);
        for (int u = start; u < end; ++u) {
            std::vector<int>& prefix = prefixes[u - start];
            prefix = split.train[u];
            if (stage == dataio::EvalStage::test) prefix.push_back(split.valid_target[u]);
            if (static_cast<int>(prefix.size()) > cfg.max_len)
                prefix.erase(prefix.begin(),
                             prefix.end() - cfg.max_len);
            batch.add(u, prefix.data(), static_cast<int>(prefix.size()));
        }
        encoder::ForwardCtx ctx = encoder::encode(params, cfg, batch, off);

        for (int u = start; u < end; ++u) {
            dataio::EvalCandidateSet cands =
                dataio::sample_eval_candidates(ds, split, u, stage, eval_seed, mode, n_candidates);
            const double* rep =
                ctx.reps.row(batch.offsets[u - start] + batch.len(u - start) - 1);
            double pos = encoder::score(rep, cands.positive, params);
            std::vector<double> negs(cands.negatives.size());
            for (size_t i = 0; i < cands.negatives.size(); ++i)
                negs[i] = encoder::score(rep, cands.negatives[i], params);
            int r = rank_of_positive(pos, negs);
            ranks.push_back(r);
            report.per_user_rank[u] = r;
        }
    }

    RankingReport metrics = compute_metrics(ranks, ks);
    report.hr = std::move(metrics.hr);
    report.ndcg = std::move(metrics.ndcg);
    report.n_users = metrics.n_users;
    return report;
}

namespace {
double log_choose(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}
}  // namespace

double sign_test_p(const std::map<int, int>& ranks_a, const std::map<int, int>& ranks_b,
                   int* wins_out, int* losses_out, int* ties_out) {
    int wins = 0, losses = 0, ties = 0;
    for (auto& [user, ra] : ranks_a) {
        auto it = ranks_b.find(user);
        if (it == ranks_b.end()) continue;
        if (ra < it->second)
            ++wins;
        else if (ra > it->second)
            ++losses;
        else
            ++ties;
    }
    if (wins_out) *wins_out = wins;
    if (losses_out) *losses_out = losses;
    if (ties_out) *ties_out = ties;

    int n = wins + losses;
    if (n == 0) return 1.0;
    // Two-sided exact binomial test at p=1/2: sum the tail probabilities of
    // outcomes at least as extreme as the observed win count.
    int k = std::max(wins, losses);
    double p = 0.0;
    for (int i = k; i <= n; ++i) p += std::exp(log_choose(n, i) - n * std::log(2.0));
    p *= 2.0;
    if (wins == losses) p = 1.0;
    return std::min(p, 1.0);
}

void dump_ranks(const RankingReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write rank dump: " + path);
    for (auto& [user, rank] : report.per_user_rank) out << user << '\t' << rank << '\n';
}

std::map<int, int> load_ranks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open rank dump: " + path);
    std::map<int, int> out;
    int user, rank;
    while (in >> user >> rank) out[user] = rank;
    return out;
}

std::string format_report(const RankingReport& report, const std::vector<int>& ks) {
    std::ostringstream out;
    out << "users\t" << report.n_users << '\n';
    for (int k : ks) {
        out << "HR@" << k << '\t' << report.hr.at(k) << '\n';
        out << "NDCG@" << k << '\t' << report.ndcg.at(k) << '\n';
    }
    return out.str();
}

}  // namespace ufnrec::eval
