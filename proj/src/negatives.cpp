#include "ufnrec/negatives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ufnrec::negatives {

CountMode parse_count_mode(const std::string& s) {
    if (s == "cumulative") return CountMode::cumulative;
    if (s == "consecutive") return CountMode::consecutive;
    throw std::runtime_error("unknown count mode: " + s);
}

FnAction parse_fn_action(const std::string& s) {
    if (s == "reverse") return FnAction::reverse;
    if (s == "remove") return FnAction::remove;
    if (s == "keep_negative") return FnAction::keep_negative;
    throw std::runtime_error("unknown fn action: " + s);
}

MiningKind parse_mining_kind(const std::string& s) {
    if (s == "ufnrec") return MiningKind::ufnrec_threshold;
    if (s == "variance") return MiningKind::variance_based;
    if (s == "none") return MiningKind::none;
    throw std::runtime_error("unknown mining strategy: " + s);
}

std::string to_string(CountMode m) {
    return m == CountMode::cumulative ? "cumulative" : "consecutive";
}

std::string to_string(FnAction a) {
    switch (a) {
        case FnAction::reverse: return "reverse";
        case FnAction::remove: return "remove";
        default: return "keep_negative";
    }
}

std::string to_string(MiningKind k) {
    switch (k) {
        case MiningKind::ufnrec_threshold: return "ufnrec";
        case MiningKind::variance_based: return "variance";
        default: return "none";
    }
}

namespace {

bool sorted_contains(const std::vector<int>& v, int item) {
    return std::binary_search(v.begin(), v.end(), item);
}

void sorted_erase(std::vector<int>& v, int item) {
    auto it = std::lower_bound(v.begin(), v.end(), item);
    if (it != v.end() && *it == item) v.erase(it);
}

void sorted_insert(std::vector<int>& v, int item) {
    auto it = std::lower_bound(v.begin(), v.end(), item);
    if (it == v.end() || *it != item) v.insert(it, item);
}

}  // namespace

const std::vector<int>* RecordLedger::rec_set(int user, int t) const {
    auto it = rec.find({user, t});
    return it == rec.end() ? nullptr : &it->second;
}

const std::vector<int>* RecordLedger::false_set(int user, int t) const {
    auto it = falses.find({user, t});
    return it == falses.end() ? nullptr : &it->second;
}

bool RecordLedger::is_false(int user, int t, int item) const {
    const auto* f = false_set(user, t);
    return f && sorted_contains(*f, item);
}

size_t RecordLedger::rec_total() const {
    size_t n = 0;
    for (auto& [ut, v] : rec) n += v.size();
    return n;
}

size_t RecordLedger::false_total() const {
    size_t n = 0;
    for (auto& [ut, v] : falses) n += v.size();
    return n;
}

std::vector<LedgerKey> RecordLedger::record_epoch(const std::vector<Observation>& observations) {
    if (m <= 0) throw std::runtime_error("record threshold m must be positive");

    // Deterministic merge regardless of how the caller accumulated them.
    std::vector<Observation> obs = observations;
    std::sort(obs.begin(), obs.end(), [](const Observation& a, const Observation& b) {
        if (a.user != b.user) return a.user < b.user;
        if (a.t != b.t) return a.t < b.t;
        return a.item < b.item;
    });

    std::map<std::pair<int, int>, std::vector<int>> next_rec;
    std::vector<LedgerKey> newly_false;
    for (const Observation& o : obs) {
        if (o.item == o.positive)
            throw std::runtime_error("recorded item equals the positive at (user,t)");
        LedgerKey key{o.user, o.t, o.item};
        if (is_false(o.user, o.t, o.item)) continue;  // already classified, never re-enters
        if (o.neg_score > o.pos_score) {
            int& c = counts[key];
            ++c;
            if (c >= m) {
                sorted_insert(falses[{o.user, o.t}], o.item);
                newly_false.push_back(key);
            } else {
                sorted_insert(next_rec[{o.user, o.t}], o.item);
            }
        } else if (count_mode == CountMode::consecutive) {
            auto it = counts.find(key);
            if (it != counts.end()) it->second = 0;
        }
        // cumulative mode: a miss keeps the count but drops the item from
        // N_rec (it may re-enter later via a random draw).
    }
    rec = std::move(next_rec);
    return newly_false;
}

void RecordLedger::mark_false(int user, int t, int item) {
    if (is_false(user, t, item)) return;
    sorted_insert(falses[{user, t}], item);
    auto it = rec.find({user, t});
    if (it != rec.end()) sorted_erase(it->second, item);
    counts.emplace(LedgerKey{user, t, item}, 0);  // keep the dump complete
}

std::string RecordLedger::dump_lines() const {
    std::ostringstream out;
    for (auto& [key, count] : counts) {
        const char* state = is_false(key.user, key.t, key.item) ? "FALSE" : "REC";
        out << key.user << '\t' << key.t << '\t' << key.item << '\t' << count << '\t' << state
            << '\n';
    }
    return out.str();
}

void RecordLedger::dump(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write ledger dump: " + path);
    out << dump_lines();
}

std::vector<int> draw_negatives(const RecordLedger& ledger, int user, int t, int n, int vocab,
                                const std::set<int>& exclusions, Rng& rng) {
    if (n <= 0) return {};
    const std::vector<int>* false_items = ledger.false_set(user, t);

    auto blocked = [&](int item) {
        if (exclusions.count(item)) return true;
        return false_items && sorted_contains(*false_items, item);
    };

    // Fatal config error if the pool cannot supply n distinct items.
    int64_t unavailable = 0;
    for (int e : exclusions)
        if (e >= 1 && e <= vocab) ++unavailable;
    if (false_items)
        for (int f : *false_items)
            if (f >= 1 && f <= vocab && !exclusions.count(f)) ++unavailable;
    if (static_cast<int64_t>(vocab) - unavailable < n)
        throw std::runtime_error("vocabulary too small to draw " + std::to_string(n) +
                                 " negatives");

    std::vector<int> out;
    out.reserve(n);

    if (const std::vector<int>* rec_items = ledger.rec_set(user, t)) {
        std::vector<int> usable;
        for (int item : *rec_items)
            if (!blocked(item)) usable.push_back(item);
        if (static_cast<int>(usable.size()) > n) {
            // Keep the n highest-count members; ties broken by item index.
            std::stable_sort(usable.begin(), usable.end(), [&](int a, int b) {
                return ledger.counts.at({user, t, a}) > ledger.counts.at({user, t, b});
            });
            usable.resize(n);
            std::sort(usable.begin(), usable.end());
        }
        out = std::move(usable);
    }

    while (static_cast<int>(out.size()) < n) {
        int item = static_cast<int>(rng.uniform_int(1, vocab));
        if (blocked(item)) continue;
        if (std::find(out.begin(), out.end(), item) != out.end()) continue;
        out.push_back(item);
    }
    return out;
}

std::vector<TrainingInstance> reverse_labels(const RecordLedger& ledger,
                                             const TrainingInstance& instance) {
    std::vector<TrainingInstance> out;
    out.push_back(instance);
    if (const std::vector<int>* f = ledger.false_set(instance.user, instance.t))
        for (int item : *f) {
            if (item == instance.positive)
                throw std::runtime_error("false-negative set contains the positive");
            TrainingInstance extra;
            extra.user = instance.user;
            extra.t = instance.t;
            extra.positive = item;
            out.push_back(extra);
        }
    return out;
}

void ScoreHistory::push(const LedgerKey& key, double score) {
    auto& v = scores[key];
    v.push_back(score);
    if (static_cast<int>(v.size()) > window) v.erase(v.begin());
}

double quantile_sorted(const std::vector<double>& sorted_values, double q) {
    if (sorted_values.empty()) throw std::runtime_error("quantile of empty sample");
    if (sorted_values.size() == 1) return sorted_values[0];
    double pos = q * static_cast<double>(sorted_values.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    if (lo >= sorted_values.size() - 1) return sorted_values.back();
    double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[lo + 1] * frac;
}

std::vector<LedgerKey> mine_variance_based(const ScoreHistory& history, double var_quantile) {
    struct Stat {
        LedgerKey key;
        double mean;
        double var;
    };
    std::vector<Stat> stats;
    for (auto& [key, v] : history.scores) {
        if (v.size() < 2) continue;  // not enough history to judge stability
        double mean = 0.0;
        for (double s : v) mean += s;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double s : v) var += (s - mean) * (s - mean);
        var /= static_cast<double>(v.size());
        stats.push_back({key, mean, var});
    }
    if (stats.empty()) return {};

    std::vector<double> means, vars;
    means.reserve(stats.size());
    vars.reserve(stats.size());
    for (auto& s : stats) {
        means.push_back(s.mean);
        vars.push_back(s.var);
    }
    std::sort(means.begin(), means.end());
    std::sort(vars.begin(), vars.end());
    double mean_cut = quantile_sorted(means, 1.0 - var_quantile);
    double var_cut = quantile_sorted(vars, var_quantile);

    std::vector<LedgerKey> mined;
    for (auto& s : stats)
        if (s.mean > mean_cut && s.var < var_cut) mined.push_back(s.key);
    return mined;
}

void removal_filter(const std::set<int>& mined, TrainingInstance& instance, int vocab,
                    const std::set<int>& exclusions, Rng& rng) {
    if (mined.empty()) return;
    for (int& neg : instance.negatives) {
        if (!mined.count(neg)) continue;
        int fresh;
        do {
            fresh = static_cast<int>(rng.uniform_int(1, vocab));
        } while (mined.count(fresh) || exclusions.count(fresh) || fresh == instance.positive ||
                 std::find(instance.negatives.begin(), instance.negatives.end(), fresh) !=
                     instance.negatives.end());
        neg = fresh;
    }
}

}  // namespace ufnrec::negatives
