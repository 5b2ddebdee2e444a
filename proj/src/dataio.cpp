#include "ufnrec/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace ufnrec::dataio {

FileFormat parse_format(const std::string& s) {
    if (s == "csv") return FileFormat::csv;
    if (s == "tsv") return FileFormat::tsv;
    if (s == "amazon-ratings") return FileFormat::amazon_ratings;
    throw std::runtime_error("unknown input format: " + s);
}

ColumnMap default_columns(FileFormat fmt) {
    ColumnMap m;
    switch (fmt) {
        case FileFormat::csv:
            m.delimiter = ',';
            break;
        case FileFormat::tsv:
            m.delimiter = '\t';
            break;
        case FileFormat::amazon_ratings:
            // user,item,rating,timestamp
            m.delimiter = ',';
            m.time_col = 3;
            break;
    }
    return m;
}

namespace {

bool parse_i64(const std::string& s, int64_t& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::vector<Interaction> load_interactions(const std::string& path, FileFormat fmt,
                                           const ColumnMap& cols, ParseStats* stats) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interaction file: " + path);

    int needed = std::max({cols.user_col, cols.item_col, cols.time_col}) + 1;
    std::vector<Interaction> out;
    ParseStats st;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first && cols.has_header) {
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        ++st.total_rows;
        auto fields = split_fields(line, cols.delimiter);
        int64_t ts = 0;
        if (static_cast<int>(fields.size()) < needed || fields[cols.user_col].empty() ||
            fields[cols.item_col].empty() || !parse_i64(fields[cols.time_col], ts)) {
            ++st.malformed_rows;
            continue;
        }
        out.push_back({fields[cols.user_col], fields[cols.item_col], ts});
    }
    if (stats) *stats = st;
    if (st.total_rows == 0) throw std::runtime_error("no interactions in " + path);
    if (st.malformed_rows * 100 > st.total_rows)
        throw std::runtime_error("too many malformed rows in " + path + ": " +
                                 std::to_string(st.malformed_rows) + " of " +
                                 std::to_string(st.total_rows));
    if (out.empty()) throw std::runtime_error("no interactions in " + path);
    return out;
}

std::vector<Interaction> load_interactions(const std::string& path, FileFormat fmt) {
    return load_interactions(path, fmt, default_columns(fmt), nullptr);
}

InteractionDataset build_dataset(std::vector<Interaction> interactions, int min_seq_len,
                                 int k_core) {
    if (min_seq_len < 3) throw std::runtime_error("min_seq_len must be >= 3");
    if (k_core < 0) throw std::runtime_error("k_core must be >= 0");

    // k-core fixed point over users and items.
    std::vector<char> keep(interactions.size(), 1);
    if (k_core > 0) {
        bool changed = true;
        while (changed) {
            changed = false;
            std::unordered_map<std::string, int> ucnt, icnt;
            for (size_t i = 0; i < interactions.size(); ++i) {
                if (!keep[i]) continue;
                ++ucnt[interactions[i].user];
                ++icnt[interactions[i].item];
            }
            for (size_t i = 0; i < interactions.size(); ++i) {
                if (!keep[i]) continue;
                if (ucnt[interactions[i].user] < k_core || icnt[interactions[i].item] < k_core) {
                    keep[i] = 0;
                    changed = true;
                }
            }
        }
    }

    // Group per user, preserving input order for stable timestamp ties.
    std::map<std::string, std::vector<std::pair<int64_t, std::string>>> per_user;
    for (size_t i = 0; i < interactions.size(); ++i) {
        if (!keep[i]) continue;
        per_user[interactions[i].user].push_back({interactions[i].timestamp, interactions[i].item});
    }
    for (auto it = per_user.begin(); it != per_user.end();) {
        if (static_cast<int>(it->second.size()) < min_seq_len)
            it = per_user.erase(it);
        else
            ++it;
    }
    if (per_user.empty()) throw std::runtime_error("dataset empty after filtering");

    // Dense ids by sorted external key (std::map iterates sorted).
    std::map<std::string, int> item_ids;
    for (auto& [u, seq] : per_user)
        for (auto& [t, item] : seq) item_ids[item];
    int next = 1;
    for (auto& [key, id] : item_ids) id = next++;

    InteractionDataset ds;
    ds.user_count = static_cast<int>(per_user.size());
    ds.item_count = static_cast<int>(item_ids.size());
    ds.item_keys.resize(ds.item_count + 1);
    for (auto& [key, id] : item_ids) ds.item_keys[id] = key;
    ds.sequences.reserve(ds.user_count);
    ds.user_keys.reserve(ds.user_count);
    for (auto& [user, seq] : per_user) {
        std::stable_sort(seq.begin(), seq.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<int> items;
        items.reserve(seq.size());
        for (auto& [t, item] : seq) items.push_back(item_ids[item]);
        ds.user_keys.push_back(user);
        ds.sequences.push_back(std::move(items));
    }
    return ds;
}

SplitDataset split_leave_one_out(const InteractionDataset& ds) {
    SplitDataset sp;
    sp.train.resize(ds.user_count);
    sp.valid_target.resize(ds.user_count);
    sp.test_target.resize(ds.user_count);
    for (int u = 0; u < ds.user_count; ++u) {
        const auto& seq = ds.sequences[u];
        if (seq.size() < 3)
            throw std::runtime_error("sequence shorter than 3 at user " + std::to_string(u));
        sp.train[u].assign(seq.begin(), seq.end() - 2);
        sp.valid_target[u] = seq[seq.size() - 2];
        sp.test_target[u] = seq.back();
    }
    return sp;
}

EvalCandidateSet sample_eval_candidates(const InteractionDataset& ds, const SplitDataset& split,
                                        int user, EvalStage stage, uint64_t seed, EvalNegMode mode,
                                        int n_candidates) {
    if (ds.item_count < n_candidates + 1)
        throw std::runtime_error("item vocabulary too small for " + std::to_string(n_candidates) +
                                 " eval negatives");
    EvalCandidateSet cs;
    cs.user = user;
    cs.positive =
        stage == EvalStage::valid ? split.valid_target[user] : split.test_target[user];

    std::unordered_set<int> excluded;
    excluded.insert(cs.positive);
    excluded.insert(0);
    if (mode == EvalNegMode::exclude_history)
        for (int it : ds.sequences[user]) excluded.insert(it);

    int available = ds.item_count;
    for (int it : excluded)
        if (it >= 1 && it <= ds.item_count) --available;
    if (available < n_candidates)
        throw std::runtime_error("not enough non-excluded items for eval candidates (user " +
                                 std::to_string(user) + ")");

    Rng rng(mix_seed(seed, {static_cast<uint64_t>(stage == EvalStage::test ? 2 : 1),
                            static_cast<uint64_t>(user)}));
    std::unordered_set<int> chosen;
    cs.negatives.reserve(n_candidates);
    while (static_cast<int>(cs.negatives.size()) < n_candidates) {
        int item = static_cast<int>(rng.uniform_int(1, ds.item_count));
        if (excluded.count(item) || chosen.count(item)) continue;
        chosen.insert(item);
        cs.negatives.push_back(item);
    }
    return cs;
}

void save_canonical(const InteractionDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset dump: " + path);
    out << "#version 1\n";
    for (int u = 0; u < ds.user_count; ++u) {
        out << u << '\t';
        const auto& seq = ds.sequences[u];
        for (size_t i = 0; i < seq.size(); ++i) {
            if (i) out << ' ';
            out << seq[i];
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

InteractionDataset load_canonical(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset dump: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#version 1")
        throw std::runtime_error("bad dataset dump header in " + path);
    InteractionDataset ds;
    int max_item = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("bad dump line: " + line);
        int user = std::stoi(line.substr(0, tab));
        if (user != static_cast<int>(ds.sequences.size()))
            throw std::runtime_error("non-contiguous user ids in dump");
        std::istringstream iss(line.substr(tab + 1));
        std::vector<int> seq;
        int item;
        while (iss >> item) {
            if (item < 1) throw std::runtime_error("bad item id in dump: " + std::to_string(item));
            max_item = std::max(max_item, item);
            seq.push_back(item);
        }
        if (seq.size() < 3) throw std::runtime_error("dump sequence shorter than 3");
        ds.sequences.push_back(std::move(seq));
    }
    if (ds.sequences.empty()) throw std::runtime_error("empty dataset dump: " + path);
    ds.user_count = static_cast<int>(ds.sequences.size());
    ds.item_count = max_item;
    return ds;
}

}  // namespace ufnrec::dataio
