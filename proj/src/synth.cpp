#include "ufnrec/synth.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "ufnrec/kernels.hpp"
#include "ufnrec/rng.hpp"

namespace ufnrec::synth {

void SynthConfig::validate() const {
    if (n_users <= 0) throw std::runtime_error("n_users must be positive");
    if (n_items < 200) throw std::runtime_error("n_items must be at least 200 (eval needs 101 candidates)");
    if (latent_dim <= 0) throw std::runtime_error("latent_dim must be positive");
    if (seq_len_min < 3) throw std::runtime_error("seq_len_min must be at least 3");
    if (seq_len_max < seq_len_min) throw std::runtime_error("seq_len_max < seq_len_min");
    if (seq_len_max > n_items) throw std::runtime_error("seq_len_max exceeds item count");
    if (plant_rate < 0.0 || plant_rate > 1.0) throw std::runtime_error("plant_rate must be in [0,1]");
    if (noise_temp <= 0.0) throw std::runtime_error("noise_temp must be positive");
}

SynthCorpus generate(const SynthConfig& cfg) {
    cfg.validate();
    const int U = cfg.n_users;
    const int I = cfg.n_items;
    const int D = cfg.latent_dim;

    Mat user_f(U, D);
    Mat item_f(I + 1, D);  // row 0 unused, items are 1-based
    {
        Rng rng(mix_seed(cfg.seed, {1}));
        for (double& v : user_f.a) v = rng.normal();
        Rng rng2(mix_seed(cfg.seed, {2}));
        for (int i = 1; i <= I; ++i)
            for (int k = 0; k < D; ++k) item_f.at(i, k) = rng2.normal();
    }

    std::vector<std::vector<int>> visible(U);
    std::vector<std::vector<int>> withheld(U);
    kernels::par_for(U, [&](int u) {
        Rng rng(mix_seed(cfg.seed, {3, static_cast<uint64_t>(u)}));
        int len = static_cast<int>(rng.uniform_int(cfg.seq_len_min, cfg.seq_len_max));

        // Gumbel top-k == sampling k items without replacement from
        // softmax(affinity / temp); the keys decide membership only.
        std::vector<std::pair<double, int>> keys(I);
        const double* uf = user_f.row(u);
        for (int i = 1; i <= I; ++i) {
            double aff = dot(uf, item_f.row(i), D);
            keys[i - 1] = {aff / cfg.noise_temp + rng.gumbel(), i};
        }
        std::partial_sort(keys.begin(), keys.begin() + len, keys.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });

        std::vector<int> drawn(len);
        for (int j = 0; j < len; ++j) drawn[j] = keys[j].second;

        // Simulated interaction times are independent of preference strength:
        // a separate stream shuffles the drawn set into its time order, so the
        // held-out last items are typical interactions rather than the
        // selection-boundary (weakest) ones.
        Rng order_rng(mix_seed(cfg.seed, {4, static_cast<uint64_t>(u)}));
        for (int j = len - 1; j > 0; --j) {
            int k = static_cast<int>(order_rng.uniform_int(0, j));
            std::swap(drawn[j], drawn[k]);
        }

        // Withhold the highest-affinity interacted items, keeping at least a
        // 3-item visible sequence for the leave-one-out protocol.
        int n_plant = static_cast<int>(cfg.plant_rate * len);
        n_plant = std::min(n_plant, len - 3);
        if (n_plant > 0) {
            std::vector<std::pair<double, int>> by_aff(len);
            for (int j = 0; j < len; ++j)
                by_aff[j] = {dot(uf, item_f.row(drawn[j]), D), drawn[j]};
            std::sort(by_aff.begin(), by_aff.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::set<int> plant_set;
            for (int j = 0; j < n_plant; ++j) plant_set.insert(by_aff[j].second);
            for (int item : drawn)
                (plant_set.count(item) ? withheld[u] : visible[u]).push_back(item);
        } else {
            visible[u] = drawn;
        }
    });

    // Compact remap: the visible vocabulary defines the dense item ids.
    std::vector<int> remap(I + 1, 0);
    std::vector<int> used;
    {
        std::vector<char> seen(I + 1, 0);
        for (auto& seq : visible)
            for (int item : seq) seen[item] = 1;
        for (int i = 1; i <= I; ++i)
            if (seen[i]) used.push_back(i);
        for (size_t k = 0; k < used.size(); ++k) remap[used[k]] = static_cast<int>(k) + 1;
    }

    SynthCorpus corpus;
    corpus.dataset.user_count = U;
    corpus.dataset.item_count = static_cast<int>(used.size());
    corpus.dataset.sequences.resize(U);
    corpus.dataset.user_keys.resize(U);
    corpus.dataset.item_keys.resize(used.size() + 1);
    for (int u = 0; u < U; ++u) {
        corpus.dataset.user_keys[u] = "u" + std::to_string(u);
        auto& seq = corpus.dataset.sequences[u];
        seq.reserve(visible[u].size());
        for (int item : visible[u]) seq.push_back(remap[item]);
    }
    for (size_t k = 0; k < used.size(); ++k)
        corpus.dataset.item_keys[k + 1] = "i" + std::to_string(used[k]);

    for (int u = 0; u < U; ++u)
        for (int item : withheld[u]) {
            if (remap[item] == 0) {
                ++corpus.planted_dropped;  // withheld everywhere, unminable
                continue;
            }
            corpus.planted[u].insert(remap[item]);
        }

    corpus.user_factors = std::move(user_f);
    corpus.item_factors = Mat(corpus.dataset.item_count + 1, D);
    for (size_t k = 0; k < used.size(); ++k)
        std::copy(item_f.row(used[k]), item_f.row(used[k]) + D,
                  corpus.item_factors.row(static_cast<int>(k) + 1));
    return corpus;
}

double affinity(const SynthCorpus& corpus, int user, int item) {
    return dot(corpus.user_factors.row(user), corpus.item_factors.row(item),
               corpus.user_factors.cols);
}

MiningScore score_mining(const SynthCorpus& corpus,
                         const std::map<int, std::set<int>>& mined_per_user) {
    MiningScore s;
    size_t planted_total = 0;
    for (auto& [u, items] : corpus.planted) planted_total += items.size();

    size_t recalled = 0;
    for (auto& [u, items] : mined_per_user) {
        auto it = corpus.planted.find(u);
        for (int item : items) {
            ++s.mined;
            if (it != corpus.planted.end() && it->second.count(item)) {
                ++s.hits;
                ++recalled;
            }
        }
    }
    if (s.mined > 0) {
        s.has_precision = true;
        s.precision = static_cast<double>(s.hits) / static_cast<double>(s.mined);
    }
    s.recall = planted_total ? static_cast<double>(recalled) / static_cast<double>(planted_total)
                             : 0.0;

    double base = 0.0;
    for (int u = 0; u < corpus.dataset.user_count; ++u) {
        auto it = corpus.planted.find(u);
        if (it != corpus.planted.end())
            base += static_cast<double>(it->second.size()) /
                    static_cast<double>(corpus.dataset.item_count);
    }
    s.random_baseline = base / static_cast<double>(corpus.dataset.user_count);
    return s;
}

void save_planted(const SynthCorpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write planted sidecar: " + path);
    for (auto& [u, items] : corpus.planted)
        for (int item : items) out << u << '\t' << item << '\n';
}

std::map<int, std::set<int>> load_planted(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open planted sidecar: " + path);
    std::map<int, std::set<int>> out;
    int user, item;
    while (in >> user >> item) out[user].insert(item);
    return out;
}

}  // namespace ufnrec::synth
