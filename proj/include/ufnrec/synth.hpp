#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ufnrec/dataio.hpp"
#include "ufnrec/mat.hpp"

namespace ufnrec::synth {

struct SynthConfig {
    int n_users = 2000;
    int n_items = 1000;
    int latent_dim = 16;
    int seq_len_min = 8;
    int seq_len_max = 40;
    double plant_rate = 0.2;   // fraction of interacted items withheld from the log
    double noise_temp = 1.0;   // softmax temperature for interaction sampling
    uint64_t seed = 42;

    void validate() const;
};

// A corpus with known preferences: the visible dataset plus the withheld
// high-affinity items per user (the planted false negatives) and the latent
// factors that generated everything (held out from any model).
struct SynthCorpus {
    dataio::InteractionDataset dataset;
    std::map<int, std::set<int>> planted;  // user -> withheld items (dense ids)
    Mat user_factors;                      // n_users x latent_dim
    Mat item_factors;                      // (item_count+1) x latent_dim, row 0 zero
    size_t planted_dropped = 0;  // withheld items that fell out of the visible vocabulary
};

// Gumbel top-k sampling over softmax(affinity / temp) per user, draw order =
// simulated time; the top plant_rate fraction of each user's interacted items
// by affinity is withheld into `planted`. Item ids are compacted afterwards.
SynthCorpus generate(const SynthConfig& cfg);

double affinity(const SynthCorpus& corpus, int user, int item);

struct MiningScore {
    size_t mined = 0;    // distinct (user, item) pairs mined
    size_t hits = 0;     // mined pairs that are planted
    bool has_precision = false;
    double precision = 0.0;
    double recall = 0.0;
    double random_baseline = 0.0;  // mean over users of |planted| / vocab
};

// Scores mined (user, item) pairs against the planted ground truth; the step
// index does not matter (a planted item is a hit at any t).
MiningScore score_mining(const SynthCorpus& corpus,
                         const std::map<int, std::set<int>>& mined_per_user);

// Sidecar with one "user<TAB>item" line per planted pair, sorted.
void save_planted(const SynthCorpus& corpus, const std::string& path);
std::map<int, std::set<int>> load_planted(const std::string& path);

}  // namespace ufnrec::synth
