#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ufnrec/synth.hpp"
#include "ufnrec/trainer.hpp"

namespace ufnrec::experiments {

inline constexpr const char* kCodeVersion = "0.1.0";

// One experiment arm: a named set of config deltas, applied through the same
// override path the CLI uses, so every arm differs from the base only in its
// declared deltas.
struct PresetArm {
    std::string name;
    std::map<std::string, std::string> overrides;
};

struct Preset {
    std::string name;
    trainer::TrainConfig base;
    std::vector<PresetArm> arms;
    int n_seeds = 3;
    uint64_t seed_base = 100;  // run seed = seed_base + seed index
};

const std::vector<std::string>& preset_names();
Preset make_preset(const std::string& name);

// Where the runs get their interactions: the built-in synthetic corpus (with
// planted-false-negative ground truth, enabling mining scores) or a canonical
// dataset file. subsample_users > 0 keeps only the first N users — real
// datasets are long-running, so bound them explicitly.
struct DataSource {
    bool is_synth = true;
    synth::SynthConfig synth_cfg;
    std::string path;
    int subsample_users = 0;
};

dataio::InteractionDataset load_source(const DataSource& src, synth::SynthCorpus* corpus_out);

struct RunRecord {
    std::string arm;
    int seed_index = 0;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    trainer::TrainConfig cfg;
    trainer::FitResult result;
    bool has_mining = false;
    synth::MiningScore mining;  // vs planted ground truth; synth sources only
    double wall_time = 0.0;
};

struct PresetResult {
    std::string preset;
    std::string out_dir;
    std::vector<RunRecord> runs;
    bool all_ok = true;
};

// Runs every (arm, seed) combination, writing per-run directories
// (<out>/<arm>/seed<k>/ with manifest.json plus the trainer's artifacts),
// results.csv row by row as runs finish (partial results survive a failed
// arm), results.md with per-arm means, significance.csv with sign tests
// against the first arm, and line plots. Arm failures are recorded, not
// thrown; all_ok reports them.
PresetResult run_preset(const Preset& preset, const DataSource& data, const std::string& out_dir);

// Paired per-user rank comparison between two runs (sign test; lower rank
// wins). Throws if the runs ranked different user sets — that means the
// candidate sets cannot match.
struct CompareReport {
    int wins = 0;
    int losses = 0;
    int ties = 0;
    double p_value = 1.0;
};

CompareReport compare_runs(const std::map<int, int>& ranks_a, const std::map<int, int>& ranks_b);

// Mined (user, item) pairs of a finished run, for scoring against planted
// ground truth: every item in the ledger's false-negative sets.
std::map<int, std::set<int>> mined_pairs(const negatives::RecordLedger& ledger);

// Directory-safe arm name: every non-alphanumeric byte becomes '_'.
std::string sanitize_name(const std::string& name);

// Mean and (sample) standard deviation helpers for the report tables.
double mean_of(const std::vector<double>& v);
double sd_of(const std::vector<double>& v);

}  // namespace ufnrec::experiments
