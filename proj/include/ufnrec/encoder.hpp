#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ufnrec/mat.hpp"
#include "ufnrec/rng.hpp"

namespace ufnrec::encoder {

struct EncoderConfig {
    enum class Kind { self_attention, mean_pool };
    Kind kind = Kind::self_attention;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int max_len = 50;
    double dropout = 0.2;
    bool share_output_embeddings = true;

    void validate() const;
};

EncoderConfig::Kind parse_encoder_kind(const std::string& s);
std::string to_string(EncoderConfig::Kind k);

struct LayerParams {
    Mat ln1_g, ln1_b;
    Mat wq, wk, wv, wo;      // d x d
    Mat bq, bk, bv, bo;      // 1 x d
    Mat ln2_g, ln2_b;
    Mat w1, b1, w2, b2;      // pointwise feed-forward, hidden width d
};

// Student weights. item_emb row 0 is the padding row and stays exactly zero.
struct ModelParams {
    int item_count = 0;
    Mat item_emb;                 // (item_count+1) x d
    Mat out_emb;                  // separate scoring table; empty when shared
    Mat pos_emb;                  // max_len x d, indexed by recency (0 = latest)
    std::vector<LayerParams> layers;
    Mat lnf_g, lnf_b;

    const Mat& output_table() const { return out_emb.rows ? out_emb : item_emb; }
    Mat& output_table() { return out_emb.rows ? out_emb : item_emb; }
};

ModelParams init_params(const EncoderConfig& cfg, int item_count, uint64_t seed);
ModelParams make_zero_like(const ModelParams& p);

// Fixed-order enumeration of every parameter array; the same order is used by
// the optimizer, EMA, checkpoints and the finite-difference tests.
std::vector<std::pair<std::string, Mat*>> param_entries(ModelParams& p);
std::vector<std::pair<std::string, const Mat*>> param_entries(const ModelParams& p);
size_t param_count(const ModelParams& p);

// Throws naming the offending array if any entry is NaN/Inf.
void check_finite(const ModelParams& p, const std::string& what);

// ------------------------------------------------------------------ batch --

// Ragged batch of item sequences (truncated to max_len, no padding rows are
// materialized; position embeddings are recency-indexed).
struct Batch {
    std::vector<int> offsets{0};
    std::vector<int> items;
    std::vector<int> users;

    void add(int user, const int* seq, int len) {
        users.push_back(user);
        items.insert(items.end(), seq, seq + len);
        offsets.push_back(static_cast<int>(items.size()));
    }
    int n_seq() const { return static_cast<int>(users.size()); }
    int total() const { return offsets.back(); }
    int len(int s) const { return offsets[s + 1] - offsets[s]; }
};

struct DropoutCtx {
    bool enabled = false;
    double rate = 0.0;
    uint64_t key = 0;  // already mixed with the epoch

    static DropoutCtx off() { return {}; }
};

struct LayerCtx {
    Mat h1;                       // ln1 output
    std::vector<double> mean1, rstd1;
    Mat q, k, v;
    std::vector<double> probs;    // causal softmax weights, ragged per (seq, head, query)
    std::vector<size_t> probs_off;  // per-seq base offset
    Mat att_concat;               // per-head weighted value sums, pre-projection
    Mat x_mid;                    // after attention residual
    Mat h2;
    std::vector<double> mean2, rstd2;
    Mat f1_pre, f1_act;
};

struct ForwardCtx {
    std::vector<Mat> xs;          // xs[0] = embedded input, xs[l+1] = block l output
    std::vector<LayerCtx> layers;
    std::vector<double> meanf, rstdf;
    Mat reps;                     // total x d user representations
};

// Forward pass; output row offsets[s]+j holds s_{u,t} for step j of sequence s.
ForwardCtx encode(const ModelParams& p, const EncoderConfig& cfg, const Batch& batch,
                  const DropoutCtx& drop);

// Accumulates gradients of sum(d_reps .* reps) into grads.
void encode_backward(const ModelParams& p, const EncoderConfig& cfg, const Batch& batch,
                     const ForwardCtx& ctx, const DropoutCtx& drop, const Mat& d_reps,
                     ModelParams& grads);

// ---------------------------------------------------------------- scoring --

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Binary cross entropy from the raw logit, stable for any |x|; y may be soft.
inline double bce_from_logit(double x, double y) {
    return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
}

// d/dx of bce_from_logit.
inline double bce_grad(double x, double y) { return sigmoid(x) - y; }

inline double score(const double* rep, int item, const ModelParams& p) {
    return dot(rep, p.output_table().row(item), p.output_table().cols);
}

// ------------------------------------------------------------- array file --

// Versioned binary dump of named arrays with shape headers; round-trips
// bit-exactly.
void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, const Mat*>>& arrays);
std::map<std::string, Mat> load_arrays(const std::string& path);

void save_checkpoint_params(const std::string& path, const ModelParams& student,
                            const ModelParams* teacher,
                            const std::vector<std::pair<std::string, const Mat*>>& extra = {});
// Fills student (and teacher if non-null and present in the file); returns the
// remaining arrays (optimizer state etc).
std::map<std::string, Mat> load_checkpoint_params(const std::string& path, ModelParams& student,
                                                  ModelParams* teacher);

}  // namespace ufnrec::encoder
