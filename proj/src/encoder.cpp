#include "ufnrec/encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ufnrec/kernels.hpp"

namespace ufnrec::encoder {

void EncoderConfig::validate() const {
    if (d_model <= 0) throw std::runtime_error("d_model must be positive");
    if (max_len <= 0) throw std::runtime_error("max_len must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("dropout must be in [0,1)");
    if (kind == Kind::self_attention) {
        if (n_layers <= 0 || n_heads <= 0)
            throw std::runtime_error("n_layers and n_heads must be positive");
        if (d_model % n_heads != 0)
            throw std::runtime_error("d_model must be divisible by n_heads");
    }
}

EncoderConfig::Kind parse_encoder_kind(const std::string& s) {
    if (s == "self_attention") return EncoderConfig::Kind::self_attention;
    if (s == "mean_pool") return EncoderConfig::Kind::mean_pool;
    throw std::runtime_error("unknown encoder kind: " + s);
}

std::string to_string(EncoderConfig::Kind k) {
    return k == EncoderConfig::Kind::self_attention ? "self_attention" : "mean_pool";
}

namespace {

void fill_trunc_normal(Mat& m, Rng& rng, double scale) {
    for (double& v : m.a) v = rng.trunc_normal(scale);
}

constexpr double kInitScale = 0.02;
constexpr double kLnEps = 1e-5;

}  // namespace

ModelParams init_params(const EncoderConfig& cfg, int item_count, uint64_t seed) {
    cfg.validate();
    if (item_count <= 0) throw std::runtime_error("item_count must be positive");
    Rng rng(mix_seed(seed, {1}));
    ModelParams p;
    p.item_count = item_count;
    p.item_emb = Mat(item_count + 1, cfg.d_model);
    fill_trunc_normal(p.item_emb, rng, kInitScale);
    std::fill(p.item_emb.row(0), p.item_emb.row(0) + cfg.d_model, 0.0);  // padding row
    if (!cfg.share_output_embeddings) {
        p.out_emb = Mat(item_count + 1, cfg.d_model);
        fill_trunc_normal(p.out_emb, rng, kInitScale);
        std::fill(p.out_emb.row(0), p.out_emb.row(0) + cfg.d_model, 0.0);
    }
    if (cfg.kind == EncoderConfig::Kind::self_attention) {
        p.pos_emb = Mat(cfg.max_len, cfg.d_model);
        fill_trunc_normal(p.pos_emb, rng, kInitScale);
        p.layers.resize(cfg.n_layers);
        for (auto& L : p.layers) {
            int d = cfg.d_model;
            L.ln1_g = Mat(1, d);
            L.ln1_b = Mat(1, d);
            std::fill(L.ln1_g.a.begin(), L.ln1_g.a.end(), 1.0);
            for (Mat* w : {&L.wq, &L.wk, &L.wv, &L.wo}) {
                *w = Mat(d, d);
                fill_trunc_normal(*w, rng, kInitScale);
            }
            L.bq = Mat(1, d);
            L.bk = Mat(1, d);
            L.bv = Mat(1, d);
            L.bo = Mat(1, d);
            L.ln2_g = Mat(1, d);
            L.ln2_b = Mat(1, d);
            std::fill(L.ln2_g.a.begin(), L.ln2_g.a.end(), 1.0);
            L.w1 = Mat(d, d);
            fill_trunc_normal(L.w1, rng, kInitScale);
            L.b1 = Mat(1, d);
            L.w2 = Mat(d, d);
            fill_trunc_normal(L.w2, rng, kInitScale);
            L.b2 = Mat(1, d);
        }
        p.lnf_g = Mat(1, cfg.d_model);
        p.lnf_b = Mat(1, cfg.d_model);
        std::fill(p.lnf_g.a.begin(), p.lnf_g.a.end(), 1.0);
    }
    return p;
}

ModelParams make_zero_like(const ModelParams& p) {
    ModelParams z = p;
    auto entries = param_entries(z);
    for (auto& [name, m] : entries) m->zero();
    return z;
}

std::vector<std::pair<std::string, Mat*>> param_entries(ModelParams& p) {
    std::vector<std::pair<std::string, Mat*>> out;
    auto add = [&](const std::string& name, Mat& m) {
        if (m.size()) out.push_back({name, &m});
    };
    add("item_emb", p.item_emb);
    add("out_emb", p.out_emb);
    add("pos_emb", p.pos_emb);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        std::string pre = "layer" + std::to_string(l) + ".";
        add(pre + "ln1_g", L.ln1_g);
        add(pre + "ln1_b", L.ln1_b);
        add(pre + "wq", L.wq);
        add(pre + "wk", L.wk);
        add(pre + "wv", L.wv);
        add(pre + "wo", L.wo);
        add(pre + "bq", L.bq);
        add(pre + "bk", L.bk);
        add(pre + "bv", L.bv);
        add(pre + "bo", L.bo);
        add(pre + "ln2_g", L.ln2_g);
        add(pre + "ln2_b", L.ln2_b);
        add(pre + "w1", L.w1);
        add(pre + "b1", L.b1);
        add(pre + "w2", L.w2);
        add(pre + "b2", L.b2);
    }
    add("lnf_g", p.lnf_g);
    add("lnf_b", p.lnf_b);
    return out;
}

std::vector<std::pair<std::string, const Mat*>> param_entries(const ModelParams& p) {
    auto entries = param_entries(const_cast<ModelParams&>(p));
    std::vector<std::pair<std::string, const Mat*>> out;
    out.reserve(entries.size());
    for (auto& [n, m] : entries) out.push_back({n, m});
    return out;
}

size_t param_count(const ModelParams& p) {
    size_t n = 0;
    for (auto& [name, m] : param_entries(p)) n += m->size();
    return n;
}

void check_finite(const ModelParams& p, const std::string& what) {
    for (auto& [name, m] : param_entries(p))
        for (double v : m->a)
            if (!std::isfinite(v))
                throw std::runtime_error("non-finite value in " + what + " at " + name);
}

// ------------------------------------------------------------------ encode --

namespace {

struct RowMap {
    std::vector<int> seq;  // row -> sequence index
    std::vector<int> pos;  // row -> position within sequence
};

RowMap make_row_map(const Batch& b) {
    RowMap rm;
    rm.seq.resize(b.total());
    rm.pos.resize(b.total());
    for (int s = 0; s < b.n_seq(); ++s)
        for (int j = 0; j < b.len(s); ++j) {
            rm.seq[b.offsets[s] + j] = s;
            rm.pos[b.offsets[s] + j] = j;
        }
    return rm;
}

// Dropout sites: 0 embeddings, then 3 per layer (attention out, ffn hidden,
// ffn out). Masks are a pure function of (key, user, site, pos, dim) so the
// backward pass recomputes them instead of storing them.
inline double drop_mask(const DropoutCtx& d, int user, int site, int pos, int k) {
    if (!d.enabled || d.rate <= 0.0) return 1.0;
    double u = hash_uniform01(d.key, static_cast<uint64_t>(user), static_cast<uint64_t>(site),
                              static_cast<uint64_t>(pos), static_cast<uint64_t>(k));
    return u < d.rate ? 0.0 : 1.0 / (1.0 - d.rate);
}

void apply_dropout(Mat& x, const Batch& b, const RowMap& rm, const DropoutCtx& d, int site) {
    if (!d.enabled || d.rate <= 0.0) return;
    kernels::par_for(x.rows, [&](int r) {
        int user = b.users[rm.seq[r]];
        int pos = rm.pos[r];
        double* row = x.row(r);
        for (int k = 0; k < x.cols; ++k) row[k] *= drop_mask(d, user, site, pos, k);
    });
}

void add_bias(Mat& x, const Mat& bias) {
    kernels::par_for(x.rows, [&](int r) {
        double* row = x.row(r);
        const double* b = bias.row(0);
        for (int k = 0; k < x.cols; ++k) row[k] += b[k];
    });
}

void colsum_add(const Mat& x, Mat& out) {
    kernels::par_for(x.cols, [&](int j) {
        double s = 0.0;
        for (int r = 0; r < x.rows; ++r) s += x.at(r, j);
        out.a[j] += s;
    });
}

// Accumulate row_grads into dst rows keyed by `keys` (deterministic order).
void scatter_rows(const std::vector<int>& keys, const Mat& row_grads, Mat& dst, double scale) {
    size_t n = keys.size();
    std::vector<std::pair<int, int>> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = {keys[i], static_cast<int>(i)};
    std::sort(order.begin(), order.end());
    std::vector<int> k(n), r(n);
    for (size_t i = 0; i < n; ++i) {
        k[i] = order[i].first;
        r[i] = order[i].second;
    }
    kernels::segment_add(k.data(), r.data(), nullptr, n, row_grads.a.data(), dst.a.data(),
                         row_grads.cols, scale);
}

size_t tri(int L) { return static_cast<size_t>(L) * (L + 1) / 2; }

void check_items(const Batch& b, int item_count) {
    for (int it : b.items)
        if (it < 1 || it > item_count)
            throw std::runtime_error("item index out of vocabulary: " + std::to_string(it));
}

}  // namespace

ForwardCtx encode(const ModelParams& p, const EncoderConfig& cfg, const Batch& batch,
                  const DropoutCtx& drop) {
    check_items(batch, p.item_count);
    const int d = cfg.d_model;
    const int R = batch.total();
    RowMap rm = make_row_map(batch);
    ForwardCtx ctx;

    if (cfg.kind == EncoderConfig::Kind::mean_pool) {
        ctx.reps = Mat(R, d);
        kernels::par_for(batch.n_seq(), [&](int s) {
            int base = batch.offsets[s];
            std::vector<double> acc(d, 0.0);
            for (int j = 0; j < batch.len(s); ++j) {
                const double* e = p.item_emb.row(batch.items[base + j]);
                for (int k = 0; k < d; ++k) acc[k] += e[k];
                double inv = 1.0 / (j + 1);
                double* out = ctx.reps.row(base + j);
                for (int k = 0; k < d; ++k) out[k] = acc[k] * inv;
            }
        });
        return ctx;
    }

    const int H = cfg.n_heads;
    const int dh = d / H;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const double emb_scale = std::sqrt(static_cast<double>(d));

    ctx.xs.resize(cfg.n_layers + 1);
    ctx.layers.resize(cfg.n_layers);

    Mat& x0 = ctx.xs[0];
    x0 = Mat(R, d);
    kernels::par_for(R, [&](int r) {
        int s = rm.seq[r];
        int j = rm.pos[r];
        int recency = batch.len(s) - 1 - j;
        const double* e = p.item_emb.row(batch.items[r]);
        const double* pe = p.pos_emb.row(recency);
        double* out = x0.row(r);
        for (int k = 0; k < d; ++k) out[k] = e[k] * emb_scale + pe[k];
    });
    apply_dropout(x0, batch, rm, drop, 0);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& L = p.layers[l];
        LayerCtx& lc = ctx.layers[l];
        const Mat& x_in = ctx.xs[l];

        lc.h1 = Mat(R, d);
        lc.mean1.resize(R);
        lc.rstd1.resize(R);
        kernels::ln_forward(x_in.a.data(), L.ln1_g.a.data(), L.ln1_b.a.data(), lc.h1.a.data(),
                            lc.mean1.data(), lc.rstd1.data(), R, d, kLnEps);

        lc.q = Mat(R, d);
        lc.k = Mat(R, d);
        lc.v = Mat(R, d);
        kernels::gemm_nn(lc.h1.a.data(), L.wq.a.data(), lc.q.a.data(), R, d, d, false);
        kernels::gemm_nn(lc.h1.a.data(), L.wk.a.data(), lc.k.a.data(), R, d, d, false);
        kernels::gemm_nn(lc.h1.a.data(), L.wv.a.data(), lc.v.a.data(), R, d, d, false);
        add_bias(lc.q, L.bq);
        add_bias(lc.k, L.bk);
        add_bias(lc.v, L.bv);

        lc.probs_off.resize(batch.n_seq());
        size_t total_probs = 0;
        for (int s = 0; s < batch.n_seq(); ++s) {
            lc.probs_off[s] = total_probs;
            total_probs += static_cast<size_t>(H) * tri(batch.len(s));
        }
        lc.probs.assign(total_probs, 0.0);
        lc.att_concat = Mat(R, d);

        kernels::par_for(batch.n_seq() * H, [&](int task) {
            int s = task / H;
            int h = task % H;
            int base = batch.offsets[s];
            int Ls = batch.len(s);
            size_t head_base = lc.probs_off[s] + static_cast<size_t>(h) * tri(Ls);
            for (int j = 0; j < Ls; ++j) {
                double* pr = lc.probs.data() + head_base + tri(j);
                const double* qj = lc.q.row(base + j) + h * dh;
                double mx = -1e300;
                for (int i = 0; i <= j; ++i) {
                    pr[i] = dot(qj, lc.k.row(base + i) + h * dh, dh) * inv_sqrt_dh;
                    mx = std::max(mx, pr[i]);
                }
                double sum = 0.0;
                for (int i = 0; i <= j; ++i) {
                    pr[i] = std::exp(pr[i] - mx);
                    sum += pr[i];
                }
                double inv = 1.0 / sum;
                double* out = lc.att_concat.row(base + j) + h * dh;
                std::fill(out, out + dh, 0.0);
                for (int i = 0; i <= j; ++i) {
                    pr[i] *= inv;
                    axpy(pr[i], lc.v.row(base + i) + h * dh, out, dh);
                }
            }
        });

        Mat att(R, d);
        kernels::gemm_nn(lc.att_concat.a.data(), L.wo.a.data(), att.a.data(), R, d, d, false);
        add_bias(att, L.bo);
        apply_dropout(att, batch, rm, drop, 3 * l + 1);

        lc.x_mid = Mat(R, d);
        kernels::par_for(R, [&](int r) {
            const double* xi = x_in.row(r);
            const double* ar = att.row(r);
            double* out = lc.x_mid.row(r);
            for (int k = 0; k < d; ++k) out[k] = xi[k] + ar[k];
        });

        lc.h2 = Mat(R, d);
        lc.mean2.resize(R);
        lc.rstd2.resize(R);
        kernels::ln_forward(lc.x_mid.a.data(), L.ln2_g.a.data(), L.ln2_b.a.data(), lc.h2.a.data(),
                            lc.mean2.data(), lc.rstd2.data(), R, d, kLnEps);

        lc.f1_pre = Mat(R, d);
        kernels::gemm_nn(lc.h2.a.data(), L.w1.a.data(), lc.f1_pre.a.data(), R, d, d, false);
        add_bias(lc.f1_pre, L.b1);
        lc.f1_act = lc.f1_pre;
        kernels::par_for(R, [&](int r) {
            double* row = lc.f1_act.row(r);
            for (int k = 0; k < d; ++k) row[k] = std::max(row[k], 0.0);
        });
        apply_dropout(lc.f1_act, batch, rm, drop, 3 * l + 2);

        Mat f2(R, d);
        kernels::gemm_nn(lc.f1_act.a.data(), L.w2.a.data(), f2.a.data(), R, d, d, false);
        add_bias(f2, L.b2);
        apply_dropout(f2, batch, rm, drop, 3 * l + 3);

        ctx.xs[l + 1] = Mat(R, d);
        kernels::par_for(R, [&](int r) {
            const double* xm = lc.x_mid.row(r);
            const double* fr = f2.row(r);
            double* out = ctx.xs[l + 1].row(r);
            for (int k = 0; k < d; ++k) out[k] = xm[k] + fr[k];
        });
    }

    ctx.reps = Mat(R, d);
    ctx.meanf.resize(R);
    ctx.rstdf.resize(R);
    kernels::ln_forward(ctx.xs[cfg.n_layers].a.data(), p.lnf_g.a.data(), p.lnf_b.a.data(),
                        ctx.reps.a.data(), ctx.meanf.data(), ctx.rstdf.data(), R, d, kLnEps);
    return ctx;
}

void encode_backward(const ModelParams& p, const EncoderConfig& cfg, const Batch& batch,
                     const ForwardCtx& ctx, const DropoutCtx& drop, const Mat& d_reps,
                     ModelParams& grads) {
    const int d = cfg.d_model;
    const int R = batch.total();
    RowMap rm = make_row_map(batch);

    if (cfg.kind == EncoderConfig::Kind::mean_pool) {
        Mat row_grads(R, d);
        kernels::par_for(batch.n_seq(), [&](int s) {
            int base = batch.offsets[s];
            std::vector<double> acc(d, 0.0);
            for (int j = batch.len(s) - 1; j >= 0; --j) {
                const double* g = d_reps.row(base + j);
                double inv = 1.0 / (j + 1);
                for (int k = 0; k < d; ++k) acc[k] += g[k] * inv;
                double* out = row_grads.row(base + j);
                for (int k = 0; k < d; ++k) out[k] = acc[k];
            }
        });
        scatter_rows(batch.items, row_grads, grads.item_emb, 1.0);
        return;
    }

    const int H = cfg.n_heads;
    const int dh = d / H;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const double emb_scale = std::sqrt(static_cast<double>(d));

    Mat dx(R, d);
    kernels::ln_backward(ctx.xs[cfg.n_layers].a.data(), p.lnf_g.a.data(), ctx.meanf.data(),
                         ctx.rstdf.data(), d_reps.a.data(), dx.a.data(), grads.lnf_g.a.data(),
                         grads.lnf_b.a.data(), R, d);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerParams& L = p.layers[l];
        const LayerCtx& lc = ctx.layers[l];
        LayerParams& G = grads.layers[l];
        const Mat& x_in = ctx.xs[l];

        // dx currently holds d(x_next). FFN sub-block backward:
        Mat df2 = dx;  // gradient at dropout(f2)
        if (drop.enabled && drop.rate > 0.0)
            kernels::par_for(R, [&](int r) {
                int user = batch.users[rm.seq[r]];
                int pos = rm.pos[r];
                double* row = df2.row(r);
                for (int k = 0; k < d; ++k) row[k] *= drop_mask(drop, user, 3 * l + 3, pos, k);
            });
        kernels::gemm_tn(lc.f1_act.a.data(), df2.a.data(), G.w2.a.data(), d, R, d, true);
        colsum_add(df2, G.b2);
        Mat df1(R, d);
        kernels::gemm_nt(df2.a.data(), L.w2.a.data(), df1.a.data(), R, d, d, false);
        kernels::par_for(R, [&](int r) {
            int user = batch.users[rm.seq[r]];
            int pos = rm.pos[r];
            double* row = df1.row(r);
            const double* pre = lc.f1_pre.row(r);
            for (int k = 0; k < d; ++k) {
                double m = drop_mask(drop, user, 3 * l + 2, pos, k);
                row[k] *= m * (pre[k] > 0.0 ? 1.0 : 0.0);
            }
        });
        kernels::gemm_tn(lc.h2.a.data(), df1.a.data(), G.w1.a.data(), d, R, d, true);
        colsum_add(df1, G.b1);
        Mat dh2(R, d);
        kernels::gemm_nt(df1.a.data(), L.w1.a.data(), dh2.a.data(), R, d, d, false);

        // dx becomes d(x_mid): residual plus the layernorm path.
        kernels::ln_backward(lc.x_mid.a.data(), L.ln2_g.a.data(), lc.mean2.data(), lc.rstd2.data(),
                             dh2.a.data(), dx.a.data(), G.ln2_g.a.data(), G.ln2_b.a.data(), R, d);

        // Attention sub-block backward.
        Mat datt = dx;
        if (drop.enabled && drop.rate > 0.0)
            kernels::par_for(R, [&](int r) {
                int user = batch.users[rm.seq[r]];
                int pos = rm.pos[r];
                double* row = datt.row(r);
                for (int k = 0; k < d; ++k) row[k] *= drop_mask(drop, user, 3 * l + 1, pos, k);
            });
        kernels::gemm_tn(lc.att_concat.a.data(), datt.a.data(), G.wo.a.data(), d, R, d, true);
        colsum_add(datt, G.bo);
        Mat datt_concat(R, d);
        kernels::gemm_nt(datt.a.data(), L.wo.a.data(), datt_concat.a.data(), R, d, d, false);

        Mat dq(R, d), dk(R, d), dv(R, d);
        kernels::par_for(batch.n_seq() * H, [&](int task) {
            int s = task / H;
            int h = task % H;
            int base = batch.offsets[s];
            int Ls = batch.len(s);
            size_t head_base = lc.probs_off[s] + static_cast<size_t>(h) * tri(Ls);
            std::vector<double> dp(Ls);
            for (int j = 0; j < Ls; ++j) {
                const double* pr = lc.probs.data() + head_base + tri(j);
                const double* dout = datt_concat.row(base + j) + h * dh;
                double common = 0.0;
                for (int i = 0; i <= j; ++i) {
                    axpy(pr[i], dout, dv.row(base + i) + h * dh, dh);
                    dp[i] = dot(dout, lc.v.row(base + i) + h * dh, dh);
                    common += pr[i] * dp[i];
                }
                double* dqj = dq.row(base + j) + h * dh;
                const double* qj = lc.q.row(base + j) + h * dh;
                for (int i = 0; i <= j; ++i) {
                    double ds = pr[i] * (dp[i] - common) * inv_sqrt_dh;
                    axpy(ds, lc.k.row(base + i) + h * dh, dqj, dh);
                    axpy(ds, qj, dk.row(base + i) + h * dh, dh);
                }
            }
        });

        kernels::gemm_tn(lc.h1.a.data(), dq.a.data(), G.wq.a.data(), d, R, d, true);
        kernels::gemm_tn(lc.h1.a.data(), dk.a.data(), G.wk.a.data(), d, R, d, true);
        kernels::gemm_tn(lc.h1.a.data(), dv.a.data(), G.wv.a.data(), d, R, d, true);
        colsum_add(dq, G.bq);
        colsum_add(dk, G.bk);
        colsum_add(dv, G.bv);
        Mat dh1(R, d);
        kernels::gemm_nt(dq.a.data(), L.wq.a.data(), dh1.a.data(), R, d, d, false);
        kernels::gemm_nt(dk.a.data(), L.wk.a.data(), dh1.a.data(), R, d, d, true);
        kernels::gemm_nt(dv.a.data(), L.wv.a.data(), dh1.a.data(), R, d, d, true);

        // dx becomes d(x_in).
        kernels::ln_backward(x_in.a.data(), L.ln1_g.a.data(), lc.mean1.data(), lc.rstd1.data(),
                             dh1.a.data(), dx.a.data(), G.ln1_g.a.data(), G.ln1_b.a.data(), R, d);
    }

    // Embedding layer backward.
    if (drop.enabled && drop.rate > 0.0)
        kernels::par_for(R, [&](int r) {
            int user = batch.users[rm.seq[r]];
            int pos = rm.pos[r];
            double* row = dx.row(r);
            for (int k = 0; k < d; ++k) row[k] *= drop_mask(drop, user, 0, pos, k);
        });
    scatter_rows(batch.items, dx, grads.item_emb, emb_scale);
    std::vector<int> recency(R);
    for (int r = 0; r < R; ++r) recency[r] = batch.len(rm.seq[r]) - 1 - rm.pos[r];
    scatter_rows(recency, dx, grads.pos_emb, 1.0);
}

// -------------------------------------------------------------- array file --

namespace {
constexpr char kMagic[8] = {'U', 'F', 'N', 'R', 'E', 'C', 'A', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}
}  // namespace

void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, const Mat*>>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_u32(out, static_cast<uint32_t>(arrays.size()));
    for (auto& [name, m] : arrays) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(m->rows));
        write_u32(out, static_cast<uint32_t>(m->cols));
        out.write(reinterpret_cast<const char*>(m->a.data()),
                  static_cast<std::streamsize>(m->a.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::map<std::string, Mat> load_arrays(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    uint32_t n = read_u32(in);
    std::map<std::string, Mat> out;
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t len = read_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        uint32_t rows = read_u32(in);
        uint32_t cols = read_u32(in);
        Mat m(static_cast<int>(rows), static_cast<int>(cols));
        in.read(reinterpret_cast<char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        out.emplace(std::move(name), std::move(m));
    }
    return out;
}

void save_checkpoint_params(const std::string& path, const ModelParams& student,
                            const ModelParams* teacher,
                            const std::vector<std::pair<std::string, const Mat*>>& extra) {
    std::vector<std::pair<std::string, const Mat*>> arrays;
    for (auto& [name, m] : param_entries(student)) arrays.push_back({name, m});
    if (teacher)
        for (auto& [name, m] : param_entries(*teacher)) arrays.push_back({"teacher." + name, m});
    for (auto& e : extra) arrays.push_back(e);
    save_arrays(path, arrays);
}

std::map<std::string, Mat> load_checkpoint_params(const std::string& path, ModelParams& student,
                                                  ModelParams* teacher) {
    auto arrays = load_arrays(path);
    auto take = [&](const std::string& name, Mat* dst) {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw std::runtime_error("checkpoint missing array " + name);
        if (!dst->same_shape(it->second))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        *dst = std::move(it->second);
        arrays.erase(it);
    };
    for (auto& [name, m] : param_entries(student)) take(name, m);
    if (teacher)
        for (auto& [name, m] : param_entries(*teacher)) take("teacher." + name, m);
    return arrays;
}

}  // namespace ufnrec::encoder
