#include "ufnrec/trainer.hpp"

#include "ufnrec/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ufnrec::trainer {

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::runtime_error("unknown optimizer: " + s);
}

WarmupPolicyKind parse_warmup_policy(const std::string& s) {
    if (s == "fixed_epochs") return WarmupPolicyKind::fixed_epochs;
    if (s == "rel_improvement") return WarmupPolicyKind::rel_improvement;
    throw std::runtime_error("unknown warmup policy: " + s);
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

std::string to_string(WarmupPolicyKind k) {
    return k == WarmupPolicyKind::fixed_epochs ? "fixed_epochs" : "rel_improvement";
}

void TrainConfig::validate() const {
    enc.validate();
    if (learning_rate <= 0.0) throw std::runtime_error("learning_rate must be positive");
    if (batch_size <= 0) throw std::runtime_error("batch_size must be positive");
    if (max_epochs <= 0) throw std::runtime_error("max_epochs must be positive");
    if (early_stop_patience <= 0) throw std::runtime_error("early_stop_patience must be positive");
    if (m <= 0) throw std::runtime_error("m must be positive");
    if (n_negatives <= 0) throw std::runtime_error("n_negatives must be positive");
    if (alpha < 0.0) throw std::runtime_error("alpha must be non-negative");
    if (ema_decay < 0.0 || ema_decay > 1.0) throw std::runtime_error("ema decay must be in [0,1]");
    if (warmup_fixed_epochs < 0) throw std::runtime_error("warmup_fixed_epochs must be >= 0");
    if (warmup_rel_eps <= 0.0) throw std::runtime_error("warmup_rel_eps must be positive");
    if (warmup_window < 1) throw std::runtime_error("warmup_window must be >= 1");
    if (warmup_cap < 0) throw std::runtime_error("warmup_cap must be >= 0");
    if (variance_window < 2) throw std::runtime_error("variance_window must be >= 2");
    if (variance_quantile <= 0.0 || variance_quantile >= 1.0)
        throw std::runtime_error("variance_quantile must be in (0,1)");
    if (variance_pool <= 0) throw std::runtime_error("variance_pool must be positive");
    if (eval_candidates <= 0) throw std::runtime_error("eval_candidates must be positive");
    if (clip_norm < 0.0) throw std::runtime_error("clip_norm must be >= 0");
}

std::string to_json_line(const EpochReport& r) {
    json j;
    j["schema"] = 1;
    j["epoch"] = r.epoch;
    j["warmup"] = r.warmup;
    j["l_basic"] = r.l_basic;
    j["l_con"] = r.l_con;
    j["l_final"] = r.l_final;
    j["n_rec"] = r.n_rec;
    j["n_false"] = r.n_false;
    j["valid_hr10"] = r.valid_hr10;
    j["valid_ndcg10"] = r.valid_ndcg10;
    j["wall_time"] = r.wall_time;
    return j.dump();
}

EpochReport epoch_report_from_json(const std::string& line) {
    json j = json::parse(line);
    if (j.value("schema", 0) != 1) throw std::runtime_error("unsupported epoch report schema");
    EpochReport r;
    r.epoch = j.at("epoch").get<int>();
    r.warmup = j.at("warmup").get<bool>();
    r.l_basic = j.at("l_basic").get<double>();
    r.l_con = j.at("l_con").get<double>();
    r.l_final = j.at("l_final").get<double>();
    r.n_rec = j.at("n_rec").get<size_t>();
    r.n_false = j.at("n_false").get<size_t>();
    r.valid_hr10 = j.at("valid_hr10").get<double>();
    r.valid_ndcg10 = j.at("valid_ndcg10").get<double>();
    r.wall_time = j.at("wall_time").get<double>();
    return r;
}

// ---------------------------------------------------------- batch compute --

distill::LossBreakdown compute_batch(
    const encoder::ModelParams& params, const distill::TeacherParams* teacher,
    const encoder::EncoderConfig& enc, double alpha, negatives::FnAction action,
    const negatives::RecordLedger& ledger, const BatchPlan& plan, const encoder::DropoutCtx& drop,
    encoder::ModelParams* grads, std::vector<negatives::Observation>* observations,
    negatives::ScoreHistory* var_history,
    const std::map<std::pair<int, int>, std::vector<int>>* var_pools, TermCounts* terms) {
    const encoder::Batch& batch = plan.batch;
    const int R = batch.total();
    const int d = enc.d_model;
    if (static_cast<int>(plan.positives.size()) != R ||
        static_cast<int>(plan.negatives.size()) != R)
        throw std::runtime_error("batch plan rows do not match the batch");
    if (R == 0) return distill::final_loss(0.0, 0.0, alpha);

    encoder::ForwardCtx ctx = encoder::encode(params, enc, batch, drop);

    // Teacher reps are needed only when some row carries consistency terms.
    bool need_teacher = false;
    if (alpha > 0.0 &&
        (action == negatives::FnAction::reverse || action == negatives::FnAction::keep_negative)) {
        for (int s = 0; s < batch.n_seq() && !need_teacher; ++s)
            for (int j = 0; j < batch.len(s); ++j)
                if (const auto* f = ledger.false_set(batch.users[s], j); f && !f->empty()) {
                    need_teacher = true;
                    break;
                }
    }
    if (need_teacher && !teacher)
        throw std::runtime_error("consistency loss requires an initialized teacher");
    encoder::ForwardCtx tctx;
    if (need_teacher)
        tctx = encoder::encode(teacher->shadow, enc, batch, encoder::DropoutCtx::off());

    const double inv_r = 1.0 / static_cast<double>(R);
    Mat d_reps;
    std::vector<int> sc_items, sc_rows;  // scored (item, row) pairs for the
    std::vector<double> sc_w;            // output-table gradient scatter
    if (grads) d_reps = Mat(R, d);

    double basic = 0.0, con = 0.0;
    auto score_term = [&](int r, int item, double target) -> double {
        double x = encoder::score(ctx.reps.row(r), item, params);
        basic += encoder::bce_from_logit(x, target);
        return x;
    };
    auto push_grad = [&](int r, int item, double g) {
        if (!grads) return;
        g *= inv_r;
        axpy(g, params.output_table().row(item), d_reps.row(r), d);
        sc_items.push_back(item);
        sc_rows.push_back(r);
        sc_w.push_back(g);
    };

    for (int s = 0; s < batch.n_seq(); ++s) {
        int user = batch.users[s];
        for (int j = 0; j < batch.len(s); ++j) {
            int r = batch.offsets[s] + j;
            int pos = plan.positives[r];
            double xp = score_term(r, pos, 1.0);
            push_grad(r, pos, encoder::sigmoid(xp) - 1.0);
            if (terms) ++terms->positives;

            for (int neg : plan.negatives[r]) {
                double xn = score_term(r, neg, 0.0);
                push_grad(r, neg, encoder::sigmoid(xn));
                if (terms) ++terms->negatives;
                if (observations)
                    observations->push_back({user, j, neg, pos, encoder::sigmoid(xn),
                                             encoder::sigmoid(xp)});
                // Drawn-negative score histories feed the N_rec-based variance
                // miner; the pool-based variant tracks its pools below instead.
                if (var_history && !var_pools)
                    var_history->push({user, j, neg}, encoder::sigmoid(xn));
            }

            const std::vector<int>* fset = ledger.false_set(user, j);
            if (fset && action != negatives::FnAction::remove) {
                bool as_positive = action == negatives::FnAction::reverse;
                for (int f : *fset) {
                    double xf = score_term(r, f, as_positive ? 1.0 : 0.0);
                    double g = encoder::sigmoid(xf) - (as_positive ? 1.0 : 0.0);
                    if (terms) ++(as_positive ? terms->reversed_positives : terms->kept_negatives);
                    if (alpha > 0.0) {
                        double yhat = encoder::sigmoid(
                            encoder::score(tctx.reps.row(r), f, teacher->shadow));
                        con += encoder::bce_from_logit(xf, yhat);
                        g += alpha * (encoder::sigmoid(xf) - yhat);
                        if (terms) ++terms->consistency;
                    }
                    push_grad(r, f, g);
                }
            }

            if (var_history && var_pools) {
                auto it = var_pools->find({user, j});
                if (it != var_pools->end())
                    for (int c : it->second) {
                        double xc = encoder::score(ctx.reps.row(r), c, params);
                        var_history->push({user, j, c}, encoder::sigmoid(xc));
                    }
            }
        }
    }

    basic *= inv_r;
    con *= inv_r;
    distill::LossBreakdown lb = distill::final_loss(basic, con, alpha);
    if (!std::isfinite(lb.final)) throw std::runtime_error("non-finite training loss");

    if (grads) {
        // Deterministic scatter into the output table: sort pairs by item,
        // keeping insertion order within an item.
        size_t n = sc_items.size();
        std::vector<int> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int a, int b) { return sc_items[a] < sc_items[b]; });
        std::vector<int> keys(n), rows(n);
        std::vector<double> w(n);
        for (size_t i = 0; i < n; ++i) {
            keys[i] = sc_items[idx[i]];
            rows[i] = sc_rows[idx[i]];
            w[i] = sc_w[idx[i]];
        }
        kernels::segment_add(keys.data(), rows.data(), w.data(), n, ctx.reps.a.data(),
                             grads->output_table().a.data(), d, 1.0);
        encoder::encode_backward(params, enc, batch, ctx, drop, d_reps, *grads);
    }
    return lb;
}

// -------------------------------------------------------------- optimizer --

OptState OptState::make(const TrainConfig& cfg, const encoder::ModelParams& params) {
    OptState o;
    o.kind = cfg.optimizer;
    o.lr = cfg.learning_rate;
    o.beta1 = cfg.adam_beta1;
    o.beta2 = cfg.adam_beta2;
    o.eps = cfg.adam_eps;
    if (o.kind == OptimizerKind::adam) {
        o.m = encoder::make_zero_like(params);
        o.v = encoder::make_zero_like(params);
    }
    return o;
}

void OptState::apply(encoder::ModelParams& params, const encoder::ModelParams& grads,
                     double clip_norm) {
    ++step;
    auto wx = encoder::param_entries(params);
    auto gx = encoder::param_entries(grads);
    if (wx.size() != gx.size()) throw std::runtime_error("gradient structure mismatch");

    double scale = 1.0;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& [name, g] : gx)
            for (double v : g->a) sq += v * v;
        double norm = std::sqrt(sq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }

    if (kind == OptimizerKind::sgd) {
        for (size_t i = 0; i < wx.size(); ++i) {
            double* w = wx[i].second->a.data();
            const double* g = gx[i].second->a.data();
            size_t n = wx[i].second->a.size();
            for (size_t j = 0; j < n; ++j) w[j] -= lr * scale * g[j];
        }
        return;
    }

    auto mx = encoder::param_entries(m);
    auto vx = encoder::param_entries(v);
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < wx.size(); ++i) {
        double* w = wx[i].second->a.data();
        const double* g = gx[i].second->a.data();
        double* mm = mx[i].second->a.data();
        double* vv = vx[i].second->a.data();
        size_t n = wx[i].second->a.size();
        for (size_t j = 0; j < n; ++j) {
            double gj = scale * g[j];
            mm[j] = beta1 * mm[j] + (1.0 - beta1) * gj;
            vv[j] = beta2 * vv[j] + (1.0 - beta2) * gj * gj;
            w[j] -= lr * (mm[j] / bc1) / (std::sqrt(vv[j] / bc2) + eps);
        }
    }
}

// --------------------------------------------------------------- training --

namespace {

struct Engine {
    TrainConfig cfg;
    const dataio::InteractionDataset& ds;
    dataio::SplitDataset split;
    std::vector<std::vector<int>> train_seq;  // per user, truncated to max_len+1
    std::vector<std::set<int>> excl;          // full visible history per user
    std::vector<int> active_users;

    encoder::ModelParams params;
    std::unique_ptr<distill::TeacherParams> teacher;
    negatives::RecordLedger ledger;
    negatives::ScoreHistory var_history;
    std::map<std::pair<int, int>, std::vector<int>> var_pools;
    OptState opt;
    encoder::ModelParams grad_buf;

    bool mining_active = false;
    int warmup_end_epoch = 0;  // last warmup epoch; 0 while still warming up
    std::vector<double> warmup_losses;
    int epoch_done = 0;

    encoder::ModelParams best;
    int best_epoch = -1;
    double best_metric = -1.0;
    TermCounts totals;

    explicit Engine(const TrainConfig& c, const dataio::InteractionDataset& data)
        : cfg(c), ds(data) {
        split = dataio::split_leave_one_out(ds);
        train_seq.resize(ds.user_count);
        excl.resize(ds.user_count);
        for (int u = 0; u < ds.user_count; ++u) {
            const std::vector<int>& s = split.train[u];
            int keep = std::min<int>(static_cast<int>(s.size()), cfg.enc.max_len + 1);
            train_seq[u].assign(s.end() - keep, s.end());
            // Training negatives avoid what the user is known to have
            // interacted with at train time. The held-out validation and test
            // items stay in the pool: they are the unknown future, and a
            // deployed sampler cannot avoid them. Drawing a future positive as
            // a negative is precisely the false-negative phenomenon the miner
            // exists to correct, so excluding them here would remove the
            // effect being studied.
            excl[u].insert(s.begin(), s.end());
            if (keep >= 2) active_users.push_back(u);
        }
        if (active_users.empty()) throw std::runtime_error("no trainable sequences");
        params = encoder::init_params(cfg.enc, ds.item_count, mix_seed(cfg.seed, {0}));
        ledger.m = cfg.mining == negatives::MiningKind::ufnrec_threshold ? cfg.m : INT_MAX;
        ledger.count_mode = cfg.count_mode;
        var_history.window = cfg.variance_window;
        opt = OptState::make(cfg, params);
        grad_buf = encoder::make_zero_like(params);
    }

    bool warmup_finished() const {
        // Warmup exists to delay mining; without a miner there is nothing to
        // delay, and a disabled-additions run must not leave warmup traces.
        if (cfg.mining == negatives::MiningKind::none) return true;
        int done = static_cast<int>(warmup_losses.size());
        if (cfg.warmup_policy == WarmupPolicyKind::fixed_epochs)
            return done >= cfg.warmup_fixed_epochs;
        if (done >= cfg.warmup_cap) return true;
        if (done < cfg.warmup_window + 1) return false;
        double before = warmup_losses[done - 1 - cfg.warmup_window];
        double now = warmup_losses[done - 1];
        double rel = (before - now) / std::max(std::fabs(before), 1e-12);
        return rel < cfg.warmup_rel_eps;
    }

    void start_mining(int epoch) {
        mining_active = true;
        warmup_end_epoch = epoch - 1;
        if (cfg.alpha > 0.0) teacher = std::make_unique<distill::TeacherParams>(
            distill::make_teacher(params, cfg.ema_decay));
        if (cfg.mining == negatives::MiningKind::variance_based && !cfg.variance_from_rec)
            build_pools();
    }

    void build_pools() {
        negatives::RecordLedger empty;
        for (int u : active_users) {
            Rng rng(mix_seed(cfg.seed, {13, static_cast<uint64_t>(u)}));
            int rows = static_cast<int>(train_seq[u].size()) - 1;
            for (int j = 0; j < rows; ++j)
                var_pools[{u, j}] = negatives::draw_negatives(empty, u, j, cfg.variance_pool,
                                                              ds.item_count, excl[u], rng);
        }
    }

    EpochReport run_epoch(int epoch) {
        std::vector<int> order = active_users;
        {
            Rng rng(mix_seed(cfg.seed, {10, static_cast<uint64_t>(epoch)}));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
        }

        bool record = mining_active &&
                      (cfg.mining == negatives::MiningKind::ufnrec_threshold ||
                       (cfg.mining == negatives::MiningKind::variance_based &&
                        cfg.variance_from_rec));
        bool variance = mining_active && cfg.mining == negatives::MiningKind::variance_based;
        std::vector<negatives::Observation> obs;

        double basic_sum = 0.0, con_sum = 0.0;
        size_t rows_total = 0;
        encoder::DropoutCtx drop;
        drop.enabled = cfg.enc.dropout > 0.0;
        drop.rate = cfg.enc.dropout;
        drop.key = mix_seed(cfg.seed, {12, static_cast<uint64_t>(epoch)});

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            BatchPlan plan;
            for (size_t i = start; i < end; ++i) {
                int u = order[i];
                const std::vector<int>& s = train_seq[u];
                int rows = static_cast<int>(s.size()) - 1;
                plan.batch.add(u, s.data(), rows);
                Rng rng(mix_seed(cfg.seed, {11, static_cast<uint64_t>(epoch),
                                            static_cast<uint64_t>(u)}));
                for (int j = 0; j < rows; ++j) {
                    plan.positives.push_back(s[j + 1]);
                    plan.negatives.push_back(negatives::draw_negatives(
                        ledger, u, j, cfg.n_negatives, ds.item_count, excl[u], rng));
                }
            }

            for (auto& [name, g] : encoder::param_entries(grad_buf)) g->zero();
            distill::LossBreakdown lb;
            try {
                lb = compute_batch(params, teacher.get(), cfg.enc, cfg.alpha, cfg.fn_action,
                                   ledger, plan, drop, &grad_buf, record ? &obs : nullptr,
                                   variance ? &var_history : nullptr,
                                   variance && !cfg.variance_from_rec ? &var_pools : nullptr,
                                   &totals);
            } catch (const std::exception& e) {
                throw std::runtime_error("epoch " + std::to_string(epoch) + ", batch starting at user " +
                                         std::to_string(order[start]) + ": " + e.what());
            }
            opt.apply(params, grad_buf, cfg.clip_norm);
            if (teacher) distill::ema_update(*teacher, params);

            int r = plan.batch.total();
            basic_sum += lb.basic * r;
            con_sum += lb.consistency * r;
            rows_total += r;
        }

        if (record) ledger.record_epoch(obs);
        if (variance) {
            auto mined = negatives::mine_variance_based(var_history, cfg.variance_quantile);
            for (const auto& key : mined) ledger.mark_false(key.user, key.t, key.item);
        }

        EpochReport r;
        r.epoch = epoch;
        r.warmup = !mining_active;
        r.l_basic = basic_sum / static_cast<double>(rows_total);
        r.l_con = con_sum / static_cast<double>(rows_total);
        r.l_final = r.l_basic + cfg.alpha * r.l_con;
        r.n_rec = ledger.rec_total();
        r.n_false = ledger.false_total();
        return r;
    }

    const encoder::ModelParams& eval_params() const {
        return (cfg.eval_teacher && teacher) ? teacher->shadow : params;
    }

    // ---- full-state checkpoints -------------------------------------------

    static Mat ledger_counts_mat(const negatives::RecordLedger& l) {
        Mat m(static_cast<int>(l.counts.size()), 4);
        int r = 0;
        for (auto& [k, c] : l.counts) {
            m.at(r, 0) = k.user;
            m.at(r, 1) = k.t;
            m.at(r, 2) = k.item;
            m.at(r, 3) = c;
            ++r;
        }
        return m;
    }

    static Mat ut_sets_mat(const std::map<std::pair<int, int>, std::vector<int>>& sets) {
        size_t n = 0;
        for (auto& [ut, v] : sets) n += v.size();
        Mat m(static_cast<int>(n), 3);
        int r = 0;
        for (auto& [ut, v] : sets)
            for (int item : v) {
                m.at(r, 0) = ut.first;
                m.at(r, 1) = ut.second;
                m.at(r, 2) = item;
                ++r;
            }
        return m;
    }

    void save_state(const std::string& path) const {
        std::vector<std::pair<std::string, const Mat*>> extra;
        Mat meta(1, 8);
        meta.a = {1.0,
                  static_cast<double>(epoch_done),
                  static_cast<double>(opt.step),
                  mining_active ? 1.0 : 0.0,
                  static_cast<double>(warmup_end_epoch),
                  static_cast<double>(best_epoch),
                  best_metric,
                  teacher ? 1.0 : 0.0};
        Mat term_mat(1, 5);
        term_mat.a = {static_cast<double>(totals.positives), static_cast<double>(totals.negatives),
                      static_cast<double>(totals.reversed_positives),
                      static_cast<double>(totals.kept_negatives),
                      static_cast<double>(totals.consistency)};
        Mat wloss(static_cast<int>(warmup_losses.size()), 1);
        for (size_t i = 0; i < warmup_losses.size(); ++i) wloss.a[i] = warmup_losses[i];
        Mat lc = ledger_counts_mat(ledger);
        Mat lr = ut_sets_mat(ledger.rec);
        Mat lf = ut_sets_mat(ledger.falses);

        // Empty state arrays get a 0x0 shape so config knobs that never came
        // into play leave no trace in the checkpoint bytes.
        Mat vh_keys(static_cast<int>(var_history.scores.size()), 4);
        Mat vh_scores(static_cast<int>(var_history.scores.size()),
                      var_history.scores.empty() ? 0 : std::max(1, var_history.window));
        {
            int r = 0;
            for (auto& [k, v] : var_history.scores) {
                vh_keys.at(r, 0) = k.user;
                vh_keys.at(r, 1) = k.t;
                vh_keys.at(r, 2) = k.item;
                vh_keys.at(r, 3) = static_cast<double>(v.size());
                for (size_t i = 0; i < v.size(); ++i) vh_scores.at(r, static_cast<int>(i)) = v[i];
                ++r;
            }
        }
        Mat pool_keys(static_cast<int>(var_pools.size()), 2);
        Mat pool_items(static_cast<int>(var_pools.size()),
                       var_pools.empty() ? 0 : cfg.variance_pool);
        {
            int r = 0;
            for (auto& [ut, v] : var_pools) {
                pool_keys.at(r, 0) = ut.first;
                pool_keys.at(r, 1) = ut.second;
                for (size_t i = 0; i < v.size(); ++i) pool_items.at(r, static_cast<int>(i)) = v[i];
                ++r;
            }
        }

        extra.push_back({"state.meta", &meta});
        extra.push_back({"state.terms", &term_mat});
        extra.push_back({"state.warmup_losses", &wloss});
        extra.push_back({"state.ledger_counts", &lc});
        extra.push_back({"state.ledger_rec", &lr});
        extra.push_back({"state.ledger_false", &lf});
        extra.push_back({"state.var_keys", &vh_keys});
        extra.push_back({"state.var_scores", &vh_scores});
        extra.push_back({"state.pool_keys", &pool_keys});
        extra.push_back({"state.pool_items", &pool_items});
        if (opt.kind == OptimizerKind::adam) {
            for (auto& [name, m] : encoder::param_entries(opt.m))
                extra.push_back({"opt.m." + name, m});
            for (auto& [name, m] : encoder::param_entries(opt.v))
                extra.push_back({"opt.v." + name, m});
        }
        encoder::save_checkpoint_params(path, params, teacher ? &teacher->shadow : nullptr, extra);
    }

    void load_state(const std::string& path) {
        auto arrays = encoder::load_arrays(path);
        auto take = [&](const std::string& name) -> Mat {
            auto it = arrays.find(name);
            if (it == arrays.end())
                throw std::runtime_error("checkpoint missing array " + name);
            Mat m = std::move(it->second);
            arrays.erase(it);
            return m;
        };
        Mat meta = take("state.meta");
        if (meta.a.empty() || meta.a[0] != 1.0)
            throw std::runtime_error("unsupported trainer checkpoint schema");
        epoch_done = static_cast<int>(meta.a[1]);
        opt.step = static_cast<int64_t>(meta.a[2]);
        mining_active = meta.a[3] != 0.0;
        warmup_end_epoch = static_cast<int>(meta.a[4]);
        best_epoch = static_cast<int>(meta.a[5]);
        best_metric = meta.a[6];
        bool has_teacher = meta.a[7] != 0.0;

        Mat term_mat = take("state.terms");
        totals.positives = static_cast<size_t>(term_mat.a[0]);
        totals.negatives = static_cast<size_t>(term_mat.a[1]);
        totals.reversed_positives = static_cast<size_t>(term_mat.a[2]);
        totals.kept_negatives = static_cast<size_t>(term_mat.a[3]);
        totals.consistency = static_cast<size_t>(term_mat.a[4]);

        Mat wloss = take("state.warmup_losses");
        warmup_losses.assign(wloss.a.begin(), wloss.a.end());

        Mat lc = take("state.ledger_counts");
        ledger.counts.clear();
        for (int r = 0; r < lc.rows; ++r)
            ledger.counts[{static_cast<int>(lc.at(r, 0)), static_cast<int>(lc.at(r, 1)),
                           static_cast<int>(lc.at(r, 2))}] = static_cast<int>(lc.at(r, 3));
        auto load_sets = [&](const std::string& name,
                             std::map<std::pair<int, int>, std::vector<int>>& sets) {
            Mat m = take(name);
            sets.clear();
            for (int r = 0; r < m.rows; ++r)
                sets[{static_cast<int>(m.at(r, 0)), static_cast<int>(m.at(r, 1))}].push_back(
                    static_cast<int>(m.at(r, 2)));
            for (auto& [ut, v] : sets) std::sort(v.begin(), v.end());
        };
        load_sets("state.ledger_rec", ledger.rec);
        load_sets("state.ledger_false", ledger.falses);

        Mat vh_keys = take("state.var_keys");
        Mat vh_scores = take("state.var_scores");
        var_history.scores.clear();
        for (int r = 0; r < vh_keys.rows; ++r) {
            negatives::LedgerKey k{static_cast<int>(vh_keys.at(r, 0)),
                                   static_cast<int>(vh_keys.at(r, 1)),
                                   static_cast<int>(vh_keys.at(r, 2))};
            int len = static_cast<int>(vh_keys.at(r, 3));
            std::vector<double> v(len);
            for (int i = 0; i < len; ++i) v[i] = vh_scores.at(r, i);
            var_history.scores[k] = std::move(v);
        }
        Mat pool_keys = take("state.pool_keys");
        Mat pool_items = take("state.pool_items");
        var_pools.clear();
        for (int r = 0; r < pool_keys.rows; ++r) {
            std::vector<int> v(cfg.variance_pool);
            for (int i = 0; i < cfg.variance_pool; ++i)
                v[i] = static_cast<int>(pool_items.at(r, i));
            var_pools[{static_cast<int>(pool_keys.at(r, 0)),
                       static_cast<int>(pool_keys.at(r, 1))}] = std::move(v);
        }

        auto fill = [&](const std::string& prefix, encoder::ModelParams& target) {
            for (auto& [name, m] : encoder::param_entries(target)) {
                auto it = arrays.find(prefix + name);
                if (it == arrays.end())
                    throw std::runtime_error("checkpoint missing array " + prefix + name);
                if (!m->same_shape(it->second))
                    throw std::runtime_error("checkpoint shape mismatch for " + prefix + name);
                *m = std::move(it->second);
                arrays.erase(it);
            }
        };
        fill("", params);
        if (has_teacher) {
            teacher = std::make_unique<distill::TeacherParams>(
                distill::make_teacher(params, cfg.ema_decay));
            fill("teacher.", teacher->shadow);
        }
        if (opt.kind == OptimizerKind::adam) {
            fill("opt.m.", opt.m);
            fill("opt.v.", opt.v);
        }
    }
};

}  // namespace

FitResult fit(const TrainConfig& cfg, const dataio::InteractionDataset& ds,
              const std::string& out_dir, const FitHooks& hooks, bool resume) {
    cfg.validate();
    Engine eng(cfg, ds);

    std::vector<EpochReport> history;
    std::string last_path, best_path, reports_path;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        last_path = out_dir + "/checkpoint_last.bin";
        best_path = out_dir + "/checkpoint_best.bin";
        reports_path = out_dir + "/reports.jsonl";
    }

    if (resume) {
        if (last_path.empty()) throw std::runtime_error("resume requires an output directory");
        if (!fs::exists(last_path))
            throw std::runtime_error("no checkpoint to resume from: " + last_path);
        eng.load_state(last_path);
        if (fs::exists(reports_path)) {
            std::ifstream in(reports_path);
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) history.push_back(epoch_report_from_json(line));
        }
        if (eng.best_epoch > 0 && fs::exists(best_path)) {
            eng.best = encoder::init_params(cfg.enc, ds.item_count, 0);
            encoder::load_checkpoint_params(best_path, eng.best, nullptr);
        }
    }

    std::ofstream reports;
    if (!reports_path.empty())
        reports.open(reports_path, resume ? std::ios::app : std::ios::trunc);

    for (int epoch = eng.epoch_done + 1; epoch <= cfg.max_epochs; ++epoch) {
        if (!eng.mining_active && eng.warmup_finished()) eng.start_mining(epoch);

        auto t0 = std::chrono::steady_clock::now();
        EpochReport r = eng.run_epoch(epoch);
        if (r.warmup) eng.warmup_losses.push_back(r.l_basic);
        encoder::check_finite(eng.params, "model parameters after epoch " + std::to_string(epoch));

        eval::RankingReport vr =
            eval::evaluate(eng.eval_params(), cfg.enc, ds, eng.split, dataio::EvalStage::valid,
                           cfg.eval_seed, cfg.eval_neg_mode, cfg.eval_candidates);
        r.valid_hr10 = vr.hr.at(10);
        r.valid_ndcg10 = vr.ndcg.at(10);
        r.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        eng.epoch_done = epoch;

        if (r.valid_ndcg10 > eng.best_metric) {
            eng.best_metric = r.valid_ndcg10;
            eng.best_epoch = epoch;
            eng.best = eng.eval_params();
            if (!best_path.empty())
                encoder::save_checkpoint_params(best_path, eng.best, nullptr);
        }

        history.push_back(r);
        if (hooks.on_epoch) hooks.on_epoch(r);
        if (reports.is_open()) {
            reports << to_json_line(r) << '\n';
            reports.flush();
        }
        if (!last_path.empty()) eng.save_state(last_path);

        if (eng.best_epoch > 0 && epoch - eng.best_epoch >= cfg.early_stop_patience) break;
    }

    FitResult out;
    out.best = eng.best_epoch > 0 ? eng.best : eng.params;
    out.best_epoch = eng.best_epoch;
    out.best_valid_ndcg10 = eng.best_metric;
    out.warmup_epochs =
        eng.warmup_end_epoch > 0 ? eng.warmup_end_epoch : static_cast<int>(eng.warmup_losses.size());
    out.history = std::move(history);
    out.ledger = eng.ledger;
    out.term_counts = eng.totals;
    out.valid_report = eval::evaluate(out.best, cfg.enc, ds, eng.split, dataio::EvalStage::valid,
                                      cfg.eval_seed, cfg.eval_neg_mode, cfg.eval_candidates);
    out.test_report = eval::evaluate(out.best, cfg.enc, ds, eng.split, dataio::EvalStage::test,
                                     cfg.eval_seed, cfg.eval_neg_mode, cfg.eval_candidates);
    if (!out_dir.empty()) {
        eng.ledger.dump(out_dir + "/ledger.tsv");
        eval::dump_ranks(out.valid_report, out_dir + "/ranks_valid.tsv");
        eval::dump_ranks(out.test_report, out_dir + "/ranks_test.tsv");
    }
    return out;
}

}  // namespace ufnrec::trainer
