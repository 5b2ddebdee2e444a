// Benchmarks the OpenMP compute kernels against the serial reference and
// verifies the results stay bitwise identical (the parallel versions assign
// each output element to exactly one thread with the serial accumulation
// order, so any difference is a bug, not roundoff).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ufnrec/encoder.hpp"
#include "ufnrec/kernels.hpp"
#include "ufnrec/mat.hpp"
#include "ufnrec/rng.hpp"

using namespace ufnrec;

namespace {

double now() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (double& v : m.a) v = rng.normal();
    return m;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Row {
    std::string name;
    double serial_ms;
    double omp_ms;
    bool identical;
};

template <class FSerial, class FOmp, class FCheck>
Row bench(const std::string& name, int reps, FSerial&& fs, FOmp&& fo, FCheck&& check) {
    fs();  // warm
    double t0 = now();
    for (int i = 0; i < reps; ++i) fs();
    double serial_ms = (now() - t0) / reps * 1e3;
    fo();
    double t1 = now();
    for (int i = 0; i < reps; ++i) fo();
    double omp_ms = (now() - t1) / reps * 1e3;
    return {name, serial_ms, omp_ms, check()};
}

}  // namespace

int main(int argc, char** argv) {
    int threads = 0;
    int reps = 20;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
        else if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--threads N] [--reps N]\n", argv[0]);
            return 2;
        }
    }
#ifdef _OPENMP
    if (threads <= 0) threads = omp_get_max_threads();
#else
    if (threads <= 0) threads = 1;
#endif
    kernels::set_threads(threads);
    std::printf("kernel benchmark: %d thread(s), %d reps per kernel\n\n", kernels::threads(),
                reps);

    Rng rng(12345);
    std::vector<Row> rows;

    {  // gemm family, encoder-shaped: many rows, small d
        const int M = 2048, K = 64, N = 64;
        Mat A = random_mat(M, K, rng), B = random_mat(K, N, rng), Bt = random_mat(N, K, rng);
        Mat At = random_mat(K, M, rng), Bn = random_mat(K, N, rng);
        Mat Cs(M, N), Co(M, N), Ts(M, N);
        rows.push_back(bench(
            "gemm_nn 2048x64x64", reps,
            [&] { kernels::serial::gemm_nn(A.a.data(), B.a.data(), Cs.a.data(), M, K, N, false); },
            [&] { kernels::omp::gemm_nn(A.a.data(), B.a.data(), Co.a.data(), M, K, N, false); },
            [&] { return bitwise_equal(Cs.a, Co.a); }));
        rows.push_back(bench(
            "gemm_nt 2048x64x64", reps,
            [&] { kernels::serial::gemm_nt(A.a.data(), Bt.a.data(), Cs.a.data(), M, K, N, false); },
            [&] { kernels::omp::gemm_nt(A.a.data(), Bt.a.data(), Co.a.data(), M, K, N, false); },
            [&] { return bitwise_equal(Cs.a, Co.a); }));
        Mat Co2(M, N);
        rows.push_back(bench(
            "gemm_tn 2048x64x64", reps,
            [&] { kernels::serial::gemm_tn(At.a.data(), Bn.a.data(), Ts.a.data(), M, K, N, false); },
            [&] { kernels::omp::gemm_tn(At.a.data(), Bn.a.data(), Co2.a.data(), M, K, N, false); },
            [&] { return bitwise_equal(Ts.a, Co2.a); }));
    }

    {  // layer norm
        const int R = 4096, d = 64;
        Mat X = random_mat(R, d, rng), g = random_mat(1, d, rng), b = random_mat(1, d, rng);
        Mat Hs(R, d), Ho(R, d), dH = random_mat(R, d, rng);
        std::vector<double> ms(R), rs(R), mo(R), ro(R);
        rows.push_back(bench(
            "ln_forward 4096x64", reps,
            [&] {
                kernels::serial::ln_forward(X.a.data(), g.a.data(), b.a.data(), Hs.a.data(),
                                            ms.data(), rs.data(), R, d, 1e-5);
            },
            [&] {
                kernels::omp::ln_forward(X.a.data(), g.a.data(), b.a.data(), Ho.a.data(),
                                         mo.data(), ro.data(), R, d, 1e-5);
            },
            [&] { return bitwise_equal(Hs.a, Ho.a) && bitwise_equal(ms, mo); }));
        Mat dXs(R, d), dXo(R, d), dgs(1, d), dgo(1, d), dbs(1, d), dbo(1, d);
        rows.push_back(bench(
            "ln_backward 4096x64", reps,
            [&] {
                dXs.zero(); dgs.zero(); dbs.zero();
                kernels::serial::ln_backward(X.a.data(), g.a.data(), ms.data(), rs.data(),
                                             dH.a.data(), dXs.a.data(), dgs.a.data(),
                                             dbs.a.data(), R, d);
            },
            [&] {
                dXo.zero(); dgo.zero(); dbo.zero();
                kernels::omp::ln_backward(X.a.data(), g.a.data(), ms.data(), rs.data(),
                                          dH.a.data(), dXo.a.data(), dgo.a.data(), dbo.a.data(),
                                          R, d);
            },
            [&] {
                return bitwise_equal(dXs.a, dXo.a) && bitwise_equal(dgs.a, dgo.a) &&
                       bitwise_equal(dbs.a, dbo.a);
            }));
    }

    {  // embedding-table scatter
        const int n = 50000, vocab = 2000, d = 64;
        std::vector<int> keys(n), src_rows(n);
        std::vector<double> w(n);
        Rng krng(99);
        for (int i = 0; i < n; ++i) {
            keys[i] = krng.uniform_int(0, vocab - 1);
            src_rows[i] = krng.uniform_int(0, n / 10);
            w[i] = krng.normal();
        }
        std::sort(keys.begin(), keys.end());
        Mat src = random_mat(n / 10 + 1, d, rng);
        Mat dst_s(vocab, d), dst_o(vocab, d);
        rows.push_back(bench(
            "segment_add 50k rows", reps,
            [&] {
                dst_s.zero();
                kernels::serial::segment_add(keys.data(), src_rows.data(), w.data(), n,
                                             src.a.data(), dst_s.a.data(), d, 1.0);
            },
            [&] {
                dst_o.zero();
                kernels::omp::segment_add(keys.data(), src_rows.data(), w.data(), n,
                                          src.a.data(), dst_o.a.data(), d, 1.0);
            },
            [&] { return bitwise_equal(dst_s.a, dst_o.a); }));
    }

    {  // whole encoder forward+backward, thread count toggled via set_threads
        encoder::EncoderConfig cfg;
        cfg.d_model = 64;
        cfg.n_layers = 2;
        cfg.n_heads = 2;
        cfg.max_len = 50;
        cfg.dropout = 0.0;
        const int item_count = 500, n_seq = 64, len = 40;
        encoder::ModelParams p = encoder::init_params(cfg, item_count, 7);
        encoder::Batch batch;
        Rng brng(4);
        std::vector<int> seq(len);
        for (int s = 0; s < n_seq; ++s) {
            for (int& it : seq) it = brng.uniform_int(1, item_count);
            batch.add(s, seq.data(), len);
        }
        auto drop = encoder::DropoutCtx::off();
        encoder::ModelParams gs = encoder::make_zero_like(p);
        encoder::ModelParams go = encoder::make_zero_like(p);
        Mat reps_s, reps_o;
        auto run = [&](encoder::ModelParams& grads, Mat* reps_out) {
            auto ctx = encoder::encode(p, cfg, batch, drop);
            Mat d_reps(ctx.reps.rows, ctx.reps.cols);
            for (size_t i = 0; i < d_reps.a.size(); ++i)
                d_reps.a[i] = ctx.reps.a[i] * 1e-3;  // arbitrary deterministic cotangent
            for (auto& [name, mat] : encoder::param_entries(grads)) mat->zero();
            encoder::encode_backward(p, cfg, batch, ctx, drop, d_reps, grads);
            if (reps_out) *reps_out = ctx.reps;
        };
        int bench_reps = std::max(1, reps / 4);
        rows.push_back(bench(
            "encoder fwd+bwd 64x40 d=64", bench_reps,
            [&] {
                kernels::set_threads(1);
                run(gs, &reps_s);
            },
            [&] {
                kernels::set_threads(threads);
                run(go, &reps_o);
            },
            [&] {
                if (!bitwise_equal(reps_s.a, reps_o.a)) return false;
                auto es = encoder::param_entries(gs);
                auto eo = encoder::param_entries(go);
                for (size_t i = 0; i < es.size(); ++i)
                    if (!bitwise_equal(es[i].second->a, eo[i].second->a)) return false;
                return true;
            }));
        kernels::set_threads(threads);
    }

    std::printf("%-28s %12s %12s %9s %10s\n", "kernel", "serial ms", "omp ms", "speedup",
                "bitwise");
    bool all_ok = true;
    for (const auto& r : rows) {
        std::printf("%-28s %12.3f %12.3f %8.2fx %10s\n", r.name.c_str(), r.serial_ms, r.omp_ms,
                    r.omp_ms > 0 ? r.serial_ms / r.omp_ms : 0.0,
                    r.identical ? "identical" : "MISMATCH");
        all_ok = all_ok && r.identical;
    }
    if (!all_ok) {
        std::fprintf(stderr, "\nFAIL: parallel kernels diverged from the serial reference\n");
        return 1;
    }
    std::printf("\nall parallel kernels bitwise-identical to the serial reference\n");
    return 0;
}
