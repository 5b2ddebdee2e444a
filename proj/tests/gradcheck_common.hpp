#pragma once
// Shared between the unit tests and the acceptance gate: builds small
// training batches with every loss term active (positives, sampled negatives,
// reversed false negatives, kept-negative consistency) and compares the
// analytic gradients from compute_batch against central finite differences
// over the complete parameter enumeration.

#include <cmath>
#include <string>
#include <vector>

#include "ufnrec/distill.hpp"
#include "ufnrec/encoder.hpp"
#include "ufnrec/negatives.hpp"
#include "ufnrec/trainer.hpp"

namespace gradcheck {

// Frozen probe settings: central differences with h = 1e-4 must agree with
// the analytic gradient to a relative error of 1e-4 on every coordinate.
inline constexpr double kStep = 1e-4;
inline constexpr double kRelTol = 1e-4;

struct Scenario {
    ufnrec::encoder::EncoderConfig enc;
    ufnrec::encoder::ModelParams params;
    ufnrec::distill::TeacherParams teacher;
    bool use_teacher = false;
    double alpha = 0.0;
    ufnrec::negatives::FnAction action = ufnrec::negatives::FnAction::reverse;
    ufnrec::negatives::RecordLedger ledger;
    ufnrec::trainer::BatchPlan plan;
};

struct Result {
    double max_rel = 0.0;
    size_t checked = 0;
    std::string worst_array;
    int worst_index = -1;
    bool padding_grad_zero = true;
};

inline double loss_of(const Scenario& sc, const ufnrec::encoder::ModelParams& params) {
    return ufnrec::trainer::compute_batch(params, sc.use_teacher ? &sc.teacher : nullptr, sc.enc,
                                          sc.alpha, sc.action, sc.ledger, sc.plan,
                                          ufnrec::encoder::DropoutCtx::off(), nullptr)
        .final;
}

// The shared batch fixture: 4 users over a 12-item vocabulary, ragged
// lengths, one reversed false negative at (user 0, step 1) and one at
// (user 2, step 0).
inline Scenario make_scenario(ufnrec::encoder::EncoderConfig enc, double alpha,
                              ufnrec::negatives::FnAction action, bool with_teacher) {
    using namespace ufnrec;
    Scenario sc;
    sc.enc = enc;
    sc.params = encoder::init_params(enc, 12, 51);
    if (with_teacher) {
        // A teacher with different weights, so the soft labels are not simply
        // the student's own sigmoid outputs.
        encoder::ModelParams other = encoder::init_params(enc, 12, 207);
        sc.teacher = distill::make_teacher(other, 0.97);
        sc.use_teacher = true;
    }
    sc.alpha = alpha;
    sc.action = action;

    int s0[] = {3, 7, 1};
    int s1[] = {5, 2};
    int s2[] = {8, 11, 6, 10};
    int s3[] = {12};
    sc.plan.batch.add(0, s0, 3);
    sc.plan.batch.add(1, s1, 2);
    sc.plan.batch.add(2, s2, 4);
    sc.plan.batch.add(3, s3, 1);
    sc.plan.positives = {7, 1, 4, 2, 6, 11, 6, 10, 5, 9};
    sc.plan.negatives = {{5}, {9, 2}, {11}, {8}, {1}, {3}, {2, 5}, {4}, {7}, {1}};

    sc.ledger.m = 1;
    sc.ledger.mark_false(0, 1, 9);
    sc.ledger.mark_false(2, 0, 4);
    return sc;
}

inline Result run(Scenario& sc) {
    using namespace ufnrec;
    Result res;
    encoder::ModelParams grads = encoder::make_zero_like(sc.params);
    trainer::compute_batch(sc.params, sc.use_teacher ? &sc.teacher : nullptr, sc.enc, sc.alpha,
                           sc.action, sc.ledger, sc.plan, encoder::DropoutCtx::off(), &grads);

    for (int k = 0; k < grads.item_emb.cols; ++k)
        if (grads.item_emb.at(0, k) != 0.0) res.padding_grad_zero = false;

    auto param_arrays = encoder::param_entries(sc.params);
    auto grad_arrays = encoder::param_entries(grads);
    for (size_t a = 0; a < param_arrays.size(); ++a) {
        Mat* pm = param_arrays[a].second;
        const Mat* gm = grad_arrays[a].second;
        for (size_t i = 0; i < pm->a.size(); ++i) {
            double saved = pm->a[i];
            pm->a[i] = saved + kStep;
            double up = loss_of(sc, sc.params);
            pm->a[i] = saved - kStep;
            double down = loss_of(sc, sc.params);
            pm->a[i] = saved;
            double numeric = (up - down) / (2.0 * kStep);
            double analytic = gm->a[i];
            double rel = std::fabs(analytic - numeric) /
                         std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst_array = param_arrays[a].first;
                res.worst_index = static_cast<int>(i);
            }
            ++res.checked;
        }
    }
    return res;
}

}  // namespace gradcheck
