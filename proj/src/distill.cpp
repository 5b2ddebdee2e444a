#include "ufnrec/distill.hpp"

#include <stdexcept>

namespace ufnrec::distill {

TeacherParams make_teacher(const encoder::ModelParams& student, double decay) {
    if (decay < 0.0 || decay > 1.0) throw std::runtime_error("ema decay must be in [0,1]");
    return TeacherParams{student, decay};
}

void ema_update(TeacherParams& teacher, const encoder::ModelParams& student) {
    auto shadow = encoder::param_entries(teacher.shadow);
    auto live = encoder::param_entries(student);
    if (shadow.size() != live.size())
        throw std::runtime_error("teacher/student parameter structure mismatch");
    double d = teacher.decay;
    for (size_t i = 0; i < shadow.size(); ++i) {
        Mat& s = *shadow[i].second;
        const Mat& w = *live[i].second;
        if (!s.same_shape(w))
            throw std::runtime_error("teacher/student shape mismatch at " + shadow[i].first);
        for (size_t j = 0; j < s.a.size(); ++j) s.a[j] = d * s.a[j] + (1.0 - d) * w.a[j];
    }
}

double soft_label(const TeacherParams& teacher, const encoder::EncoderConfig& cfg, int user,
                  const std::vector<int>& prefix, int item) {
    encoder::Batch batch;
    batch.add(user, prefix.data(), static_cast<int>(prefix.size()));
    encoder::DropoutCtx off;  // teacher always runs deterministically
    encoder::ForwardCtx ctx = encoder::encode(teacher.shadow, cfg, batch, off);
    double logit =
        encoder::score(ctx.reps.row(ctx.reps.rows - 1), item, teacher.shadow);
    return encoder::sigmoid(logit);
}

double consistency_loss(const std::vector<double>& student_logits,
                        const std::vector<double>& soft_labels) {
    if (student_logits.size() != soft_labels.size())
        throw std::runtime_error("consistency loss: logit/label length mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < student_logits.size(); ++i)
        sum += encoder::bce_from_logit(student_logits[i], soft_labels[i]);
    return sum;
}

LossBreakdown final_loss(double basic, double consistency, double alpha) {
    if (alpha < 0.0) throw std::runtime_error("alpha must be non-negative");
    LossBreakdown out;
    out.basic = basic;
    out.consistency = consistency;
    out.alpha = alpha;
    out.final = basic + alpha * consistency;
    return out;
}

}  // namespace ufnrec::distill
