#pragma once

#include <vector>

#include "ufnrec/encoder.hpp"

namespace ufnrec::distill {

// Exponential-moving-average shadow of the student model.
struct TeacherParams {
    encoder::ModelParams shadow;
    double decay = 0.999;
};

// Initialize the teacher as an exact copy of the student.
TeacherParams make_teacher(const encoder::ModelParams& student, double decay);

// One EMA step: shadow <- decay * shadow + (1 - decay) * student, elementwise.
void ema_update(TeacherParams& teacher, const encoder::ModelParams& student);

// Teacher prediction for one (prefix, item) pair, dropout disabled:
// sigmoid of the teacher's score. No gradient flows through the teacher.
double soft_label(const TeacherParams& teacher, const encoder::EncoderConfig& cfg, int user,
                  const std::vector<int>& prefix, int item);

// Sum of soft-label binary cross-entropies, one per reversed false negative.
double consistency_loss(const std::vector<double>& student_logits,
                        const std::vector<double>& soft_labels);

struct LossBreakdown {
    double basic = 0.0;
    double consistency = 0.0;
    double alpha = 0.0;
    double final = 0.0;
};

LossBreakdown final_loss(double basic, double consistency, double alpha);

}  // namespace ufnrec::distill
