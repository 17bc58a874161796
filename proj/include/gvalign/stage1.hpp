#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gvalign/data.hpp"
#include "gvalign/matrix.hpp"
#include "gvalign/nn.hpp"
#include "gvalign/random.hpp"

namespace gvalign {

/// Mixing coefficients follow Beta(1, 1); pairs come from a seeded
/// permutation of the current mini-batch.
struct MixupConfig {
    bool enabled = true;
    /// Restrict mixing to samples of the current task's classes.
    bool new_only = false;
    /// Replaces the Beta draw; used to pin the endpoints in tests.
    std::optional<double> fixed_lambda;
};

enum class IncrementalLossKind { ce, ce_distill };

std::string to_string(IncrementalLossKind kind);
IncrementalLossKind incremental_loss_from_string(const std::string& name);

/// The model as it stood at the end of the previous task.
struct FrozenTeacher {
    Model model;
    double temperature = 2.0;
};

struct Stage1Config {
    IncrementalLossKind incremental_loss = IncrementalLossKind::ce_distill;
    double distill_weight = 1.0;
    double temperature = 2.0;
    SgdConfig sgd;
    MixupConfig mixup;

    void validate() const;
};

/// lambda ~ Beta(1, 1), i.e. uniform on [0, 1].
double sample_lambda(Rng& rng);

struct MixedBatch {
    Matrix x;
    Matrix y;
};

/// x~ = lambda x_m + (1 - lambda) x_n,  y~ = lambda y_m + (1 - lambda) y_n.
MixedBatch mixup_batch(const Matrix& x_m, const Matrix& y_m, const Matrix& x_n, const Matrix& y_n, double lambda);

struct DistillTerm {
    double loss = 0.0;        // tau^2 * KL(teacher || student), batch mean
    Matrix grad_old_logits;   // d loss / d student old-class logits
};

/// KL(softmax(teacher / tau) || softmax(student / tau)) scaled by tau^2.
DistillTerm distillation(const Matrix& teacher_logits, const Matrix& student_old_logits, double temperature);

struct IncrementalLoss {
    double loss = 0.0;
    double ce = 0.0;
    double distill = 0.0;
    Matrix grad_logits;
};

/// L_inc on a raw mini-batch. `teacher_logits` holds the frozen teacher's
/// logits for the same batch (old classes only) and is required when the
/// variant distils and task_id >= 1.
IncrementalLoss incremental_loss(const Stage1Config& cfg, int task_id, const Matrix& student_logits,
                                 const Matrix& targets, const Matrix* teacher_logits);

struct Stage1Log {
    std::vector<double> total;  // per-epoch mean of L_inc + L_mix
    std::vector<double> inc;
    std::vector<double> mix;    // empty when mixup is off
};

struct Stage1Streams {
    Rng batches;
    Rng mixup;
};

struct Stage1Input {
    const Dataset& dataset;
    std::span<const std::size_t> pool;  // D(t) u E, dataset indices
    std::span<const int> new_classes;   // C(t)
    int task_id = 0;
};

/// Optimises L_inc + L_mix over mini-batches of the pool. The current task's
/// head block must already be in `model.bank`.
Stage1Log stage1_train(Model& model, const Stage1Input& input, const Stage1Config& cfg,
                       const FrozenTeacher* teacher, Stage1Streams& streams);

}  // namespace gvalign
