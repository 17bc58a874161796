#include "gvalign/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gvalign/errors.hpp"

namespace gvalign {

std::string to_string(IncrementalLossKind kind) {
    return kind == IncrementalLossKind::ce ? "ce" : "ce+distill";
}

IncrementalLossKind incremental_loss_from_string(const std::string& name) {
    if (name == "ce") return IncrementalLossKind::ce;
    if (name == "ce+distill") return IncrementalLossKind::ce_distill;
    throw ConfigError("unknown incremental loss '" + name + "'");
}

void Stage1Config::validate() const {
    sgd.validate();
    if (!(distill_weight >= 0.0)) throw ConfigError("distill_weight must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (mixup.fixed_lambda && !(*mixup.fixed_lambda >= 0.0 && *mixup.fixed_lambda <= 1.0))
        throw ConfigError("fixed mixup lambda must lie in [0, 1]");
}

double sample_lambda(Rng& rng) {
    // Beta(1, 1) is the uniform law on [0, 1].
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng);
}

MixedBatch mixup_batch(const Matrix& x_m, const Matrix& y_m, const Matrix& x_n, const Matrix& y_n, double lambda) {
    if (x_m.rows() != x_n.rows() || x_m.cols() != x_n.cols())
        throw ShapeError(shape_message("mixup sample batch size", x_m.size(), x_n.size()));
    if (y_m.rows() != y_n.rows() || y_m.cols() != y_n.cols() || y_m.rows() != x_m.rows())
        throw ShapeError(shape_message("mixup label batch size", y_m.size(), y_n.size()));
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixup lambda outside [0, 1]");
    const double mu = 1.0 - lambda;
    MixedBatch out{Matrix(x_m.rows(), x_m.cols()), Matrix(y_m.rows(), y_m.cols())};
    for (std::size_t i = 0; i < x_m.size(); ++i) out.x.values()[i] = lambda * x_m.values()[i] + mu * x_n.values()[i];
    for (std::size_t i = 0; i < y_m.size(); ++i) out.y.values()[i] = lambda * y_m.values()[i] + mu * y_n.values()[i];
    return out;
}

DistillTerm distillation(const Matrix& teacher_logits, const Matrix& student_old_logits, double temperature) {
    if (teacher_logits.rows() != student_old_logits.rows() || teacher_logits.cols() != student_old_logits.cols())
        throw ShapeError(shape_message("distillation logits size", teacher_logits.size(), student_old_logits.size()));
    const std::size_t batch = teacher_logits.rows();
    DistillTerm out{0.0, Matrix(batch, teacher_logits.cols())};
    if (batch == 0) return out;
    const Matrix p = softmax_rows(teacher_logits, temperature);
    const Matrix q = softmax_rows(student_old_logits, temperature);
    const double inv_b = 1.0 / static_cast<double>(batch);
    const double t2 = temperature * temperature;
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double pc = p(r, c);
            if (pc > 0.0) total += pc * (std::log(pc) - std::log(q(r, c)));
            // d/dz_s [tau^2 KL(p || softmax(z_s / tau))] = tau (q - p)
            out.grad_old_logits(r, c) = temperature * (q(r, c) - pc) * inv_b;
        }
    }
    out.loss = t2 * total * inv_b;
    return out;
}

IncrementalLoss incremental_loss(const Stage1Config& cfg, int task_id, const Matrix& student_logits,
                                 const Matrix& targets, const Matrix* teacher_logits) {
    LossAndGrad ce = cross_entropy(student_logits, targets);
    IncrementalLoss out{ce.loss, ce.loss, 0.0, std::move(ce.grad_logits)};
    if (cfg.incremental_loss == IncrementalLossKind::ce || task_id == 0) return out;
    if (teacher_logits == nullptr)
        throw ConfigError("ce+distill needs a frozen teacher from task " + std::to_string(task_id - 1));
    if (cfg.distill_weight == 0.0) return out;

    const std::size_t old_k = teacher_logits->cols();
    if (old_k > student_logits.cols())
        throw ShapeError(shape_message("teacher classes within student classes", student_logits.cols(), old_k));
    Matrix student_old(student_logits.rows(), old_k);
    for (std::size_t r = 0; r < student_logits.rows(); ++r)
        for (std::size_t c = 0; c < old_k; ++c) student_old(r, c) = student_logits(r, c);

    const DistillTerm kd = distillation(*teacher_logits, student_old, cfg.temperature);
    out.distill = cfg.distill_weight * kd.loss;
    out.loss = out.ce + out.distill;
    for (std::size_t r = 0; r < student_logits.rows(); ++r)
        for (std::size_t c = 0; c < old_k; ++c) out.grad_logits(r, c) += cfg.distill_weight * kd.grad_old_logits(r, c);
    return out;
}

namespace {

void check_teacher(const Model& student, const FrozenTeacher& teacher) {
    const auto& old_ids = teacher.model.bank.class_ids();
    const auto& ids = student.bank.class_ids();
    if (old_ids.size() > ids.size() || !std::equal(old_ids.begin(), old_ids.end(), ids.begin()))
        throw ConfigError("teacher classes are not the leading classes of the student");
}

}  // namespace

Stage1Log stage1_train(Model& model, const Stage1Input& input, const Stage1Config& cfg,
                       const FrozenTeacher* teacher, Stage1Streams& streams) {
    cfg.validate();
    if (input.pool.empty()) throw ValidationError("stage 1 training pool is empty");
    const bool distil = cfg.incremental_loss == IncrementalLossKind::ce_distill && input.task_id > 0;
    if (distil && teacher == nullptr)
        throw ConfigError("ce+distill needs a frozen teacher from task " + std::to_string(input.task_id - 1));
    if (distil) check_teacher(model, *teacher);

    const Dataset& ds = input.dataset;
    const std::size_t k = model.bank.num_classes();
    std::vector<int> column(input.pool.size());
    std::vector<bool> is_new(input.pool.size());
    for (std::size_t i = 0; i < input.pool.size(); ++i) {
        const int label = ds.labels.at(input.pool[i]);
        const auto col = model.bank.column_of(label);
        if (!col) throw ValidationError("no classifier row for training class " + std::to_string(label));
        column[i] = static_cast<int>(*col);
        is_new[i] = std::find(input.new_classes.begin(), input.new_classes.end(), label) != input.new_classes.end();
    }

    Stage1Log log;
    std::vector<std::size_t> order(input.pool.size());
    const auto batch_size = static_cast<std::size_t>(cfg.sgd.batch_size);
    for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
        const double lr = cfg.sgd.rate_at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), streams.batches);
        double sum_total = 0.0, sum_inc = 0.0, sum_mix = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<std::size_t> rows;
            std::vector<int> cols;
            std::vector<std::size_t> new_rows;
            for (std::size_t i = start; i < end; ++i) {
                if (is_new[order[i]]) new_rows.push_back(rows.size());
                rows.push_back(input.pool[order[i]]);
                cols.push_back(column[order[i]]);
            }
            const Matrix x = ds.samples.gather_rows(rows);
            const Matrix y = one_hot(cols, k);

            const ForwardTrace trace = trace_forward(model.extractor, x);
            const Matrix z = logits(model.bank, trace.features);
            Matrix teacher_z;
            if (distil) teacher_z = logits(teacher->model.bank, forward(teacher->model.extractor, x));
            IncrementalLoss inc = incremental_loss(cfg, input.task_id, z, y, distil ? &teacher_z : nullptr);
            GradientSet grads = backward(model, trace, inc.grad_logits);
            double mix_loss = 0.0;

            if (cfg.mixup.enabled) {
                std::vector<std::size_t> members;
                if (cfg.mixup.new_only) {
                    members = new_rows;
                } else {
                    members.resize(rows.size());
                    std::iota(members.begin(), members.end(), std::size_t{0});
                }
                if (!members.empty()) {
                    const double lambda = cfg.mixup.fixed_lambda ? *cfg.mixup.fixed_lambda : sample_lambda(streams.mixup);
                    std::vector<std::size_t> partners = members;
                    std::shuffle(partners.begin(), partners.end(), streams.mixup);
                    const MixedBatch mixed = mixup_batch(x.gather_rows(members), y.gather_rows(members),
                                                         x.gather_rows(partners), y.gather_rows(partners), lambda);
                    const ForwardTrace mtrace = trace_forward(model.extractor, mixed.x);
                    const LossAndGrad mce = cross_entropy(logits(model.bank, mtrace.features), mixed.y);
                    mix_loss = mce.loss;
                    grads.add(backward(model, mtrace, mce.grad_logits));
                }
            }

            const double total = inc.loss + mix_loss;
            if (!std::isfinite(total) || !grads.all_finite())
                throw NumericError("stage 1 loss became non-finite at task " + std::to_string(input.task_id) + ", epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(n_batches) +
                                   " (L_inc=" + std::to_string(inc.loss) + ", L_mix=" + std::to_string(mix_loss) + ")");
            sgd_update(model, grads, lr);
            sum_total += total;
            sum_inc += inc.loss;
            sum_mix += mix_loss;
            ++n_batches;
        }
        const double nb = static_cast<double>(n_batches);
        log.total.push_back(sum_total / nb);
        log.inc.push_back(sum_inc / nb);
        if (cfg.mixup.enabled) log.mix.push_back(sum_mix / nb);
    }
    return log;
}

}  // namespace gvalign
