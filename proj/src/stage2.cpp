#include "gvalign/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gvalign/errors.hpp"
#include "gvalign/kernels.hpp"

namespace gvalign {

ProtoBank compute_prototypes(const MlpFeatureExtractor& extractor, const Dataset& dataset,
                             std::span<const std::size_t> pool, std::span<const int> classes) {
    const std::size_t d = extractor.feature_dim();
    ProtoBank bank;
    for (int c : classes) bank[c] = Prototype{std::vector<double>(d, 0.0), 0};

    std::vector<std::size_t> rows;
    for (std::size_t idx : pool)
        if (bank.contains(dataset.labels.at(idx))) rows.push_back(idx);
    const Matrix feats = rows.empty() ? Matrix(0, d) : forward(extractor, dataset.samples.gather_rows(rows));
    // Mean as anchor + mean offset from the class's first feature, which is
    // exact when all features coincide.
    std::map<int, std::vector<double>> anchor;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int c = dataset.labels[rows[r]];
        Prototype& p = bank[c];
        const auto f = feats.row(r);
        auto [it, fresh] = anchor.try_emplace(c, f.begin(), f.end());
        if (!fresh)
            for (std::size_t i = 0; i < d; ++i) p.mean[i] += f[i] - it->second[i];
        ++p.count;
    }
    for (auto& [c, p] : bank) {
        if (p.count == 0) throw ValidationError("class " + std::to_string(c) + " has no samples for its prototype");
        const auto& a = anchor.at(c);
        for (std::size_t i = 0; i < d; ++i) p.mean[i] = a[i] + p.mean[i] / static_cast<double>(p.count);
    }
    return bank;
}

bool GlobalVariance::degenerate() const {
    return std::all_of(covariance.values().begin(), covariance.values().end(), [](double v) { return v == 0.0; });
}

Matrix cholesky_lower(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError(shape_message("cholesky needs a square matrix", a.rows(), a.cols()));
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) throw NumericError("matrix is not positive definite at pivot " + std::to_string(j));
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

double covariance_jitter(const Matrix& covariance) {
    double trace = 0.0;
    for (std::size_t i = 0; i < covariance.rows(); ++i) trace += covariance(i, i);
    if (trace == 0.0) return 1e-12;
    return 1e-6 * trace / static_cast<double>(covariance.rows());
}

GlobalVariance global_variance_from_covariance(Matrix covariance) {
    if (covariance.rows() != covariance.cols() || covariance.rows() == 0)
        throw ShapeError(shape_message("covariance must be square", covariance.rows(), covariance.cols()));
    if (!covariance.all_finite()) throw NumericError("covariance has non-finite entries");
    GlobalVariance gv;
    gv.jitter = covariance_jitter(covariance);
    Matrix shifted = covariance;
    for (std::size_t i = 0; i < shifted.rows(); ++i) shifted(i, i) += gv.jitter;
    gv.cholesky = cholesky_lower(shifted);
    gv.covariance = std::move(covariance);
    return gv;
}

GlobalVariance global_variance_from_features(const Matrix& features, int source_class) {
    const std::size_t n = features.rows();
    const std::size_t d = features.cols();
    if (n < 2) throw ValidationError("cannot estimate covariance from fewer than 2 samples");
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += features(r, c);
    for (double& v : mean) v /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) centered(r, c) = features(r, c) - mean[c];
    Matrix scatter;
    kernels::matmul_tn(centered, centered, scatter);
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (double& v : scatter.values()) v *= inv;

    GlobalVariance gv = global_variance_from_covariance(std::move(scatter));
    gv.source_class = source_class;
    gv.source_count = n;
    gv.source_mean = std::move(mean);
    return gv;
}

GlobalVariance estimate_global_variance(const MlpFeatureExtractor& extractor, const Dataset& dataset,
                                        const TaskDataset& base_task) {
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [c, idx] : base_task.train) {
        if (idx.size() > best_count) {  // map order gives lowest id on ties
            best = c;
            best_count = idx.size();
        }
    }
    if (best < 0 || best_count < 2) throw ValidationError("cannot estimate covariance from fewer than 2 samples");
    const Matrix feats = forward(extractor, dataset.samples.gather_rows(base_task.train.at(best)));
    return global_variance_from_features(feats, best);
}

Matrix sample_pseudo_features(std::span<const double> prototype, const GlobalVariance& gv, std::size_t n, Rng& rng) {
    if (prototype.size() != gv.dim()) throw ShapeError(shape_message("prototype dimension", gv.dim(), prototype.size()));
    Matrix means(1, prototype.size());
    std::copy(prototype.begin(), prototype.end(), means.row(0).begin());
    const std::uint64_t seed = rng();
    Matrix out;
    kernels::gaussian_blocks(means, gv.cholesky, n, std::span(&seed, 1), gv.degenerate(), out);
    return out;
}

void AlignConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("stage 2 learning_rate must be positive");
    if (epochs <= 0) throw ConfigError("stage 2 epochs must be positive");
    if (samples_per_class <= 0) throw ConfigError("stage 2 samples_per_class must be positive");
    if (batch_size <= 0) throw ConfigError("stage 2 batch_size must be positive");
}

AlignResult align_classifiers(ClassifierBank bank, const ProtoBank& protos, const GlobalVariance& gv,
                              const AlignConfig& cfg, Rng& rng) {
    cfg.validate();
    if (protos.size() != bank.num_classes()) throw ValidationError("prototype classes do not match classifier classes");
    const std::size_t d = gv.dim();
    if (bank.feature_dim() != d) throw ShapeError(shape_message("alignment feature dimension", bank.feature_dim(), d));

    Matrix means(protos.size(), d);
    std::vector<int> columns;
    std::size_t r = 0;
    for (const auto& [c, p] : protos) {
        const auto col = bank.column_of(c);
        if (!col) throw ValidationError("class " + std::to_string(c) + " has a prototype but no classifier row");
        if (p.mean.size() != d) throw ShapeError(shape_message("prototype dimension", d, p.mean.size()));
        std::copy(p.mean.begin(), p.mean.end(), means.row(r++).begin());
        columns.push_back(static_cast<int>(*col));
    }

    const auto per_class = static_cast<std::size_t>(cfg.samples_per_class);
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    const bool zero_cov = gv.degenerate();
    AlignResult out{std::move(bank), {}};
    std::vector<std::uint64_t> seeds(protos.size());
    std::vector<std::size_t> order(protos.size() * per_class);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // One child stream per class so classes can be drawn concurrently.
        const std::uint64_t epoch_seed = rng();
        for (std::size_t c = 0; c < seeds.size(); ++c) seeds[c] = derive_seed(epoch_seed, "stage2.class", c);
        Matrix pseudo;
        kernels::gaussian_blocks(means, gv.cholesky, per_class, seeds, zero_cov, pseudo);

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            std::vector<int> cols;
            for (std::size_t i : rows) cols.push_back(columns[i / per_class]);
            const Matrix q = pseudo.gather_rows(rows);
            const LossAndGrad ce = cross_entropy(logits(out.bank, q), one_hot(cols, out.bank.num_classes()));
            if (!std::isfinite(ce.loss))
                throw NumericError("classifier alignment loss became non-finite at epoch " + std::to_string(epoch));
            const HeadBackward hb = backward_heads(out.bank, q, ce.grad_logits);
            sgd_update(out.bank, hb.heads, cfg.learning_rate);
            sum += ce.loss;
            ++n_batches;
        }
        out.epoch_loss.push_back(sum / static_cast<double>(n_batches));
    }
    return out;
}

}  // namespace gvalign
