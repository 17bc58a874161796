#include "gvalign/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gvalign/errors.hpp"
#include "gvalign/kernels.hpp"

namespace gvalign {

namespace {

constexpr double kNormFloor = 1e-12;

// Rows scaled to unit length; rows with norm below kNormFloor become zero.
Matrix normalize_rows(const Matrix& m, std::vector<double>& norms) {
    Matrix out(m.rows(), m.cols());
    norms.assign(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto x = m.row(r);
        double s = 0.0;
        for (double v : x) s += v * v;
        const double n = std::sqrt(s);
        norms[r] = n;
        if (n < kNormFloor) continue;
        auto y = out.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) y[c] = x[c] / n;
    }
    return out;
}

// (g - (g.u) u) / n for each row: gradient through x -> x / |x|.
void project_normalized(Matrix& g, const Matrix& unit, std::span<const double> norms) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row(r);
        if (norms[r] < kNormFloor) {
            for (double& v : gr) v = 0.0;
            continue;
        }
        const auto u = unit.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < gr.size(); ++c) dot += gr[c] * u[c];
        for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - dot * u[c]) / norms[r];
    }
}

Matrix block_columns(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, begin + c);
    return out;
}

void axpy(Matrix& y, const Matrix& x, double a) {
    if (y.rows() != x.rows() || y.cols() != x.cols()) throw ShapeError(shape_message("update shape", y.size(), x.size()));
    auto& yv = y.values();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += a * xv[i];
}

void axpy(std::vector<double>& y, const std::vector<double>& x, double a) {
    if (y.size() != x.size()) throw ShapeError(shape_message("update length", y.size(), x.size()));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

DenseLayer xavier_layer(std::size_t in, std::size_t out, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-s, s);
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
    for (double& w : layer.weight.values()) w = u(rng);
    return layer;
}

MlpFeatureExtractor::MlpFeatureExtractor(std::vector<DenseLayer> layers, bool activate_last)
    : layers_(std::move(layers)), activate_last_(activate_last) {
    if (layers_.empty()) throw ValidationError("feature extractor needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.bias.size() != layer.weight.rows())
            throw ShapeError(shape_message("layer " + std::to_string(l) + " bias length", layer.weight.rows(), layer.bias.size()));
        if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows())
            throw ShapeError(shape_message("layer " + std::to_string(l) + " input dimension",
                                           layers_[l - 1].weight.rows(), layer.weight.cols()));
        if (!layer.weight.all_finite()) throw NumericError("layer " + std::to_string(l) + " has non-finite weights");
    }
}

MlpFeatureExtractor MlpFeatureExtractor::make(std::size_t input_dim, std::span<const std::size_t> hidden,
                                              std::size_t feature_dim, Rng& rng, bool activate_last) {
    if (input_dim == 0 || feature_dim == 0) throw ValidationError("extractor dimensions must be positive");
    std::vector<DenseLayer> layers;
    std::size_t in = input_dim;
    for (std::size_t width : hidden) {
        if (width == 0) throw ValidationError("hidden width must be positive");
        layers.push_back(xavier_layer(in, width, rng));
        in = width;
    }
    layers.push_back(xavier_layer(in, feature_dim, rng));
    return {std::move(layers), activate_last};
}

std::size_t MlpFeatureExtractor::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
std::size_t MlpFeatureExtractor::feature_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

void ClassifierBank::add_block(const std::vector<int>& class_ids, Rng& rng) {
    DenseLayer init = xavier_layer(feature_dim_, class_ids.size(), rng);
    add_block(HeadBlock{std::move(init.weight), std::move(init.bias), class_ids});
}

void ClassifierBank::add_block(HeadBlock block) {
    if (block.weight.cols() != feature_dim_)
        throw ShapeError(shape_message("head block feature dimension", feature_dim_, block.weight.cols()));
    if (block.weight.rows() != block.class_ids.size() || block.bias.size() != block.class_ids.size())
        throw ShapeError(shape_message("head block rows", block.class_ids.size(), block.weight.rows()));
    for (int id : block.class_ids) {
        if (column_of(id)) throw ValidationError("class " + std::to_string(id) + " already has a classifier row");
    }
    for (int id : block.class_ids) columns_.push_back(id);
    blocks_.push_back(std::move(block));
}

std::optional<std::size_t> ClassifierBank::column_of(int class_id) const {
    const auto it = std::find(columns_.begin(), columns_.end(), class_id);
    if (it == columns_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns_.begin());
}

std::optional<std::pair<std::size_t, std::size_t>> ClassifierBank::location(int class_id) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& ids = blocks_[b].class_ids;
        const auto it = std::find(ids.begin(), ids.end(), class_id);
        if (it != ids.end()) return std::pair{b, static_cast<std::size_t>(it - ids.begin())};
    }
    return std::nullopt;
}

ForwardTrace trace_forward(const MlpFeatureExtractor& extractor, const Matrix& batch) {
    const auto& layers = extractor.layers();
    if (layers.empty()) throw UsageError("feature extractor has no layers");
    if (batch.cols() != extractor.input_dim())
        throw ShapeError(shape_message("forward input dimension", extractor.input_dim(), batch.cols()));
    ForwardTrace trace;
    trace.inputs.reserve(layers.size());
    trace.pre.reserve(layers.size());
    Matrix current = batch;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z;
        kernels::affine_nt(current, layers[l].weight, layers[l].bias, z);
        trace.inputs.push_back(std::move(current));
        current = z;
        if (extractor.rectified(l))
            for (double& v : current.values()) v = std::max(v, 0.0);
        trace.pre.push_back(std::move(z));
    }
    trace.features = std::move(current);
    return trace;
}

Matrix forward(const MlpFeatureExtractor& extractor, const Matrix& batch) {
    return trace_forward(extractor, batch).features;
}

Matrix logits(const ClassifierBank& bank, const Matrix& features) {
    if (bank.empty()) throw UsageError("no classifier blocks");
    if (features.cols() != bank.feature_dim())
        throw ShapeError(shape_message("logits feature dimension", bank.feature_dim(), features.cols()));
    Matrix out(features.rows(), bank.num_classes());
    std::vector<double> fnorms;
    const Matrix unit_features = bank.mode() == HeadMode::cosine ? normalize_rows(features, fnorms) : Matrix{};
    std::size_t offset = 0;
    for (const auto& block : bank.blocks()) {
        Matrix z;
        if (bank.mode() == HeadMode::linear) {
            kernels::affine_nt(features, block.weight, block.bias, z);
        } else {
            std::vector<double> wnorms;
            kernels::affine_nt(unit_features, normalize_rows(block.weight, wnorms), {}, z);
        }
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < z.cols(); ++c) out(r, offset + c) = z(r, c);
        offset += z.cols();
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits, double temperature) {
    if (!(temperature > 0.0)) throw ValidationError("softmax temperature must be positive");
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto x = logits.row(r);
        auto y = out.row(r);
        if (x.empty()) continue;
        const double m = *std::max_element(x.begin(), x.end());
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) {
            y[c] = std::exp((x[c] - m) / temperature);
            s += y[c];
        }
        for (double& v : y) v /= s;
    }
    return out;
}

LossAndGrad cross_entropy(const Matrix& logits, const Matrix& targets) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
        throw ShapeError(shape_message("cross entropy target size", logits.size(), targets.size()));
    if (!logits.all_finite()) throw NumericError("cross entropy received non-finite logits");
    const std::size_t batch = logits.rows();
    LossAndGrad out{0.0, Matrix(batch, logits.cols())};
    if (batch == 0) return out;
    for (std::size_t r = 0; r < batch; ++r) {
        const auto y = targets.row(r);
        double s = 0.0;
        for (double v : y) {
            if (v < 0.0) throw ValidationError("cross entropy target row " + std::to_string(r) + " has a negative entry");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw ValidationError("cross entropy target row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const auto x = logits.row(r);
        const auto y = targets.row(r);
        auto g = out.grad_logits.row(r);
        const double m = *std::max_element(x.begin(), x.end());
        double s = 0.0;
        for (double v : x) s += std::exp(v - m);
        const double log_z = m + std::log(s);
        double row_loss = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) {
            const double log_p = x[c] - log_z;
            if (y[c] != 0.0) row_loss -= y[c] * log_p;
            g[c] = (std::exp(log_p) - y[c]) * inv_b;
        }
        total += row_loss;
    }
    out.loss = total * inv_b;
    return out;
}

Matrix one_hot(std::span<const int> columns, std::size_t num_classes) {
    Matrix out(columns.size(), num_classes);
    for (std::size_t r = 0; r < columns.size(); ++r) {
        if (columns[r] < 0 || static_cast<std::size_t>(columns[r]) >= num_classes)
            throw ValidationError("one-hot column " + std::to_string(columns[r]) + " out of range");
        out(r, static_cast<std::size_t>(columns[r])) = 1.0;
    }
    return out;
}

GradientSet GradientSet::zeros_like(const Model& model) {
    GradientSet g;
    for (const auto& layer : model.extractor.layers())
        g.extractor.push_back({Matrix(layer.weight.rows(), layer.weight.cols()), std::vector<double>(layer.bias.size(), 0.0)});
    for (const auto& block : model.bank.blocks())
        g.heads.push_back({Matrix(block.weight.rows(), block.weight.cols()), std::vector<double>(block.bias.size(), 0.0)});
    return g;
}

void GradientSet::add(const GradientSet& other) {
    if (other.extractor.size() != extractor.size() || other.heads.size() != heads.size())
        throw ShapeError("gradient sets cover different parameters");
    for (std::size_t i = 0; i < extractor.size(); ++i) {
        axpy(extractor[i].weight, other.extractor[i].weight, 1.0);
        axpy(extractor[i].bias, other.extractor[i].bias, 1.0);
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
        axpy(heads[i].weight, other.heads[i].weight, 1.0);
        axpy(heads[i].bias, other.heads[i].bias, 1.0);
    }
}

bool GradientSet::all_finite() const {
    const auto finite = [](const ParamGrad& p) {
        return p.weight.all_finite() && std::all_of(p.bias.begin(), p.bias.end(), [](double v) { return std::isfinite(v); });
    };
    return std::all_of(extractor.begin(), extractor.end(), finite) && std::all_of(heads.begin(), heads.end(), finite);
}

HeadBackward backward_heads(const ClassifierBank& bank, const Matrix& features, const Matrix& grad_logits) {
    if (bank.empty()) throw UsageError("no classifier blocks");
    if (grad_logits.rows() != features.rows() || grad_logits.cols() != bank.num_classes())
        throw ShapeError(shape_message("grad_logits columns", bank.num_classes(), grad_logits.cols()));
    if (features.cols() != bank.feature_dim())
        throw ShapeError(shape_message("head feature dimension", bank.feature_dim(), features.cols()));

    HeadBackward out;
    out.grad_features = Matrix(features.rows(), features.cols());
    std::vector<double> fnorms;
    const bool cosine = bank.mode() == HeadMode::cosine;
    const Matrix& fin = features;
    const Matrix unit_features = cosine ? normalize_rows(features, fnorms) : Matrix{};
    const Matrix& head_input = cosine ? unit_features : fin;

    std::size_t offset = 0;
    for (const auto& block : bank.blocks()) {
        const Matrix g = block_columns(grad_logits, offset, block.class_ids.size());
        offset += block.class_ids.size();
        ParamGrad pg;
        Matrix df;
        if (!cosine) {
            kernels::matmul_tn(g, head_input, pg.weight);
            kernels::column_sums(g, pg.bias);
            kernels::matmul_nn(g, block.weight, df);
        } else {
            std::vector<double> wnorms;
            const Matrix unit_w = normalize_rows(block.weight, wnorms);
            kernels::matmul_tn(g, head_input, pg.weight);
            project_normalized(pg.weight, unit_w, wnorms);
            pg.bias.assign(block.bias.size(), 0.0);
            kernels::matmul_nn(g, unit_w, df);
        }
        axpy(out.grad_features, df, 1.0);
        out.heads.push_back(std::move(pg));
    }
    if (cosine) project_normalized(out.grad_features, unit_features, fnorms);
    return out;
}

GradientSet backward(const Model& model, const ForwardTrace& trace, const Matrix& grad_logits) {
    if (!trace.valid()) throw UsageError("backward called without cached forward activations");
    const auto& layers = model.extractor.layers();
    if (trace.inputs.size() != layers.size())
        throw UsageError("forward trace does not belong to this extractor");

    HeadBackward hb = backward_heads(model.bank, trace.features, grad_logits);
    GradientSet out;
    out.heads = std::move(hb.heads);
    out.extractor.resize(layers.size());

    Matrix g = std::move(hb.grad_features);
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (model.extractor.rectified(l)) {
            const auto& z = trace.pre[l].values();
            auto& gv = g.values();
            for (std::size_t i = 0; i < gv.size(); ++i)
                if (!(z[i] > 0.0)) gv[i] = 0.0;
        }
        kernels::matmul_tn(g, trace.inputs[l], out.extractor[l].weight);
        kernels::column_sums(g, out.extractor[l].bias);
        if (l > 0) {
            Matrix next;
            kernels::matmul_nn(g, layers[l].weight, next);
            g = std::move(next);
        }
    }
    return out;
}

void sgd_update(ClassifierBank& bank, std::span<const ParamGrad> grads, double lr) {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    auto& blocks = bank.mutable_blocks();
    if (grads.size() != blocks.size()) throw ShapeError(shape_message("head gradient blocks", blocks.size(), grads.size()));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        axpy(blocks[b].weight, grads[b].weight, -lr);
        axpy(blocks[b].bias, grads[b].bias, -lr);
    }
}

void sgd_update(Model& params, const GradientSet& grads, double lr) {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    auto& layers = params.extractor.mutable_layers();
    if (!grads.extractor.empty()) {
        if (grads.extractor.size() != layers.size())
            throw ShapeError(shape_message("extractor gradient layers", layers.size(), grads.extractor.size()));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            axpy(layers[l].weight, grads.extractor[l].weight, -lr);
            axpy(layers[l].bias, grads.extractor[l].bias, -lr);
        }
    }
    sgd_update(params.bank, grads.heads, lr);
}

Model sgd_step(Model params, const GradientSet& grads, double lr) {
    sgd_update(params, grads, lr);
    return params;
}

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
        if (decay_epochs[i] < 0 || decay_epochs[i] >= epochs) throw ConfigError("decay epoch outside [0, epochs)");
        if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) throw ConfigError("decay_epochs must be strictly increasing");
    }
}

double SgdConfig::rate_at(int epoch) const {
    double lr = learning_rate;
    for (int milestone : decay_epochs)
        if (epoch >= milestone) lr *= decay_factor;
    return lr;
}

}  // namespace gvalign
