#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gvalign/matrix.hpp"
#include "gvalign/random.hpp"

namespace gvalign {

struct DenseLayer {
    Matrix weight;             // [out x in]
    std::vector<double> bias;  // [out]

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)); zero bias.
DenseLayer xavier_layer(std::size_t in, std::size_t out, Rng& rng);

/// Stack of dense layers with a rectifier after every layer; the last layer
/// is rectified only when `activate_last` is set.
class MlpFeatureExtractor {
public:
    MlpFeatureExtractor() = default;
    MlpFeatureExtractor(std::vector<DenseLayer> layers, bool activate_last);

    static MlpFeatureExtractor make(std::size_t input_dim, std::span<const std::size_t> hidden,
                                    std::size_t feature_dim, Rng& rng, bool activate_last = false);

    std::size_t input_dim() const;
    std::size_t feature_dim() const;
    bool activate_last() const { return activate_last_; }
    bool rectified(std::size_t layer) const { return layer + 1 < layers_.size() || activate_last_; }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& mutable_layers() { return layers_; }

    friend bool operator==(const MlpFeatureExtractor&, const MlpFeatureExtractor&) = default;

private:
    std::vector<DenseLayer> layers_;
    bool activate_last_ = false;
};

enum class HeadMode { linear, cosine };

struct HeadBlock {
    Matrix weight;              // [|classes| x d]
    std::vector<double> bias;   // [|classes|], unused in cosine mode
    std::vector<int> class_ids; // global id of each row

    friend bool operator==(const HeadBlock&, const HeadBlock&) = default;
};

/// Classifier heads, one block per task. Logit column j belongs to
/// `class_ids()[j]`; columns follow block order so adding a block only
/// appends columns.
class ClassifierBank {
public:
    ClassifierBank() = default;
    ClassifierBank(std::size_t feature_dim, HeadMode mode) : feature_dim_(feature_dim), mode_(mode) {}

    /// Appends a Xavier-initialised block for `class_ids`.
    void add_block(const std::vector<int>& class_ids, Rng& rng);
    void add_block(HeadBlock block);

    std::size_t feature_dim() const { return feature_dim_; }
    HeadMode mode() const { return mode_; }
    std::size_t num_classes() const { return columns_.size(); }
    bool empty() const { return blocks_.empty(); }

    const std::vector<HeadBlock>& blocks() const { return blocks_; }
    std::vector<HeadBlock>& mutable_blocks() { return blocks_; }

    const std::vector<int>& class_ids() const { return columns_; }
    std::optional<std::size_t> column_of(int class_id) const;
    /// (block, row) holding `class_id`.
    std::optional<std::pair<std::size_t, std::size_t>> location(int class_id) const;

    friend bool operator==(const ClassifierBank&, const ClassifierBank&) = default;

private:
    std::size_t feature_dim_ = 0;
    HeadMode mode_ = HeadMode::linear;
    std::vector<HeadBlock> blocks_;
    std::vector<int> columns_;
};

struct Model {
    MlpFeatureExtractor extractor;
    ClassifierBank bank;

    friend bool operator==(const Model&, const Model&) = default;
};

/// Intermediates of one forward pass, required by `backward`.
struct ForwardTrace {
    std::vector<Matrix> inputs;  // input to layer l
    std::vector<Matrix> pre;     // pre-activation of layer l
    Matrix features;

    bool valid() const { return !inputs.empty() && inputs.size() == pre.size(); }
};

Matrix forward(const MlpFeatureExtractor& extractor, const Matrix& batch);
ForwardTrace trace_forward(const MlpFeatureExtractor& extractor, const Matrix& batch);

Matrix logits(const ClassifierBank& bank, const Matrix& features);

/// Row-wise softmax of logits / temperature, max-subtracted.
Matrix softmax_rows(const Matrix& logits, double temperature = 1.0);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad_logits;
};

/// Mean soft-label cross entropy; grad_logits = (softmax - targets) / B.
LossAndGrad cross_entropy(const Matrix& logits, const Matrix& targets);

Matrix one_hot(std::span<const int> columns, std::size_t num_classes);

struct ParamGrad {
    Matrix weight;
    std::vector<double> bias;
};

struct GradientSet {
    std::vector<ParamGrad> extractor;  // one per extractor layer; empty when the extractor is frozen
    std::vector<ParamGrad> heads;      // one per classifier block

    static GradientSet zeros_like(const Model& model);
    void add(const GradientSet& other);
    bool all_finite() const;
};

struct HeadBackward {
    std::vector<ParamGrad> heads;
    Matrix grad_features;
};

/// Gradients of the classifier parameters and of the input features.
HeadBackward backward_heads(const ClassifierBank& bank, const Matrix& features, const Matrix& grad_logits);

/// Exact gradients of a scalar loss with d loss / d logits = grad_logits.
GradientSet backward(const Model& model, const ForwardTrace& trace, const Matrix& grad_logits);

/// p <- p - lr * g. Extractor gradients may be omitted.
Model sgd_step(Model params, const GradientSet& grads, double lr);
void sgd_update(Model& params, const GradientSet& grads, double lr);
void sgd_update(ClassifierBank& bank, std::span<const ParamGrad> grads, double lr);

struct SgdConfig {
    double learning_rate = 0.1;
    std::vector<int> decay_epochs;
    double decay_factor = 0.1;
    int epochs = 1;
    int batch_size = 32;

    void validate() const;
    /// Learning rate in effect during `epoch` (0-based): decays once per
    /// milestone already reached.
    double rate_at(int epoch) const;
};

}  // namespace gvalign
