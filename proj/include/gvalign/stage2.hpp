#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "gvalign/data.hpp"
#include "gvalign/matrix.hpp"
#include "gvalign/nn.hpp"
#include "gvalign/random.hpp"

namespace gvalign {

struct Prototype {
    std::vector<double> mean;
    std::size_t count = 0;
};

using ProtoBank = std::map<int, Prototype>;

/// Mean extractor feature of every class in `classes` over the pool.
ProtoBank compute_prototypes(const MlpFeatureExtractor& extractor, const Dataset& dataset,
                             std::span<const std::size_t> pool, std::span<const int> classes);

/// Shared feature covariance used to sample pseudo-features around every prototype.
struct GlobalVariance {
    Matrix covariance;          // Sigma_G, unbiased
    Matrix cholesky;            // lower L with L L^T = Sigma_G + jitter I
    double jitter = 0.0;
    int source_class = -1;
    std::size_t source_count = 0;
    std::vector<double> source_mean;

    std::size_t dim() const { return covariance.rows(); }
    /// Sigma_G is exactly zero; sampling then returns the prototype itself.
    bool degenerate() const;
};

/// Lower Cholesky factor of a symmetric positive definite matrix.
Matrix cholesky_lower(const Matrix& a);

/// jitter = 1e-6 * trace / d, or 1e-12 for a zero trace.
double covariance_jitter(const Matrix& covariance);

GlobalVariance global_variance_from_covariance(Matrix covariance);

/// Unbiased covariance of the rows of `features` (needs >= 2 rows).
GlobalVariance global_variance_from_features(const Matrix& features, int source_class = -1);

/// Picks the base-task class with the most training samples (lowest id on
/// ties) and estimates the covariance of its features.
GlobalVariance estimate_global_variance(const MlpFeatureExtractor& extractor, const Dataset& dataset,
                                        const TaskDataset& base_task);

/// n rows drawn from N(prototype, Sigma_G).
Matrix sample_pseudo_features(std::span<const double> prototype, const GlobalVariance& gv, std::size_t n, Rng& rng);

struct AlignConfig {
    double learning_rate = 0.1;
    int epochs = 100;
    int samples_per_class = 64;
    int batch_size = 64;

    void validate() const;
};

struct AlignResult {
    ClassifierBank bank;
    std::vector<double> epoch_loss;
};

/// Retrains only the classifier on fresh pseudo-features each epoch, labelled
/// with their prototype's class.
AlignResult align_classifiers(ClassifierBank bank, const ProtoBank& protos, const GlobalVariance& gv,
                              const AlignConfig& cfg, Rng& rng);

}  // namespace gvalign
