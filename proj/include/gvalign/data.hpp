#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gvalign/matrix.hpp"
#include "gvalign/nn.hpp"

namespace gvalign {

struct Dataset {
    Matrix samples;           // [N x in]
    std::vector<int> labels;  // [N], values in [0, num_classes)
    int num_classes = 0;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    std::size_t input_dim() const { return samples.cols(); }
    void validate() const;
    /// Sample indices of each class, in dataset order.
    std::vector<std::vector<std::size_t>> per_class_indices() const;
};

enum class ScenarioKind { ordered_long_tail, shuffled_long_tail, conventional };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& name);

struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::shuffled_long_tail;
    int base_classes = 50;
    int new_classes_per_task = 10;
    int num_tasks = 5;  // incremental tasks after the base task
    double imbalance_ratio = 0.01;
    int max_per_class = 500;
    int test_per_class = 20;
    std::uint64_t seed = 0;

    int total_classes() const { return base_classes + num_tasks * new_classes_per_task; }
    /// Throws ConfigError; `available_classes` < 0 skips the class-count check.
    void validate(int available_classes = -1) const;
};

struct TaskDataset {
    int task_id = 0;
    std::vector<int> class_ids;
    std::map<int, std::vector<std::size_t>> train;  // class -> dataset indices
    std::map<int, std::vector<std::size_t>> test;

    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
    std::size_t train_count(int class_id) const;
};

struct Scenario {
    ScenarioSpec spec;
    std::vector<TaskDataset> tasks;
    std::map<int, int> train_counts;  // class -> training samples in its task
};

/// counts[k] = max(1, round(n_max * rho^(k / (K - 1)))).
std::vector<int> long_tail_counts(int num_classes, int max_per_class, double imbalance_ratio);

Scenario build_scenario(const Dataset& dataset, const ScenarioSpec& spec);

/// Greedy mean matching (iCaRL herding). Returns min(m, N) row indices in
/// selection order; ties go to the lowest index.
std::vector<std::size_t> herding_select(const Matrix& features, std::size_t m, bool normalize = false);

struct ExemplarBank {
    std::size_t capacity = 0;
    std::map<int, std::vector<std::size_t>> per_class;  // herding-ranked dataset indices

    std::size_t total_size() const;
    std::vector<std::size_t> all_indices() const;
    bool contains_class(int class_id) const { return per_class.contains(class_id); }
};

/// Adds herding-ranked exemplars for every class of `task`, computed on the
/// current extractor's features. Classes already in the bank are untouched.
ExemplarBank update_exemplars(ExemplarBank bank, const TaskDataset& task, const MlpFeatureExtractor& extractor,
                              const Dataset& dataset, std::size_t m, bool normalize = false);

struct SyntheticSpec {
    int num_classes = 20;
    int dim = 16;
    double separation = 4.0;
    double within_std = 1.0;
    int n_per_class = 300;
    std::uint64_t seed = 0;
};

/// Isotropic Gaussian clusters with pairwise mean distance >= separation * within_std.
Dataset make_synthetic_clusters(const SyntheticSpec& spec);

struct CsvOptions {
    char delimiter = ',';
    std::optional<bool> header;  // nullopt: detect from the first row
};

/// Rows are `label,value,value,...`.
Dataset load_csv(const std::string& path, const CsvOptions& options = {});

}  // namespace gvalign
