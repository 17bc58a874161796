#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvalign/data.hpp"
#include "gvalign/nn.hpp"

namespace gvalign {

struct ClassTally {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalResult {
    std::map<int, ClassTally> per_class;

    /// Micro accuracy over the given classes (all classes when empty).
    double accuracy(std::span<const int> classes = {}) const;
    std::map<int, double> per_class_accuracy() const;
};

/// Argmax over all seen classes on the test sets of `tasks`.
EvalResult evaluate(const Model& model, const Dataset& dataset, std::span<const TaskDataset> tasks);

/// Entries Acc_{0:n}^t for n <= t after each task t.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks) : cells_(tasks, std::vector<std::optional<double>>(tasks)) {}

    std::size_t tasks() const { return cells_.size(); }
    void set(std::size_t t, std::size_t n, double acc);
    std::optional<double> get(std::size_t t, std::size_t n) const;
    std::vector<double> diagonal() const;

private:
    std::vector<std::vector<std::optional<double>>> cells_;
};

/// Mean of the T+1 diagonal entries.
double average_incremental_accuracy(const AccuracyMatrix& matrix);

struct GroupReport {
    std::vector<int> long_classes;
    std::vector<int> tail_classes;
    double long_accuracy = 0.0;
    double tail_accuracy = 0.0;
    double all_accuracy = 0.0;
};

/// Classes sorted by descending training count (lower id first on ties);
/// the first ceil(n/2) are "long", the rest "tail". Means are per-class (macro).
GroupReport group_accuracy(const std::map<int, double>& per_class_accuracy, const std::map<int, int>& train_counts);

struct RegionBounds {
    double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
};

struct RegionGrid {
    RegionBounds bounds;
    std::size_t resolution = 0;
    std::vector<int> cells;  // row-major, row i <-> y, column j <-> x

    int at(std::size_t i, std::size_t j) const { return cells[i * resolution + j]; }
    std::array<double, 2> point(std::size_t i, std::size_t j) const;
};

/// Argmax class at the centre of each cell of a resolution x resolution grid.
RegionGrid decision_region_grid(const ClassifierBank& bank, const RegionBounds& bounds, std::size_t resolution);

struct TaskReport {
    int task_id = 0;
    double accuracy = 0.0;  // Acc_{0:t}^t
    std::map<int, double> per_class;
    GroupReport groups;
    std::vector<double> stage1_loss;
    std::vector<double> stage2_loss;  // empty when alignment is off
};

struct RunRecord {
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string method;
    AccuracyMatrix matrix;
    std::vector<TaskReport> tasks;
    std::map<int, RegionGrid> regions;  // task -> grid
};

std::string accuracy_matrix_csv(const AccuracyMatrix& matrix);
AccuracyMatrix parse_accuracy_matrix_csv(const std::string& text);
std::string region_csv(const RegionGrid& grid);
nlohmann::json metrics_json(const RunRecord& record);

/// Writes metrics.json, accuracy_matrix.csv and regions_t<k>.csv into `dir`.
void persist_results(const RunRecord& record, const std::filesystem::path& dir);

}  // namespace gvalign
