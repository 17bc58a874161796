#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gvalign/data.hpp"
#include "gvalign/eval.hpp"
#include "gvalign/nn.hpp"
#include "gvalign/stage1.hpp"
#include "gvalign/stage2.hpp"

namespace gvalign {

/// baseline: stage 1 with L_inc only. mixup-only: L_inc + L_mix.
/// gvalign: L_inc + L_mix followed by classifier alignment.
enum class Method { baseline, mixup_only, gvalign };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct DatasetSource {
    enum class Kind { synthetic, csv } kind = Kind::synthetic;
    SyntheticSpec synthetic;
    std::optional<std::uint64_t> synthetic_seed;  // derived from the run seed when unset
    std::string csv_path;
    CsvOptions csv;
};

struct ModelConfig {
    std::vector<std::size_t> hidden{64, 64};
    std::size_t feature_dim = 16;
    HeadMode head = HeadMode::linear;
    bool rectify_features = false;
};

struct RegionConfig {
    bool enabled = false;
    std::size_t resolution = 100;
    std::optional<RegionBounds> bounds;  // default: test-feature extent padded by 10%
};

struct ExperimentConfig {
    DatasetSource dataset;
    ScenarioSpec scenario;
    std::optional<std::uint64_t> scenario_seed;  // derived from the run seed when unset
    ModelConfig model;
    Stage1Config stage1;
    AlignConfig align;
    Method method = Method::gvalign;
    std::size_t exemplars = 20;
    bool herding_normalize = false;
    std::uint64_t seed = 0;
    std::string output_dir = "results";
    RegionConfig regions;

    void validate() const;
    /// Stage-1 settings with mixup switched on or off by `method`.
    Stage1Config effective_stage1() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Everything the per-task loop carries from one task to the next.
struct ExperimentState {
    Model model;
    ExemplarBank exemplars;
    std::optional<GlobalVariance> global_variance;
    std::optional<FrozenTeacher> teacher;
    ProtoBank prototypes;  // from the last alignment; fallback for classes without exemplars
    int next_task = 0;
};

struct ExperimentContext {
    const ExperimentConfig& config;
    const Dataset& dataset;
    const Scenario& scenario;
};

ExperimentState initial_state(const ExperimentContext& ctx);

/// One task of the incremental protocol: new head block, stage 1, prototypes,
/// global variance (task 0), alignment, exemplar update, evaluation.
TaskReport run_task(const ExperimentContext& ctx, ExperimentState& state, int task_id, AccuracyMatrix& matrix,
                    std::optional<RegionGrid>* region = nullptr);

struct RunOutcome {
    RunRecord record;
    ExperimentState state;
    double average_incremental_accuracy = 0.0;
};

Dataset load_dataset(const ExperimentConfig& cfg);
Scenario make_scenario(const ExperimentConfig& cfg, const Dataset& dataset);

/// Full incremental protocol over all tasks; nothing is written to disk.
RunOutcome run_experiment(const ExperimentConfig& cfg);
/// run_experiment followed by persist_results into cfg.output_dir.
RunOutcome run_and_persist(const ExperimentConfig& cfg);

struct SweepRow {
    std::size_t exemplars = 0;
    Method method = Method::gvalign;
    double average_incremental_accuracy = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    /// method -> whether avg-inc-acc is non-decreasing in the exemplar count.
    std::vector<std::pair<Method, bool>> non_decreasing;
};

/// Reruns the experiment for every (count, method) pair. Every run keeps the
/// base seed, so counts are compared on identical data and initialisation.
/// Writes <out>/m<count>_<method>/ per run plus <out>/sweep.csv.
SweepResult sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts,
                  const std::vector<Method>& methods, bool persist = true);

std::string sweep_csv(const SweepResult& result);

}  // namespace gvalign
