#include "gvalign/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "gvalign/errors.hpp"
#include "gvalign/random.hpp"

namespace gvalign {

using nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::mixup_only: return "mixup-only";
        case Method::gvalign: return "gvalign";
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    if (name == "baseline") return Method::baseline;
    if (name == "mixup-only") return Method::mixup_only;
    if (name == "gvalign") return Method::gvalign;
    throw ConfigError("unknown method '" + name + "' (expected baseline, mixup-only or gvalign)");
}

void ExperimentConfig::validate() const {
    if (dataset.kind == DatasetSource::Kind::csv && dataset.csv_path.empty()) throw ConfigError("csv dataset needs a path");
    scenario.validate();
    if (model.feature_dim == 0) throw ConfigError("feature_dim must be positive");
    for (std::size_t w : model.hidden)
        if (w == 0) throw ConfigError("hidden widths must be positive");
    stage1.validate();
    if (method == Method::gvalign) align.validate();
    if (regions.enabled && regions.resolution == 0) throw ConfigError("region resolution must be positive");
    if (regions.bounds && !(regions.bounds->x_max > regions.bounds->x_min && regions.bounds->y_max > regions.bounds->y_min))
        throw ConfigError("region bounds must be increasing");
}

Stage1Config ExperimentConfig::effective_stage1() const {
    Stage1Config s = stage1;
    s.mixup.enabled = method != Method::baseline;
    return s;
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string head_to_string(HeadMode m) { return m == HeadMode::linear ? "linear" : "cosine"; }

HeadMode head_from_string(const std::string& s) {
    if (s == "linear") return HeadMode::linear;
    if (s == "cosine") return HeadMode::cosine;
    throw ConfigError("unknown head mode '" + s + "'");
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig cfg;
    check_keys(j, {"seed", "method", "exemplars", "herding_normalize", "output_dir", "dataset", "scenario", "model",
                   "stage1", "stage2", "regions"},
               "config");
    read(j, "seed", cfg.seed);
    if (j.contains("method")) cfg.method = method_from_string(j.at("method").get<std::string>());
    read(j, "exemplars", cfg.exemplars);
    read(j, "herding_normalize", cfg.herding_normalize);
    read(j, "output_dir", cfg.output_dir);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        const std::string source = d.value("source", std::string("synthetic"));
        if (source == "synthetic") {
            check_keys(d, {"source", "num_classes", "dim", "separation", "within_std", "n_per_class", "seed"}, "dataset");
            auto& s = cfg.dataset.synthetic;
            read(d, "num_classes", s.num_classes);
            read(d, "dim", s.dim);
            read(d, "separation", s.separation);
            read(d, "within_std", s.within_std);
            read(d, "n_per_class", s.n_per_class);
            if (d.contains("seed")) cfg.dataset.synthetic_seed = d.at("seed").get<std::uint64_t>();
        } else if (source == "csv") {
            check_keys(d, {"source", "path", "delimiter", "header"}, "dataset");
            cfg.dataset.kind = DatasetSource::Kind::csv;
            read(d, "path", cfg.dataset.csv_path);
            const std::string delim = d.value("delimiter", std::string(","));
            if (delim.size() != 1) throw ConfigError("csv delimiter must be a single character");
            cfg.dataset.csv.delimiter = delim[0];
            if (d.contains("header")) cfg.dataset.csv.header = d.at("header").get<bool>();
        } else {
            throw ConfigError("unknown dataset source '" + source + "'");
        }
    }

    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        check_keys(s, {"kind", "base_classes", "new_classes_per_task", "num_tasks", "imbalance_ratio", "max_per_class",
                       "test_per_class", "seed"},
                   "scenario");
        if (s.contains("kind")) cfg.scenario.kind = scenario_kind_from_string(s.at("kind").get<std::string>());
        read(s, "base_classes", cfg.scenario.base_classes);
        read(s, "new_classes_per_task", cfg.scenario.new_classes_per_task);
        read(s, "num_tasks", cfg.scenario.num_tasks);
        read(s, "imbalance_ratio", cfg.scenario.imbalance_ratio);
        read(s, "max_per_class", cfg.scenario.max_per_class);
        read(s, "test_per_class", cfg.scenario.test_per_class);
        if (s.contains("seed")) cfg.scenario_seed = s.at("seed").get<std::uint64_t>();
    }
    if (cfg.scenario.kind == ScenarioKind::conventional) cfg.scenario.imbalance_ratio = 1.0;

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"hidden", "feature_dim", "head", "rectify_features"}, "model");
        read(m, "hidden", cfg.model.hidden);
        read(m, "feature_dim", cfg.model.feature_dim);
        if (m.contains("head")) cfg.model.head = head_from_string(m.at("head").get<std::string>());
        read(m, "rectify_features", cfg.model.rectify_features);
    }

    if (j.contains("stage1")) {
        const json& s = j.at("stage1");
        check_keys(s, {"incremental_loss", "distill_weight", "temperature", "learning_rate", "decay_epochs",
                       "decay_factor", "epochs", "batch_size", "mixup_new_only"},
                   "stage1");
        if (s.contains("incremental_loss"))
            cfg.stage1.incremental_loss = incremental_loss_from_string(s.at("incremental_loss").get<std::string>());
        read(s, "distill_weight", cfg.stage1.distill_weight);
        read(s, "temperature", cfg.stage1.temperature);
        read(s, "learning_rate", cfg.stage1.sgd.learning_rate);
        read(s, "decay_epochs", cfg.stage1.sgd.decay_epochs);
        read(s, "decay_factor", cfg.stage1.sgd.decay_factor);
        read(s, "epochs", cfg.stage1.sgd.epochs);
        read(s, "batch_size", cfg.stage1.sgd.batch_size);
        read(s, "mixup_new_only", cfg.stage1.mixup.new_only);
    }

    if (j.contains("stage2")) {
        const json& s = j.at("stage2");
        check_keys(s, {"learning_rate", "epochs", "samples_per_class", "batch_size"}, "stage2");
        read(s, "learning_rate", cfg.align.learning_rate);
        read(s, "epochs", cfg.align.epochs);
        read(s, "samples_per_class", cfg.align.samples_per_class);
        read(s, "batch_size", cfg.align.batch_size);
    }

    if (j.contains("regions")) {
        const json& r = j.at("regions");
        check_keys(r, {"enabled", "resolution", "bounds"}, "regions");
        read(r, "enabled", cfg.regions.enabled);
        read(r, "resolution", cfg.regions.resolution);
        if (r.contains("bounds")) {
            const auto b = r.at("bounds").get<std::vector<double>>();
            if (b.size() != 4) throw ConfigError("regions.bounds must be [x_min, x_max, y_min, y_max]");
            cfg.regions.bounds = RegionBounds{b[0], b[1], b[2], b[3]};
        }
    }
    return cfg;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    try {
        cfg = parse_config(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["method"] = to_string(cfg.method);
    j["exemplars"] = cfg.exemplars;
    j["herding_normalize"] = cfg.herding_normalize;
    j["output_dir"] = cfg.output_dir;

    json d;
    if (cfg.dataset.kind == DatasetSource::Kind::synthetic) {
        const auto& s = cfg.dataset.synthetic;
        d = {{"source", "synthetic"},    {"num_classes", s.num_classes}, {"dim", s.dim},
             {"separation", s.separation}, {"within_std", s.within_std},  {"n_per_class", s.n_per_class}};
        if (cfg.dataset.synthetic_seed) d["seed"] = *cfg.dataset.synthetic_seed;
    } else {
        d = {{"source", "csv"}, {"path", cfg.dataset.csv_path}, {"delimiter", std::string(1, cfg.dataset.csv.delimiter)}};
        if (cfg.dataset.csv.header) d["header"] = *cfg.dataset.csv.header;
    }
    j["dataset"] = d;

    const auto& sc = cfg.scenario;
    json s = {{"kind", to_string(sc.kind)},
              {"base_classes", sc.base_classes},
              {"new_classes_per_task", sc.new_classes_per_task},
              {"num_tasks", sc.num_tasks},
              {"imbalance_ratio", sc.imbalance_ratio},
              {"max_per_class", sc.max_per_class},
              {"test_per_class", sc.test_per_class}};
    if (cfg.scenario_seed) s["seed"] = *cfg.scenario_seed;
    j["scenario"] = s;

    j["model"] = {{"hidden", cfg.model.hidden},
                  {"feature_dim", cfg.model.feature_dim},
                  {"head", head_to_string(cfg.model.head)},
                  {"rectify_features", cfg.model.rectify_features}};

    const auto& s1 = cfg.stage1;
    j["stage1"] = {{"incremental_loss", to_string(s1.incremental_loss)},
                   {"distill_weight", s1.distill_weight},
                   {"temperature", s1.temperature},
                   {"learning_rate", s1.sgd.learning_rate},
                   {"decay_epochs", s1.sgd.decay_epochs},
                   {"decay_factor", s1.sgd.decay_factor},
                   {"epochs", s1.sgd.epochs},
                   {"batch_size", s1.sgd.batch_size},
                   {"mixup_new_only", s1.mixup.new_only}};

    j["stage2"] = {{"learning_rate", cfg.align.learning_rate},
                   {"epochs", cfg.align.epochs},
                   {"samples_per_class", cfg.align.samples_per_class},
                   {"batch_size", cfg.align.batch_size}};

    json r = {{"enabled", cfg.regions.enabled}, {"resolution", cfg.regions.resolution}};
    if (cfg.regions.bounds) {
        const auto& b = *cfg.regions.bounds;
        r["bounds"] = {b.x_min, b.x_max, b.y_min, b.y_max};
    }
    j["regions"] = r;
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config '" + path.string() + "': " + e.what());
    }
    return config_from_json(j);
}

Dataset load_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == DatasetSource::Kind::csv) return load_csv(cfg.dataset.csv_path, cfg.dataset.csv);
    SyntheticSpec spec = cfg.dataset.synthetic;
    spec.seed = cfg.dataset.synthetic_seed.value_or(derive_seed(cfg.seed, "data.synthetic"));
    return make_synthetic_clusters(spec);
}

Scenario make_scenario(const ExperimentConfig& cfg, const Dataset& dataset) {
    ScenarioSpec spec = cfg.scenario;
    spec.seed = cfg.scenario_seed.value_or(derive_seed(cfg.seed, "scenario"));
    return build_scenario(dataset, spec);
}

ExperimentState initial_state(const ExperimentContext& ctx) {
    const auto& cfg = ctx.config;
    Rng init = make_rng(cfg.seed, "init.extractor");
    ExperimentState state;
    state.model.extractor = MlpFeatureExtractor::make(ctx.dataset.input_dim(), cfg.model.hidden, cfg.model.feature_dim,
                                                      init, cfg.model.rectify_features);
    state.model.bank = ClassifierBank(cfg.model.feature_dim, cfg.model.head);
    state.exemplars.capacity = cfg.exemplars;
    return state;
}

namespace {

RegionBounds feature_extent(const Model& model, const Dataset& dataset, std::span<const TaskDataset> tasks) {
    std::vector<std::size_t> rows;
    for (const auto& t : tasks) {
        const auto idx = t.test_indices();
        rows.insert(rows.end(), idx.begin(), idx.end());
    }
    RegionBounds b{-1.0, 1.0, -1.0, 1.0};
    if (rows.empty()) return b;
    const Matrix f = forward(model.extractor, dataset.samples.gather_rows(rows));
    double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double hi[2] = {-lo[0], -lo[1]};
    for (std::size_t r = 0; r < f.rows(); ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            lo[c] = std::min(lo[c], f(r, c));
            hi[c] = std::max(hi[c], f(r, c));
        }
    for (std::size_t c = 0; c < 2; ++c) {
        const double pad = std::max(0.1 * (hi[c] - lo[c]), 1e-3);
        lo[c] -= pad;
        hi[c] += pad;
    }
    return {lo[0], hi[0], lo[1], hi[1]};
}

}  // namespace

TaskReport run_task(const ExperimentContext& ctx, ExperimentState& state, int task_id, AccuracyMatrix& matrix,
                    std::optional<RegionGrid>* region) {
    const auto& cfg = ctx.config;
    const auto& tasks = ctx.scenario.tasks;
    if (task_id != state.next_task)
        throw ProtocolError("task " + std::to_string(task_id) + " presented out of order (expected " +
                            std::to_string(state.next_task) + ")");
    if (task_id < 0 || static_cast<std::size_t>(task_id) >= tasks.size())
        throw ProtocolError("task " + std::to_string(task_id) + " does not exist in the scenario");
    const TaskDataset& task = tasks[static_cast<std::size_t>(task_id)];
    const auto t = static_cast<std::uint64_t>(task_id);

    Rng head_rng = make_rng(cfg.seed, "init.head", t);
    state.model.bank.add_block(task.class_ids, head_rng);

    std::vector<std::size_t> pool = task.train_indices();
    const auto old = state.exemplars.all_indices();
    pool.insert(pool.end(), old.begin(), old.end());

    const Stage1Config s1 = cfg.effective_stage1();
    Stage1Streams streams{make_rng(cfg.seed, "stage1.batches", t), make_rng(cfg.seed, "stage1.mixup", t)};
    const FrozenTeacher* teacher = state.teacher ? &*state.teacher : nullptr;
    const Stage1Log s1_log = stage1_train(state.model, {ctx.dataset, pool, task.class_ids, task_id}, s1, teacher, streams);

    TaskReport report;
    report.task_id = task_id;
    report.stage1_loss = s1_log.total;

    if (cfg.method == Method::gvalign) {
        const std::vector<int> seen = state.model.bank.class_ids();
        // Old classes without exemplars (m = 0) have nothing in the pool.
        std::vector<int> present;
        for (int c : seen) {
            const bool in_task = std::find(task.class_ids.begin(), task.class_ids.end(), c) != task.class_ids.end();
            const auto it = state.exemplars.per_class.find(c);
            if (in_task || (it != state.exemplars.per_class.end() && !it->second.empty())) present.push_back(c);
        }
        ProtoBank protos = compute_prototypes(state.model.extractor, ctx.dataset, pool, present);
        for (int c : seen) {
            if (protos.contains(c)) continue;
            const auto it = state.prototypes.find(c);
            if (it == state.prototypes.end())
                throw ValidationError("class " + std::to_string(c) + " has no samples for its prototype");
            protos[c] = it->second;
        }
        if (task_id == 0) state.global_variance = estimate_global_variance(state.model.extractor, ctx.dataset, task);
        if (!state.global_variance) throw ProtocolError("global variance is missing; task 0 must run first");
        Rng align_rng = make_rng(cfg.seed, "stage2.sampling", t);
        AlignResult aligned = align_classifiers(state.model.bank, protos, *state.global_variance, cfg.align, align_rng);
        state.model.bank = std::move(aligned.bank);
        report.stage2_loss = std::move(aligned.epoch_loss);
        state.prototypes = std::move(protos);
    }

    state.exemplars = update_exemplars(std::move(state.exemplars), task, state.model.extractor, ctx.dataset,
                                       cfg.exemplars, cfg.herding_normalize);

    const std::span<const TaskDataset> seen_tasks(tasks.data(), static_cast<std::size_t>(task_id) + 1);
    const EvalResult eval = evaluate(state.model, ctx.dataset, seen_tasks);
    std::vector<int> upto;
    for (int n = 0; n <= task_id; ++n) {
        const auto& ids = tasks[static_cast<std::size_t>(n)].class_ids;
        upto.insert(upto.end(), ids.begin(), ids.end());
        matrix.set(t, static_cast<std::size_t>(n), eval.accuracy(upto));
    }
    report.accuracy = eval.accuracy(upto);
    report.per_class = eval.per_class_accuracy();
    report.groups = group_accuracy(report.per_class, ctx.scenario.train_counts);

    if (region != nullptr && cfg.regions.enabled && state.model.bank.feature_dim() == 2) {
        const RegionBounds bounds = cfg.regions.bounds.value_or(feature_extent(state.model, ctx.dataset, seen_tasks));
        *region = decision_region_grid(state.model.bank, bounds, cfg.regions.resolution);
    }

    state.teacher = FrozenTeacher{state.model, cfg.stage1.temperature};
    state.next_task = task_id + 1;
    return report;
}

RunOutcome run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const Dataset dataset = load_dataset(cfg);
    const Scenario scenario = make_scenario(cfg, dataset);
    const ExperimentContext ctx{cfg, dataset, scenario};

    RunOutcome out;
    out.state = initial_state(ctx);
    out.record.config = config_to_json(cfg);
    out.record.seed = cfg.seed;
    out.record.method = to_string(cfg.method);
    out.record.matrix = AccuracyMatrix(scenario.tasks.size());
    for (int t = 0; t < static_cast<int>(scenario.tasks.size()); ++t) {
        std::optional<RegionGrid> region;
        out.record.tasks.push_back(run_task(ctx, out.state, t, out.record.matrix, &region));
        if (region) out.record.regions.emplace(t, std::move(*region));
    }
    out.average_incremental_accuracy = average_incremental_accuracy(out.record.matrix);
    return out;
}

RunOutcome run_and_persist(const ExperimentConfig& cfg) {
    RunOutcome out = run_experiment(cfg);
    persist_results(out.record, cfg.output_dir);
    return out;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts, const std::vector<Method>& methods,
                  bool persist) {
    if (counts.empty()) throw ConfigError("sweep needs at least one exemplar count");
    if (methods.empty()) throw ConfigError("sweep needs at least one method");
    SweepResult result;
    const std::filesystem::path root = cfg.output_dir;
    for (std::size_t m : counts) {
        for (Method method : methods) {
            ExperimentConfig run_cfg = cfg;
            run_cfg.exemplars = m;
            run_cfg.method = method;
            run_cfg.output_dir = (root / ("m" + std::to_string(m) + "_" + to_string(method))).string();
            const RunOutcome out = persist ? run_and_persist(run_cfg) : run_experiment(run_cfg);
            result.rows.push_back({m, method, out.average_incremental_accuracy});
        }
    }
    for (Method method : methods) {
        bool ok = true;
        double prev = -1.0;
        std::vector<SweepRow> rows;
        for (const auto& r : result.rows)
            if (r.method == method) rows.push_back(r);
        std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.exemplars < b.exemplars; });
        for (const auto& r : rows) {
            if (r.average_incremental_accuracy < prev) ok = false;
            prev = r.average_incremental_accuracy;
        }
        result.non_decreasing.emplace_back(method, ok);
    }
    if (persist) {
        std::filesystem::create_directories(root);
        std::ofstream out(root / "sweep.csv", std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + (root / "sweep.csv").string() + "'");
        out << sweep_csv(result);
    }
    return result;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "exemplars,method,average_incremental_accuracy\n";
    char buf[32];
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.average_incremental_accuracy);
        out << r.exemplars << "," << to_string(r.method) << "," << buf << "\n";
    }
    return out.str();
}

}  // namespace gvalign
