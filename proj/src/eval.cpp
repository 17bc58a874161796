#include "gvalign/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "gvalign/errors.hpp"
#include "gvalign/kernels.hpp"

namespace gvalign {

namespace {

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

double EvalResult::accuracy(std::span<const int> classes) const {
    std::size_t correct = 0, total = 0;
    if (classes.empty()) {
        for (const auto& [c, t] : per_class) {
            correct += t.correct;
            total += t.total;
        }
    } else {
        for (int c : classes) {
            const auto it = per_class.find(c);
            if (it == per_class.end()) continue;
            correct += it->second.correct;
            total += it->second.total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::map<int, double> EvalResult::per_class_accuracy() const {
    std::map<int, double> out;
    for (const auto& [c, t] : per_class) out[c] = t.accuracy();
    return out;
}

EvalResult evaluate(const Model& model, const Dataset& dataset, std::span<const TaskDataset> tasks) {
    std::vector<std::size_t> rows;
    for (const auto& task : tasks) {
        for (const auto& [c, idx] : task.test) {
            if (!model.bank.column_of(c))
                throw ValidationError("test class " + std::to_string(c) + " is not covered by the classifier");
            rows.insert(rows.end(), idx.begin(), idx.end());
        }
    }
    EvalResult result;
    for (const auto& task : tasks)
        for (const auto& [c, idx] : task.test) result.per_class[c];
    if (rows.empty()) return result;

    const Matrix z = logits(model.bank, forward(model.extractor, dataset.samples.gather_rows(rows)));
    std::vector<std::size_t> pred;
    kernels::row_argmax(z, pred);
    const auto& ids = model.bank.class_ids();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int truth = dataset.labels[rows[r]];
        ClassTally& tally = result.per_class[truth];
        ++tally.total;
        if (ids[pred[r]] == truth) ++tally.correct;
    }
    return result;
}

void AccuracyMatrix::set(std::size_t t, std::size_t n, double acc) {
    if (t >= tasks() || n > t) throw ValidationError("accuracy cell (" + std::to_string(t) + "," + std::to_string(n) + ") outside lower triangle");
    if (!(acc >= 0.0 && acc <= 1.0)) throw ValidationError("accuracy outside [0, 1]");
    cells_[t][n] = acc;
}

std::optional<double> AccuracyMatrix::get(std::size_t t, std::size_t n) const {
    if (t >= tasks() || n >= tasks()) return std::nullopt;
    return cells_[t][n];
}

std::vector<double> AccuracyMatrix::diagonal() const {
    std::vector<double> out;
    for (std::size_t t = 0; t < tasks(); ++t) {
        if (!cells_[t][t]) throw ValidationError("missing diagonal accuracy for task " + std::to_string(t));
        out.push_back(*cells_[t][t]);
    }
    return out;
}

double average_incremental_accuracy(const AccuracyMatrix& matrix) {
    const auto diag = matrix.diagonal();
    if (diag.empty()) throw ValidationError("accuracy matrix has no tasks");
    double s = 0.0;
    for (double v : diag) s += v;
    return s / static_cast<double>(diag.size());
}

GroupReport group_accuracy(const std::map<int, double>& per_class_accuracy, const std::map<int, int>& train_counts) {
    std::vector<int> classes;
    for (const auto& [c, a] : per_class_accuracy) classes.push_back(c);
    const auto count = [&](int c) {
        const auto it = train_counts.find(c);
        return it == train_counts.end() ? 0 : it->second;
    };
    std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) {
        if (count(a) != count(b)) return count(a) > count(b);
        return a < b;
    });
    GroupReport report;
    const std::size_t n_long = (classes.size() + 1) / 2;
    report.long_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_long));
    report.tail_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(n_long), classes.end());
    const auto mean = [&](const std::vector<int>& group) {
        if (group.empty()) return 0.0;
        double s = 0.0;
        for (int c : group) s += per_class_accuracy.at(c);
        return s / static_cast<double>(group.size());
    };
    report.long_accuracy = mean(report.long_classes);
    report.tail_accuracy = mean(report.tail_classes);
    report.all_accuracy = mean(classes);
    return report;
}

std::array<double, 2> RegionGrid::point(std::size_t i, std::size_t j) const {
    const double r = static_cast<double>(resolution);
    return {bounds.x_min + (static_cast<double>(j) + 0.5) * (bounds.x_max - bounds.x_min) / r,
            bounds.y_min + (static_cast<double>(i) + 0.5) * (bounds.y_max - bounds.y_min) / r};
}

RegionGrid decision_region_grid(const ClassifierBank& bank, const RegionBounds& bounds, std::size_t resolution) {
    if (bank.feature_dim() != 2) throw ValidationError("decision regions require 2D features");
    if (resolution == 0) throw ValidationError("decision region resolution must be positive");
    RegionGrid grid{bounds, resolution, {}};
    Matrix points(resolution * resolution, 2);
    for (std::size_t i = 0; i < resolution; ++i)
        for (std::size_t j = 0; j < resolution; ++j) {
            const auto p = grid.point(i, j);
            points(i * resolution + j, 0) = p[0];
            points(i * resolution + j, 1) = p[1];
        }
    std::vector<std::size_t> arg;
    kernels::row_argmax(logits(bank, points), arg);
    grid.cells.resize(arg.size());
    for (std::size_t k = 0; k < arg.size(); ++k) grid.cells[k] = bank.class_ids()[arg[k]];
    return grid;
}

std::string accuracy_matrix_csv(const AccuracyMatrix& matrix) {
    std::ostringstream out;
    out << "t";
    for (std::size_t n = 0; n < matrix.tasks(); ++n) out << ",acc_0_" << n;
    out << "\n";
    for (std::size_t t = 0; t < matrix.tasks(); ++t) {
        out << t;
        for (std::size_t n = 0; n < matrix.tasks(); ++n) {
            out << ",";
            if (const auto v = matrix.get(t, n)) out << format_real(*v);
        }
        out << "\n";
    }
    return out.str();
}

AccuracyMatrix parse_accuracy_matrix_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("accuracy matrix CSV is empty");
    const auto n_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    AccuracyMatrix m(n_cols);
    std::size_t t = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');
        for (std::size_t n = 0; n < n_cols; ++n) {
            if (!std::getline(row, field, ',')) field.clear();
            if (!field.empty()) m.set(t, n, std::stod(field));
        }
        ++t;
    }
    if (t != n_cols) throw ValidationError("accuracy matrix CSV is not square");
    return m;
}

std::string region_csv(const RegionGrid& grid) {
    std::ostringstream out;
    out << "x,y,class\n";
    for (std::size_t i = 0; i < grid.resolution; ++i)
        for (std::size_t j = 0; j < grid.resolution; ++j) {
            const auto p = grid.point(i, j);
            out << format_real(p[0]) << "," << format_real(p[1]) << "," << grid.at(i, j) << "\n";
        }
    return out.str();
}

nlohmann::json metrics_json(const RunRecord& record) {
    using nlohmann::json;
    json j;
    j["config"] = record.config;
    j["seed"] = record.seed;
    j["method"] = record.method;
    j["average_incremental_accuracy"] = average_incremental_accuracy(record.matrix);
    j["diagonal"] = record.matrix.diagonal();
    json tasks = json::array();
    for (const auto& t : record.tasks) {
        json per_class = json::object();
        for (const auto& [c, a] : t.per_class) per_class[std::to_string(c)] = a;
        tasks.push_back({
            {"task", t.task_id},
            {"accuracy", t.accuracy},
            {"per_class_accuracy", per_class},
            {"groups",
             {{"long", t.groups.long_accuracy},
              {"tail", t.groups.tail_accuracy},
              {"all", t.groups.all_accuracy},
              {"long_classes", t.groups.long_classes},
              {"tail_classes", t.groups.tail_classes}}},
            {"stage1_loss", t.stage1_loss},
            {"stage2_loss", t.stage2_loss},
        });
    }
    j["tasks"] = tasks;
    j["timestamp"] = utc_timestamp();
    return j;
}

void persist_results(const RunRecord& record, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    write_file(dir / "metrics.json", metrics_json(record).dump(2) + "\n");
    write_file(dir / "accuracy_matrix.csv", accuracy_matrix_csv(record.matrix));
    for (const auto& [t, grid] : record.regions)
        write_file(dir / ("regions_t" + std::to_string(t) + ".csv"), region_csv(grid));
}

}  // namespace gvalign
