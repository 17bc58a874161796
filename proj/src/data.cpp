#include "gvalign/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "gvalign/errors.hpp"
#include "gvalign/random.hpp"

namespace gvalign {

void Dataset::validate() const {
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (samples.rows() != labels.size())
        throw ShapeError(shape_message("dataset sample rows", labels.size(), samples.rows()));
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    if (!samples.all_finite()) throw NumericError("dataset contains non-finite values");
}

std::vector<std::vector<std::size_t>> Dataset::per_class_indices() const {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
}

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::ordered_long_tail: return "ordered-long-tail";
        case ScenarioKind::shuffled_long_tail: return "shuffled-long-tail";
        case ScenarioKind::conventional: return "conventional";
    }
    return "unknown";
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
    if (name == "ordered-long-tail") return ScenarioKind::ordered_long_tail;
    if (name == "shuffled-long-tail") return ScenarioKind::shuffled_long_tail;
    if (name == "conventional") return ScenarioKind::conventional;
    throw ConfigError("unknown scenario kind '" + name + "'");
}

void ScenarioSpec::validate(int available_classes) const {
    if (base_classes < 1) throw ConfigError("base_classes must be >= 1");
    if (num_tasks < 0) throw ConfigError("num_tasks must be >= 0");
    if (num_tasks > 0 && new_classes_per_task < 1) throw ConfigError("new_classes_per_task must be >= 1");
    if (!(imbalance_ratio > 0.0) || imbalance_ratio > 1.0) throw ConfigError("imbalance_ratio must lie in (0, 1]");
    if (max_per_class < 1) throw ConfigError("max_per_class must be >= 1");
    if (test_per_class < 0) throw ConfigError("test_per_class must be >= 0");
    if (available_classes >= 0 && total_classes() > available_classes)
        throw ConfigError("scenario needs " + std::to_string(total_classes()) + " classes but the dataset has " +
                          std::to_string(available_classes));
}

std::vector<std::size_t> TaskDataset::train_indices() const {
    std::vector<std::size_t> out;
    for (const auto& [c, idx] : train) out.insert(out.end(), idx.begin(), idx.end());
    return out;
}

std::vector<std::size_t> TaskDataset::test_indices() const {
    std::vector<std::size_t> out;
    for (const auto& [c, idx] : test) out.insert(out.end(), idx.begin(), idx.end());
    return out;
}

std::size_t TaskDataset::train_count(int class_id) const {
    const auto it = train.find(class_id);
    return it == train.end() ? 0 : it->second.size();
}

std::vector<int> long_tail_counts(int num_classes, int max_per_class, double imbalance_ratio) {
    if (num_classes < 1) throw ValidationError("long_tail_counts needs at least one class");
    if (max_per_class < 1) throw ValidationError("long_tail_counts needs max_per_class >= 1");
    if (!(imbalance_ratio > 0.0) || imbalance_ratio > 1.0)
        throw ValidationError("imbalance ratio must lie in (0, 1]");
    std::vector<int> counts(static_cast<std::size_t>(num_classes), max_per_class);
    if (num_classes == 1) return counts;
    for (int k = 0; k < num_classes; ++k) {
        const double e = static_cast<double>(k) / static_cast<double>(num_classes - 1);
        const double v = std::round(static_cast<double>(max_per_class) * std::pow(imbalance_ratio, e));
        counts[static_cast<std::size_t>(k)] = std::max(1, static_cast<int>(v));
    }
    return counts;
}

Scenario build_scenario(const Dataset& dataset, const ScenarioSpec& spec) {
    dataset.validate();
    spec.validate(dataset.num_classes);
    const int used = spec.total_classes();

    std::vector<int> counts;
    switch (spec.kind) {
        case ScenarioKind::conventional:
            counts.assign(static_cast<std::size_t>(used), spec.max_per_class);
            break;
        case ScenarioKind::ordered_long_tail:
            counts = long_tail_counts(used, spec.max_per_class, spec.imbalance_ratio);
            break;
        case ScenarioKind::shuffled_long_tail: {
            counts = long_tail_counts(used, spec.max_per_class, spec.imbalance_ratio);
            Rng rng = make_rng(spec.seed, "scenario.permutation");
            std::shuffle(counts.begin(), counts.end(), rng);
            break;
        }
    }

    const auto by_class = dataset.per_class_indices();
    std::string deficient;
    for (int c = 0; c < used; ++c) {
        const std::size_t need = static_cast<std::size_t>(counts[static_cast<std::size_t>(c)] + spec.test_per_class);
        const std::size_t have = by_class[static_cast<std::size_t>(c)].size();
        if (have < need) {
            if (!deficient.empty()) deficient += ", ";
            deficient += "class " + std::to_string(c) + " (has " + std::to_string(have) + ", needs " + std::to_string(need) + ")";
        }
    }
    if (!deficient.empty()) throw ValidationError("insufficient samples: " + deficient);

    Scenario scenario;
    scenario.spec = spec;
    int next = 0;
    for (int t = 0; t <= spec.num_tasks; ++t) {
        TaskDataset task;
        task.task_id = t;
        const int n_classes = t == 0 ? spec.base_classes : spec.new_classes_per_task;
        for (int k = 0; k < n_classes; ++k, ++next) {
            std::vector<std::size_t> pool = by_class[static_cast<std::size_t>(next)];
            Rng rng = make_rng(spec.seed, "scenario.subsample", static_cast<std::uint64_t>(next));
            std::shuffle(pool.begin(), pool.end(), rng);
            const auto n_test = static_cast<std::ptrdiff_t>(spec.test_per_class);
            const auto n_train = static_cast<std::ptrdiff_t>(counts[static_cast<std::size_t>(next)]);
            task.class_ids.push_back(next);
            task.test[next] = {pool.begin(), pool.begin() + n_test};
            task.train[next] = {pool.begin() + n_test, pool.begin() + n_test + n_train};
            scenario.train_counts[next] = static_cast<int>(n_train);
        }
        scenario.tasks.push_back(std::move(task));
    }
    return scenario;
}

std::vector<std::size_t> herding_select(const Matrix& features, std::size_t m, bool normalize) {
    const std::size_t n = features.rows();
    const std::size_t d = features.cols();
    const std::size_t picks = std::min(m, n);
    if (picks == 0) return {};

    Matrix phi = features;
    if (normalize) {
        for (std::size_t i = 0; i < n; ++i) {
            auto r = phi.row(i);
            double s = 0.0;
            for (double v : r) s += v * v;
            const double norm = std::sqrt(s);
            if (norm > 0.0)
                for (double& v : r) v /= norm;
        }
    }

    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mu[c] += phi(i, c);
    for (double& v : mu) v /= static_cast<double>(n);

    std::vector<double> running(d, 0.0);
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> order;
    order.reserve(picks);
    for (std::size_t k = 1; k <= picks; ++k) {
        const double inv_k = 1.0 / static_cast<double>(k);
        std::size_t best = n;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (taken[j]) continue;
            double dist = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = mu[c] - (running[c] + phi(j, c)) * inv_k;
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = j;
            }
        }
        taken[best] = true;
        order.push_back(best);
        for (std::size_t c = 0; c < d; ++c) running[c] += phi(best, c);
    }
    return order;
}

std::size_t ExemplarBank::total_size() const {
    std::size_t n = 0;
    for (const auto& [c, idx] : per_class) n += idx.size();
    return n;
}

std::vector<std::size_t> ExemplarBank::all_indices() const {
    std::vector<std::size_t> out;
    for (const auto& [c, idx] : per_class) out.insert(out.end(), idx.begin(), idx.end());
    return out;
}

ExemplarBank update_exemplars(ExemplarBank bank, const TaskDataset& task, const MlpFeatureExtractor& extractor,
                              const Dataset& dataset, std::size_t m, bool normalize) {
    if (dataset.input_dim() != extractor.input_dim())
        throw ShapeError(shape_message("exemplar features: extractor input dimension", extractor.input_dim(), dataset.input_dim()));
    bank.capacity = m;
    for (const int c : task.class_ids) {
        if (bank.contains_class(c)) continue;
        const auto it = task.train.find(c);
        const std::vector<std::size_t> empty;
        const auto& members = it == task.train.end() ? empty : it->second;
        std::vector<std::size_t> chosen;
        if (m > 0 && !members.empty()) {
            const Matrix feats = forward(extractor, dataset.samples.gather_rows(members));
            for (std::size_t local : herding_select(feats, m, normalize)) chosen.push_back(members[local]);
        }
        bank.per_class[c] = std::move(chosen);
    }
    return bank;
}

Dataset make_synthetic_clusters(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ValidationError("synthetic clusters need K >= 2");
    if (spec.dim < 2) throw ValidationError("synthetic clusters need d >= 2");
    if (spec.n_per_class < 1) throw ValidationError("synthetic clusters need n_per_class >= 1");
    if (spec.within_std < 0.0 || !(spec.separation >= 0.0)) throw ValidationError("synthetic spread parameters must be >= 0");

    const auto k = static_cast<std::size_t>(spec.num_classes);
    const auto d = static_cast<std::size_t>(spec.dim);
    const double min_dist = spec.separation * spec.within_std;
    const double spacing = min_dist > 0.0 ? min_dist : std::max(spec.separation, 1.0);
    // Cube large enough that rejection sampling places K points comfortably.
    const double half_side = 0.5 * spacing * std::pow(4.0 * static_cast<double>(k), 1.0 / static_cast<double>(d));

    Rng mean_rng = make_rng(spec.seed, "synthetic.means");
    std::uniform_real_distribution<double> u(-half_side, half_side);
    Matrix means(k, d);
    constexpr int kRetries = 10000;
    for (std::size_t c = 0; c < k; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
            for (std::size_t i = 0; i < d; ++i) means(c, i) = u(mean_rng);
            placed = true;
            for (std::size_t o = 0; o < c && placed; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += (means(c, i) - means(o, i)) * (means(c, i) - means(o, i));
                if (std::sqrt(s) < min_dist) placed = false;
            }
        }
        if (!placed)
            throw ValidationError("could not place class " + std::to_string(c) + " mean with the requested separation");
    }

    Dataset ds;
    ds.num_classes = spec.num_classes;
    const auto n = static_cast<std::size_t>(spec.n_per_class);
    ds.samples = Matrix(k * n, d);
    ds.labels.resize(k * n);
    Rng sample_rng = make_rng(spec.seed, "synthetic.samples");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t r = c * n + s;
            ds.labels[r] = static_cast<int>(c);
            for (std::size_t i = 0; i < d; ++i) {
                const double z = normal(sample_rng);
                ds.samples(r, i) = means(c, i) + spec.within_std * z;
            }
        }
    }
    return ds;
}

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, delim)) out.push_back(field);
    if (!line.empty() && line.back() == delim) out.emplace_back();
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_int(const std::string& s, int& out) {
    const auto t = trim(s);
    const auto* end = t.data() + t.size();
    const auto res = std::from_chars(t.data(), end, out);
    return res.ec == std::errc{} && res.ptr == end && !t.empty();
}

bool parse_double(const std::string& s, double& out) {
    const auto t = trim(s);
    if (t.empty()) return false;
    try {
        std::size_t pos = 0;
        out = std::stod(t, &pos);
        return pos == t.size();
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    std::vector<int> labels;
    std::vector<double> values;
    std::size_t width = 0;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(line, options.delimiter);
        int label = 0;
        if (first) {
            first = false;
            const bool header = options.header.value_or(!parse_int(fields.front(), label));
            if (header) continue;
        }
        if (fields.size() < 2) throw ValidationError(path + ":" + std::to_string(line_no) + ": expected label and features");
        if (!parse_int(fields.front(), label))
            throw ValidationError(path + ":" + std::to_string(line_no) + ": label is not an integer");
        if (width == 0) width = fields.size() - 1;
        if (fields.size() - 1 != width)
            throw ShapeError(path + ":" + std::to_string(line_no) + ": " + shape_message("feature count", width, fields.size() - 1));
        labels.push_back(label);
        for (std::size_t f = 1; f < fields.size(); ++f) {
            double v = 0.0;
            if (!parse_double(fields[f], v))
                throw ValidationError(path + ":" + std::to_string(line_no) + ": field " + std::to_string(f) + " is not a number");
            values.push_back(v);
        }
    }
    if (labels.empty()) throw ValidationError("dataset '" + path + "' has no rows");
    Dataset ds;
    ds.samples = Matrix(labels.size(), width);
    ds.samples.values() = std::move(values);
    ds.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    ds.labels = std::move(labels);
    ds.validate();
    return ds;
}

}  // namespace gvalign
