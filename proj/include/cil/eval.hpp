#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/corpus.hpp"
#include "cil/error.hpp"
#include "cil/features.hpp"
#include "cil/model.hpp"

namespace cil {

// acc[t] is the accuracy (percent) of the model after training session t,
// measured on the cumulative test set; per_origin[t][s] breaks that down by
// the session each test document came from.
struct AccuracyMatrix {
    std::vector<double> acc;
    std::vector<std::vector<double>> per_origin;
};

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

struct EvalReport {
    std::string strategy;
    std::uint64_t seed = 0;
    std::string config_hash;
    AccuracyMatrix matrix;
    double pd = 0.0;
    double avg_a = 0.0;
    double avg_a_incremental = 0.0;  // mean excluding session 0
    ConfusionMatrix confusion;       // at the final evaluated session
};

struct SessionEval {
    double accuracy = 0.0;                 // percent over cumulative_test(t)
    std::vector<double> per_origin;        // percent per originating session
    ConfusionMatrix confusion;             // true class x predicted class
    std::int64_t total = 0;
    std::int64_t correct = 0;
};

// Accuracy over cumulative_test(t), prediction by argmax over all heads.
// Read-only on the model.
inline SessionEval evaluate(const ModelState& model, const FeaturizerConfig& fcfg, const CILData& cil,
                            std::size_t t) {
    if (t >= cil.sessions.size()) throw DataError("evaluate: session index out of range");
    const int n_classes = model.total_classes();
    SessionEval out;
    out.confusion.assign(static_cast<std::size_t>(n_classes),
                         std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));
    out.per_origin.assign(t + 1, 0.0);

    for (std::size_t s = 0; s <= t; ++s) {
        std::int64_t origin_total = 0;
        std::int64_t origin_correct = 0;
        for (const auto& author : cil.sessions[s].test) {
            if (author.iid >= n_classes)
                throw DataError("evaluate: test iid " + std::to_string(author.iid) +
                                " outside the model's class range");
            for (const auto& text : author.texts) {
                const int pred = predict(model, featurize(text, fcfg));
                ++origin_total;
                if (pred == author.iid) ++origin_correct;
                ++out.confusion[static_cast<std::size_t>(author.iid)][static_cast<std::size_t>(pred)];
            }
        }
        out.total += origin_total;
        out.correct += origin_correct;
        out.per_origin[s] =
            origin_total == 0 ? 0.0
                              : 100.0 * static_cast<double>(origin_correct) / static_cast<double>(origin_total);
    }
    out.accuracy = out.total == 0 ? 0.0 : 100.0 * static_cast<double>(out.correct) / static_cast<double>(out.total);
    return out;
}

// acc[0] - acc[last]; needs at least two sessions.
inline double performance_drop(const AccuracyMatrix& matrix) {
    if (matrix.acc.size() < 2)
        throw DataError("performance_drop: undefined for fewer than two sessions");
    return matrix.acc.front() - matrix.acc.back();
}

// Unweighted mean of acc[0..last].
inline double average_accuracy(const AccuracyMatrix& matrix) {
    if (matrix.acc.empty()) throw DataError("average_accuracy: empty matrix");
    double sum = 0.0;
    for (double a : matrix.acc) sum += a;
    return sum / static_cast<double>(matrix.acc.size());
}

// Mean excluding the initial session; reported alongside avg_a since the
// convention differs between papers.
inline double average_accuracy_incremental(const AccuracyMatrix& matrix) {
    if (matrix.acc.size() < 2) throw DataError("average_accuracy_incremental: needs >= 2 sessions");
    double sum = 0.0;
    for (std::size_t i = 1; i < matrix.acc.size(); ++i) sum += matrix.acc[i];
    return sum / static_cast<double>(matrix.acc.size() - 1);
}

inline EvalReport finalize_report(const std::string& strategy, std::uint64_t seed,
                                  const std::string& config_hash, const AccuracyMatrix& matrix,
                                  ConfusionMatrix confusion) {
    EvalReport report;
    report.strategy = strategy;
    report.seed = seed;
    report.config_hash = config_hash;
    report.matrix = matrix;
    report.pd = matrix.acc.size() >= 2 ? performance_drop(matrix) : 0.0;
    report.avg_a = average_accuracy(matrix);
    report.avg_a_incremental = matrix.acc.size() >= 2 ? average_accuracy_incremental(matrix) : matrix.acc[0];
    report.confusion = std::move(confusion);
    return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json sessions = nlohmann::json::array();
    for (std::size_t t = 0; t < report.matrix.acc.size(); ++t) {
        sessions.push_back({{"t", t},
                            {"accuracy", report.matrix.acc[t]},
                            {"per_origin", report.matrix.per_origin[t]}});
    }
    return {{"strategy", report.strategy},
            {"seed", report.seed},
            {"config_hash", report.config_hash},
            {"sessions", std::move(sessions)},
            {"pd", report.pd},
            {"avg_a", report.avg_a},
            {"avg_a_incremental", report.avg_a_incremental}};
}

inline EvalReport report_from_json(const nlohmann::json& doc) {
    EvalReport report;
    report.strategy = doc.at("strategy").get<std::string>();
    report.seed = doc.at("seed").get<std::uint64_t>();
    report.config_hash = doc.at("config_hash").get<std::string>();
    for (const auto& s : doc.at("sessions")) {
        report.matrix.acc.push_back(s.at("accuracy").get<double>());
        report.matrix.per_origin.push_back(s.at("per_origin").get<std::vector<double>>());
    }
    report.pd = doc.at("pd").get<double>();
    report.avg_a = doc.at("avg_a").get<double>();
    report.avg_a_incremental = doc.at("avg_a_incremental").get<double>();
    return report;
}

enum class ReportFormat { json, csv };

namespace detail {

inline std::string format_value(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

}  // namespace detail

// JSON carries the full nested report; CSV emits one row per (session, metric)
// plus the scalar summary metrics, values rounded to two decimals.
inline void export_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report: " + path.string());
    if (format == ReportFormat::json) {
        out << report_to_json(report).dump(2) << "\n";
    } else {
        out << "strategy,seed,session,metric,value\n";
        for (std::size_t t = 0; t < report.matrix.acc.size(); ++t) {
            out << report.strategy << "," << report.seed << "," << t << ",accuracy,"
                << detail::format_value(report.matrix.acc[t]) << "\n";
        }
        if (report.matrix.acc.size() >= 2) {
            out << report.strategy << "," << report.seed << ",,pd," << detail::format_value(report.pd)
                << "\n";
        }
        if (!report.matrix.acc.empty()) {
            out << report.strategy << "," << report.seed << ",,avg_a,"
                << detail::format_value(report.avg_a) << "\n";
            out << report.strategy << "," << report.seed << ",,avg_a_incremental,"
                << detail::format_value(report.avg_a_incremental) << "\n";
        }
    }
    if (!out) throw DataError("write failure on report: " + path.string());
}

// Square grid of counts, true class per row.
inline void export_confusion_csv(const ConfusionMatrix& confusion, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write confusion matrix: " + path.string());
    for (const auto& row : confusion) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << "\n";
    }
    if (!out) throw DataError("write failure on confusion matrix: " + path.string());
}

}  // namespace cil
