#include "care/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "care/common.hpp"

namespace care::eval {

std::optional<Metrics> compute_metrics(const ConfusionCounts& counts) {
    const long valid_pos = counts.tp + counts.fn;
    const long valid_neg = counts.tn + counts.fp;
    if (valid_pos == 0 || valid_neg == 0) return std::nullopt;

    Metrics m;
    m.tpr = static_cast<double>(counts.tp) / static_cast<double>(valid_pos);
    m.tnr = static_cast<double>(counts.tn) / static_cast<double>(valid_neg);
    m.ba = (m.tpr + m.tnr) / 2.0;
    m.gmean = std::sqrt(m.tpr * m.tnr);

    const double tp = static_cast<double>(counts.tp);
    const double tn = static_cast<double>(counts.tn);
    const double fp = static_cast<double>(counts.fp);
    const double fn = static_cast<double>(counts.fn);
    const double f1 = tp + fp;
    const double f2 = tp + fn;
    const double f3 = tn + fp;
    const double f4 = tn + fn;
    if (f1 == 0 || f2 == 0 || f3 == 0 || f4 == 0) {
        m.mcc = 0.0;
    } else {
        m.mcc = (tp * tn - fp * fn) / std::sqrt(f1 * f2 * f3 * f4);
    }
    return m;
}

TraceFile read_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open trace file: " + path.string());
    TraceFile file;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        if (j.contains("file_kind")) {
            if (j.at("file_kind") == "traces" && j.contains("config_digest")) {
                file.config_digest = j.at("config_digest").get<std::string>();
            }
            for (const auto& b : j.value("backends", nlohmann::json::array())) {
                file.backends.push_back(b.get<std::string>());
            }
            continue;
        }
        TraceRecord record;
        record.stay_id = j.at("stay_id").get<std::string>();
        record.t_eval = j.at("t_eval").get<int>();
        record.workflow = j.value("workflow", std::string());
        record.config_digest = j.value("config_digest", std::string());
        const std::string prediction = j.at("prediction").get<std::string>();
        if (prediction == "POSITIVE") {
            record.prediction = engine::Prediction::Positive;
        } else if (prediction == "NEGATIVE") {
            record.prediction = engine::Prediction::Negative;
        } else {
            record.prediction = engine::Prediction::Invalid;
        }
        const auto& usage = j.at("usage");
        record.prompt_tokens = usage.at("prompt_tokens").get<long>();
        record.completion_tokens = usage.at("completion_tokens").get<long>();
        record.estimated = usage.value("estimated", false);
        file.records.push_back(std::move(record));
    }
    return file;
}

RunReport aggregate_run(const std::vector<TraceRecord>& traces,
                        const std::vector<Sample>& bench) {
    if (traces.empty()) throw ValidationError("no traces to aggregate");

    std::map<std::string, Label> labels;
    for (const auto& sample : bench) labels.emplace(sample.id(), sample.label);

    std::set<std::string> unmatched_bench;
    for (const auto& sample : bench) unmatched_bench.insert(sample.id());

    RunReport report;
    long total_tokens = 0;
    std::vector<std::string> orphans;
    for (const auto& trace : traces) {
        const auto it = labels.find(trace.id());
        if (it == labels.end()) {
            orphans.push_back(trace.id());
            continue;
        }
        unmatched_bench.erase(trace.id());
        if (report.workflow.empty()) report.workflow = trace.workflow;
        if (report.config_digest.empty()) report.config_digest = trace.config_digest;
        ++report.counts.n_total;
        total_tokens += trace.prompt_tokens + trace.completion_tokens;
        report.tokens_estimated = report.tokens_estimated || trace.estimated;
        if (trace.prediction == engine::Prediction::Invalid) {
            ++report.counts.invalid_count;
            continue;
        }
        const bool predicted_positive = trace.prediction == engine::Prediction::Positive;
        const bool actual_positive = it->second == Label::Positive;
        if (predicted_positive && actual_positive) ++report.counts.tp;
        if (predicted_positive && !actual_positive) ++report.counts.fp;
        if (!predicted_positive && !actual_positive) ++report.counts.tn;
        if (!predicted_positive && actual_positive) ++report.counts.fn;
    }

    if (!orphans.empty() || !unmatched_bench.empty()) {
        std::ostringstream os;
        os << "trace/bench mismatch.";
        if (!orphans.empty()) {
            os << " Orphan traces:";
            for (const auto& id : orphans) os << ' ' << id;
            os << '.';
        }
        if (!unmatched_bench.empty()) {
            os << " Bench samples without traces:";
            for (const auto& id : unmatched_bench) os << ' ' << id;
            os << '.';
        }
        throw ValidationError(os.str());
    }

    report.valid_rate = static_cast<double>(report.counts.n_total -
                                            report.counts.invalid_count) /
                        static_cast<double>(report.counts.n_total);
    report.tokens_per_sample =
        static_cast<double>(total_tokens) / static_cast<double>(report.counts.n_total);
    report.metrics = compute_metrics(report.counts);
    report.degenerate_collapse =
        report.metrics && (report.metrics->tpr == 0.0 || report.metrics->tnr == 0.0);
    return report;
}

nlohmann::json RunReport::to_json() const {
    nlohmann::json metrics_json;
    if (metrics) {
        metrics_json = {{"tpr", metrics->tpr},
                        {"tnr", metrics->tnr},
                        {"ba", metrics->ba},
                        {"gmean", metrics->gmean},
                        {"mcc", metrics->mcc}};
    } else {
        metrics_json = nullptr; // UNDEFINED: a class had no valid samples
    }
    return nlohmann::json{
        {"workflow", workflow},
        {"backends", backends},
        {"valid_rate", valid_rate},
        {"counts",
         {{"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"invalid", counts.invalid_count},
          {"n_total", counts.n_total}}},
        {"metrics", metrics_json},
        {"tokens_per_sample", tokens_per_sample},
        {"tokens_estimated", tokens_estimated},
        {"degenerate_collapse", degenerate_collapse},
        {"config_digest", config_digest},
    };
}

namespace {

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
}

} // namespace

std::string render_table(const std::vector<RunReport>& reports) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Workflow", "Backends", "Valid", "TPR", "TNR", "BA", "G-mean", "MCC",
                    "Tokens/Sample"});
    for (const auto& report : reports) {
        std::string backends;
        for (std::size_t i = 0; i < report.backends.size(); ++i) {
            if (i > 0) backends += "+";
            backends += report.backends[i];
        }
        std::vector<std::string> row = {report.workflow, backends, fmt4(report.valid_rate)};
        if (report.metrics) {
            row.push_back(fmt4(report.metrics->tpr));
            row.push_back(fmt4(report.metrics->tnr));
            row.push_back(fmt4(report.metrics->ba));
            row.push_back(fmt4(report.metrics->gmean));
            row.push_back(fmt4(report.metrics->mcc));
        } else {
            for (int i = 0; i < 5; ++i) row.push_back("UNDEF");
        }
        row.push_back(fmt2(report.tokens_per_sample));
        if (report.degenerate_collapse) row.back() += "  [one-class collapse]";
        rows.push_back(std::move(row));
    }

    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::ostringstream os;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << row[i];
            if (i + 1 < row.size()) {
                os << std::string(widths[i] - row[i].size() + 2, ' ');
            }
        }
        os << "\n";
    }
    return os.str();
}

void write_report(const std::filesystem::path& path, const RunReport& report) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open report output: " + path.string());
    out << report.to_json().dump(2) << "\n";
}

RunReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report file: " + path.string());
    nlohmann::json j;
    in >> j;
    RunReport report;
    report.workflow = j.value("workflow", std::string());
    for (const auto& b : j.value("backends", nlohmann::json::array())) {
        report.backends.push_back(b.get<std::string>());
    }
    report.valid_rate = j.at("valid_rate").get<double>();
    const auto& counts = j.at("counts");
    report.counts.tp = counts.at("tp").get<long>();
    report.counts.fp = counts.at("fp").get<long>();
    report.counts.tn = counts.at("tn").get<long>();
    report.counts.fn = counts.at("fn").get<long>();
    report.counts.invalid_count = counts.at("invalid").get<long>();
    report.counts.n_total = counts.at("n_total").get<long>();
    if (!j.at("metrics").is_null()) {
        Metrics m;
        m.tpr = j.at("metrics").at("tpr").get<double>();
        m.tnr = j.at("metrics").at("tnr").get<double>();
        m.ba = j.at("metrics").at("ba").get<double>();
        m.gmean = j.at("metrics").at("gmean").get<double>();
        m.mcc = j.at("metrics").at("mcc").get<double>();
        report.metrics = m;
    }
    report.tokens_per_sample = j.at("tokens_per_sample").get<double>();
    report.tokens_estimated = j.value("tokens_estimated", false);
    report.degenerate_collapse = j.value("degenerate_collapse", false);
    report.config_digest = j.value("config_digest", std::string());
    return report;
}

} // namespace care::eval
