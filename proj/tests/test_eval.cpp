#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "care/common.hpp"
#include "care/eval.hpp"
#include "oracles.hpp"

using namespace care;
using eval::ConfusionCounts;
using eval::TraceRecord;

namespace {

Sample bench_sample(const std::string& stay, int t, Label label) {
    Sample s;
    s.stay_id = stay;
    s.t_eval = t;
    s.label = label;
    return s;
}

TraceRecord trace_of(const std::string& stay, int t, engine::Prediction prediction,
                     long prompt = 100, long completion = 20) {
    TraceRecord r;
    r.stay_id = stay;
    r.t_eval = t;
    r.workflow = "care";
    r.config_digest = "d1";
    r.prediction = prediction;
    r.prompt_tokens = prompt;
    r.completion_tokens = completion;
    return r;
}

} // namespace

TEST_CASE("reference row: counts reconstructed from the strongest staged run") {
    // 500/500 classes, all valid; rates 0.5220/0.5700.
    const ConfusionCounts counts{261, 215, 285, 239, 0, 1000};
    const auto m = eval::compute_metrics(counts);
    REQUIRE(m.has_value());
    CHECK(m->tpr == doctest::Approx(0.5220).epsilon(1e-9));
    CHECK(m->tnr == doctest::Approx(0.5700).epsilon(1e-9));
    CHECK(std::abs(m->ba - 0.5460) <= 0.0005);
    CHECK(std::abs(m->gmean - 0.5455) <= 0.0005);
    CHECK(std::abs(m->mcc - 0.0921) <= 0.0005);
}

TEST_CASE("perfect classifier scores 1.0 on every metric") {
    const ConfusionCounts counts{500, 0, 500, 0, 0, 1000};
    const auto m = eval::compute_metrics(counts);
    REQUIRE(m.has_value());
    CHECK(m->tpr == 1.0);
    CHECK(m->tnr == 1.0);
    CHECK(m->ba == 1.0);
    CHECK(m->gmean == 1.0);
    CHECK(m->mcc == 1.0);
}

TEST_CASE("metrics agree with the direct-formula oracle on 1000 random tables") {
    Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        const long tp = rng.uniform_int(0, 400);
        const long fn = rng.uniform_int(0, 400);
        const long tn = rng.uniform_int(0, 400);
        const long fp = rng.uniform_int(0, 400);
        if (tp + fn == 0 || tn + fp == 0) continue;
        const ConfusionCounts counts{tp, fp, tn, fn, 0, tp + fp + tn + fn};
        const auto m = eval::compute_metrics(counts);
        REQUIRE(m.has_value());
        const auto o = oracles::metric_formulas(tp, fp, tn, fn);
        CHECK(std::abs(m->tpr - o.tpr) < 1e-12);
        CHECK(std::abs(m->tnr - o.tnr) < 1e-12);
        CHECK(std::abs(m->ba - o.ba) < 1e-12);
        CHECK(std::abs(m->gmean - o.gmean) < 1e-12);
        CHECK(std::abs(m->mcc - o.mcc) < 1e-12);

        // AM-GM ordering and MCC range.
        CHECK(m->gmean <= m->ba + 1e-12);
        CHECK(m->ba <= 1.0);
        CHECK(m->gmean >= 0.0);
        CHECK(m->mcc >= -1.0 - 1e-12);
        CHECK(m->mcc <= 1.0 + 1e-12);
    }
}

TEST_CASE("constant classifiers collapse to MCC 0 and G-mean 0") {
    const ConfusionCounts all_negative{0, 0, 500, 500, 0, 1000};
    const auto m = eval::compute_metrics(all_negative);
    REQUIRE(m.has_value());
    CHECK(m->mcc == 0.0);
    CHECK(m->gmean == 0.0);
    CHECK(m->tpr == 0.0);
    CHECK(m->tnr == 1.0);

    const ConfusionCounts all_positive{500, 500, 0, 0, 0, 1000};
    const auto m2 = eval::compute_metrics(all_positive);
    REQUIRE(m2.has_value());
    CHECK(m2->mcc == 0.0);
    CHECK(m2->gmean == 0.0);
}

TEST_CASE("metrics are UNDEFINED when a class has no valid samples") {
    CHECK_FALSE(eval::compute_metrics(ConfusionCounts{0, 10, 10, 0, 0, 20}).has_value());
    CHECK_FALSE(eval::compute_metrics(ConfusionCounts{10, 0, 0, 10, 0, 20}).has_value());
}

TEST_CASE("aggregate_run: planted fixture against hand-computed values") {
    std::vector<Sample> bench;
    std::vector<TraceRecord> traces;
    // 6 positives: 4 predicted positive (TP), 1 negative (FN), 1 invalid.
    for (int i = 0; i < 6; ++i) {
        bench.push_back(bench_sample("p" + std::to_string(i), 1, Label::Positive));
    }
    for (int i = 0; i < 4; ++i) {
        traces.push_back(trace_of("p" + std::to_string(i), 1, engine::Prediction::Positive));
    }
    traces.push_back(trace_of("p4", 1, engine::Prediction::Negative));
    traces.push_back(trace_of("p5", 1, engine::Prediction::Invalid, 300, 50));
    // 4 negatives: 3 TN, 1 FP.
    for (int i = 0; i < 4; ++i) {
        bench.push_back(bench_sample("n" + std::to_string(i), 1, Label::Negative));
    }
    for (int i = 0; i < 3; ++i) {
        traces.push_back(trace_of("n" + std::to_string(i), 1, engine::Prediction::Negative));
    }
    traces.push_back(trace_of("n3", 1, engine::Prediction::Positive));

    const eval::RunReport report = eval::aggregate_run(traces, bench);
    CHECK(report.counts.tp == 4);
    CHECK(report.counts.fn == 1);
    CHECK(report.counts.tn == 3);
    CHECK(report.counts.fp == 1);
    CHECK(report.counts.invalid_count == 1);
    CHECK(report.counts.n_total == 10);
    CHECK(report.valid_rate == doctest::Approx(0.9));
    // Tokens include the invalid sample: (9*120 + 350) / 10.
    CHECK(report.tokens_per_sample == doctest::Approx((9 * 120 + 350) / 10.0));
    REQUIRE(report.metrics.has_value());
    CHECK(report.metrics->tpr == doctest::Approx(0.8));
    CHECK(report.metrics->tnr == doctest::Approx(0.75));

    // Permutation invariance.
    std::mt19937_64 shuffler(5);
    std::shuffle(traces.begin(), traces.end(), shuffler);
    const eval::RunReport again = eval::aggregate_run(traces, bench);
    CHECK(again.to_json().dump() == report.to_json().dump());
}

TEST_CASE("valid-rate formatting precedent: 2 invalid out of 1000") {
    std::vector<Sample> bench;
    std::vector<TraceRecord> traces;
    for (int i = 0; i < 1000; ++i) {
        const Label label = i < 500 ? Label::Positive : Label::Negative;
        bench.push_back(bench_sample("s" + std::to_string(i), 1, label));
        engine::Prediction prediction =
            i < 2 ? engine::Prediction::Invalid
                  : (label == Label::Positive ? engine::Prediction::Positive
                                              : engine::Prediction::Negative);
        traces.push_back(trace_of("s" + std::to_string(i), 1, prediction));
    }
    const eval::RunReport report = eval::aggregate_run(traces, bench);
    CHECK(report.valid_rate == doctest::Approx(0.9980));
}

TEST_CASE("aggregate_run hard-errors on orphans in both directions") {
    std::vector<Sample> bench = {bench_sample("a", 1, Label::Positive),
                                 bench_sample("b", 1, Label::Negative)};
    std::vector<TraceRecord> traces = {
        trace_of("a", 1, engine::Prediction::Positive),
        trace_of("zz", 9, engine::Prediction::Negative),
    };
    CHECK_THROWS_WITH_AS(eval::aggregate_run(traces, bench), doctest::Contains("zz#9"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(eval::aggregate_run(traces, bench), doctest::Contains("b#1"),
                         ValidationError);
    CHECK_THROWS_AS(eval::aggregate_run({}, bench), ValidationError);
}

TEST_CASE("degenerate collapse is surfaced in the report") {
    std::vector<Sample> bench;
    std::vector<TraceRecord> traces;
    for (int i = 0; i < 10; ++i) {
        const Label label = i < 5 ? Label::Positive : Label::Negative;
        bench.push_back(bench_sample("s" + std::to_string(i), 1, label));
        traces.push_back(trace_of("s" + std::to_string(i), 1, engine::Prediction::Negative));
    }
    const eval::RunReport report = eval::aggregate_run(traces, bench);
    CHECK(report.degenerate_collapse);
    REQUIRE(report.metrics.has_value());
    CHECK(report.metrics->mcc == 0.0);
    CHECK(report.metrics->gmean == 0.0);

    const std::string table = eval::render_table({report});
    CHECK(table.find("one-class collapse") != std::string::npos);
    CHECK(table.find("Workflow") != std::string::npos);
}

TEST_CASE("report JSON round-trips") {
    eval::RunReport report;
    report.workflow = "care";
    report.backends = {"mock:a.json", "mock:b.json"};
    report.valid_rate = 0.998;
    report.counts = {261, 215, 285, 239, 2, 1002};
    report.metrics = eval::Metrics{0.522, 0.57, 0.546, 0.5455, 0.0921};
    report.tokens_per_sample = 7771.52;
    report.config_digest = "abc123";

    const std::string path = "/tmp/care_test_report.json";
    eval::write_report(path, report);
    const eval::RunReport loaded = eval::read_report(path);
    CHECK(loaded.to_json().dump() == report.to_json().dump());
}
