#include "kpe_forge/bench.hpp"
#include "kpe_forge/error.hpp"

#include <doctest.h>

#include <chrono>
#include <thread>

using namespace kpeforge;

namespace {

ModelConfig paperScale() {
    ModelConfig c;
    c.d = 512;
    c.heads = 8;
    c.depth = 12;
    c.textLength = 256;
    c.gridHeight = c.gridWidth = 16;
    c.scheme = JointScheme::Body25;
    c.maxPeople = 4;
    return c;
}

void spin(double seconds) {
    const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (std::chrono::steady_clock::now() < end) {
    }
}

} // namespace

TEST_CASE("token accounting at full and desk scale") {
    const TokenAccounting full = tokenAccounting(paperScale());
    REQUIRE(full.rows.size() == 3);
    CHECK(full.rows[0].condTokens == 0);
    CHECK(full.rows[1].condTokens == 256);
    CHECK(full.rows[2].condTokens == 25);
    CHECK(full.memoryRatio == doctest::Approx(10.24));
    CHECK(full.rows[2].seqLen == 537);
    CHECK(full.rows[2].condMemoryBytes == 25LL * 2 * 12 * 512 * 4);

    const TokenAccounting desk = tokenAccounting(ModelConfig{});
    CHECK(desk.rows[1].condTokens == 64);
    CHECK(desk.rows[2].condTokens == 13);
    CHECK(desk.memoryRatio == doctest::Approx(64.0 / 13.0));
    for (const auto& row : desk.rows) CHECK(row.seqLen == 16 + row.condTokens + 64);
}

TEST_CASE("conditioning length under resolution scaling") {
    for (int grid : {4, 8, 16, 32}) {
        CHECK(conditioningTokens(ConditioningMode::Kpe, JointScheme::Skel13, grid, grid) == 13);
        CHECK(conditioningTokens(ConditioningMode::SkeletonTokens, JointScheme::Skel13, grid, grid) == grid * grid);
        CHECK(conditioningTokens(ConditioningMode::SkeletonTokens, JointScheme::Skel13, 2 * grid, 2 * grid) ==
              4 * conditioningTokens(ConditioningMode::SkeletonTokens, JointScheme::Skel13, grid, grid));
    }
}

TEST_CASE("attention cost formula") {
    CHECK(attentionCost(0, 64, 2, 4).total() == 0.0);
    const auto a = attentionCost(100, 64, 2, 4, 0);
    const auto b = attentionCost(200, 64, 2, 4, 0);
    CHECK(b.attention == 4.0 * a.attention);
    CHECK(a.mlp == 0.0);
    CHECK(a.attention == 2.0 * 100 * 100 * 64 * 2);
    CHECK(a.projections == 4.0 * 100 * 64 * 64 * 2);
    CHECK(attentionCost(100, 64, 2, 4).mlp == 2.0 * 4 * 100 * 64 * 64 * 2);
    CHECK(attentionCost(100, 64, 2, 1).total() == attentionCost(100, 64, 2, 8).total());
    const double ratio = attentionCost(768, 512, 12, 8).attention / attentionCost(537, 512, 12, 8).attention;
    CHECK(ratio == doctest::Approx(2.045).epsilon(0.001));
}

TEST_CASE("measured inference reports medians and relative speed") {
    ModelConfig base;
    std::vector<BenchVariant> variants;
    const double cost[3] = {0.002, 0.004, 0.002};
    int i = 0;
    for (auto mode : {ConditioningMode::TextOnly, ConditioningMode::SkeletonTokens, ConditioningMode::Kpe}) {
        ModelConfig c = base;
        c.mode = mode;
        const double seconds = cost[i++];
        variants.push_back({mode, [seconds](std::size_t) { spin(seconds); }, c});
    }
    MeasureOptions mo;
    mo.runs = 3;
    mo.inputs = 2;
    const auto reports = measureInference(variants, mo);
    REQUIRE(reports.size() == 3);
    CHECK(reports[1].speedupVsSkeleton == doctest::Approx(1.0));
    CHECK(reports[2].speedupVsSkeleton > 1.5);
    CHECK(reports[2].wallClock == doctest::Approx(0.002).epsilon(0.5));
    CHECK(reports[2].condTokens == 13);
    CHECK(benchTable(reports).find("Relative speed") != std::string::npos);

    std::vector<BenchVariant> mismatched = variants;
    mismatched[0].config.d = 32;
    mismatched[0].config.heads = 4;
    CHECK_THROWS_AS(measureInference(mismatched, mo), ConfigError);

    std::vector<std::string> warnings;
    std::vector<BenchVariant> fast{{ConditioningMode::Kpe, [](std::size_t) {}, base}};
    MeasureOptions quick;
    quick.runs = 2;
    quick.inputs = 1;
    quick.maxRuns = 8;
    const auto r = measureInference(fast, quick, [&](const std::string& w) { warnings.push_back(w); });
    CHECK_FALSE(warnings.empty());
    CHECK(r[0].runs > 2);
}

TEST_CASE("repeated measurement of one variant is stable") {
    ModelConfig c;
    std::vector<BenchVariant> v{{ConditioningMode::Kpe, [](std::size_t) { spin(0.01); }, c}};
    MeasureOptions mo;
    mo.runs = 9;
    mo.inputs = 1;
    const double a = measureInference(v, mo)[0].wallClock;
    const double b = measureInference(v, mo)[0].wallClock;
    CHECK(std::abs(a - b) / a < 0.1);
}
