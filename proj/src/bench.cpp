#include "kpe_forge/bench.hpp"

#include "kpe_forge/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

namespace kpeforge {

int conditioningTokens(ConditioningMode mode, JointScheme scheme, int gridHeight, int gridWidth) {
    switch (mode) {
    case ConditioningMode::TextOnly: return 0;
    case ConditioningMode::SkeletonTokens: return gridHeight * gridWidth;
    case ConditioningMode::Kpe: return jointCount(scheme);
    }
    return 0;
}

TokenAccounting tokenAccounting(const ModelConfig& config) {
    TokenAccounting acc;
    for (ConditioningMode m : {ConditioningMode::TextOnly, ConditioningMode::SkeletonTokens, ConditioningMode::Kpe}) {
        AccountingRow r;
        r.mode = m;
        r.condTokens = conditioningTokens(m, config.scheme, config.gridHeight, config.gridWidth);
        r.seqLen = config.textLength + r.condTokens + config.imageTokens();
        r.condMemoryBytes = static_cast<std::int64_t>(r.condTokens) * 2 * config.depth * config.d *
                            static_cast<std::int64_t>(sizeof(float));
        acc.rows.push_back(r);
    }
    acc.memoryRatio = static_cast<double>(acc.rows[1].condTokens) / static_cast<double>(acc.rows[2].condTokens);
    return acc;
}

AttentionCost attentionCost(std::int64_t seqLen, int d, int depth, int heads, int mlpRatio) {
    if (seqLen < 0 || d < 0 || depth < 0 || mlpRatio < 0) throw InvalidArgument("negative size in attention cost");
    if (heads < 1 || (d > 0 && d % heads != 0)) throw InvalidArgument("d must be divisible by heads");
    const double L = static_cast<double>(seqLen), D = d, N = depth;
    return {2.0 * L * L * D * N, 4.0 * L * D * D * N, 2.0 * mlpRatio * L * D * D * N};
}

std::vector<BenchReport> measureInference(const std::vector<BenchVariant>& variants, const MeasureOptions& options,
                                          const std::function<void(const std::string&)>& warn) {
    if (variants.empty()) throw InvalidArgument("no bench variants");
    if (options.inputs < 1 || options.runs < 1) throw ConfigError("bench needs at least one run and one input");
    const auto& base = variants.front().config;
    for (const auto& v : variants)
        if (v.config.d != base.d || v.config.depth != base.depth || v.config.heads != base.heads ||
            v.config.imageTokens() != base.imageTokens())
            throw ConfigError("bench variants must share d, depth, heads and image grid");

    using clock = std::chrono::steady_clock;
    auto timeOnce = [&](const BenchVariant& v) {
        const auto t0 = clock::now();
        for (std::size_t i = 0; i < options.inputs; ++i) v.generate(i);
        return std::chrono::duration<double>(clock::now() - t0).count() / static_cast<double>(options.inputs);
    };
    for (int w = 0; w < options.warmup; ++w)
        for (const auto& v : variants) timeOnce(v);

    int runs = options.runs;
    std::vector<std::vector<double>> samples(variants.size());
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    for (;;) {
        for (int r = static_cast<int>(samples[0].size()); r < runs; ++r)
            for (std::size_t k = 0; k < variants.size(); ++k) samples[k].push_back(timeOnce(variants[k]));
        double fastest = 1e300;
        for (const auto& s : samples) fastest = std::min(fastest, median(s));
        if (fastest >= options.minMedianSeconds || runs >= options.maxRuns) break;
        if (warn) warn("median below timer threshold; raising run count to " + std::to_string(runs * 2));
        runs *= 2;
    }

    std::vector<BenchReport> out;
    double skeletonTime = 0.0;
    for (std::size_t k = 0; k < variants.size(); ++k) {
        const ModelConfig& c = variants[k].config;
        BenchReport r;
        r.mode = variants[k].mode;
        r.condTokens = conditioningTokens(r.mode, c.scheme, c.gridHeight, c.gridWidth);
        r.seqLen = c.textLength + r.condTokens + c.imageTokens();
        r.condMemoryBytes = static_cast<std::int64_t>(r.condTokens) * 2 * c.depth * c.d * static_cast<std::int64_t>(sizeof(float));
        r.attnMacs = attentionCost(r.seqLen, c.d, c.depth, c.heads, c.mlpRatio).attention;
        r.wallClock = median(samples[k]);
        r.runs = runs;
        if (r.mode == ConditioningMode::SkeletonTokens) skeletonTime = r.wallClock;
        out.push_back(r);
    }
    for (auto& r : out) r.speedupVsSkeleton = skeletonTime > 0.0 ? skeletonTime / r.wallClock : 0.0;
    return out;
}

std::string benchReportJson(const std::vector<BenchReport>& reports, const TokenAccounting& accounting,
                            const std::string& configHash) {
    nlohmann::ordered_json j;
    j["config_hash"] = configHash;
    j["memory_ratio"] = accounting.memoryRatio;
    for (const auto& r : accounting.rows)
        j["accounting"].push_back({{"mode", modeName(r.mode)},
                                   {"cond_tokens", r.condTokens},
                                   {"seq_len", r.seqLen},
                                   {"cond_memory_bytes", r.condMemoryBytes}});
    for (const auto& r : reports)
        j["reports"].push_back({{"mode", modeName(r.mode)},
                                {"cond_tokens", r.condTokens},
                                {"seq_len", r.seqLen},
                                {"cond_memory_bytes", r.condMemoryBytes},
                                {"attn_flops_estimate", r.attnMacs},
                                {"wall_clock_per_image", r.wallClock},
                                {"speedup_vs_skeleton", r.speedupVsSkeleton},
                                {"runs", r.runs}});
    return j.dump(2);
}

std::string benchTable(const std::vector<BenchReport>& reports) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s", "");
    os << buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%12s", std::string(modeName(r.mode)).c_str());
        os << buf;
    }
    os << '\n';
    auto row = [&](const char* label, auto&& cell) {
        std::snprintf(buf, sizeof buf, "%-22s", label);
        os << buf;
        for (const auto& r : reports) os << cell(r);
        os << '\n';
    };
    auto fmt = [&](const char* f, double v) {
        std::snprintf(buf, sizeof buf, f, v);
        return std::string(buf);
    };
    row("Number of pose tokens", [&](const BenchReport& r) { return fmt("%12.0f", r.condTokens); });
    row("Sequence length", [&](const BenchReport& r) { return fmt("%12.0f", r.seqLen); });
    row("Seconds per image", [&](const BenchReport& r) { return fmt("%12.5f", r.wallClock); });
    row("Relative speed", [&](const BenchReport& r) { return fmt("%11.2fx", r.speedupVsSkeleton); });
    return os.str();
}

std::string accountingTable(const TokenAccounting& accounting, const std::string& title) {
    std::ostringstream os;
    char buf[160];
    os << title << '\n';
    std::snprintf(buf, sizeof buf, "%-12s %12s %10s %18s\n", "mode", "pose tokens", "seq len", "cond KV bytes");
    os << buf;
    for (const auto& r : accounting.rows) {
        std::snprintf(buf, sizeof buf, "%-12s %12d %10d %18lld\n", std::string(modeName(r.mode)).c_str(), r.condTokens,
                      r.seqLen, static_cast<long long>(r.condMemoryBytes));
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "memory ratio (skeleton / kpe): %.2f\n", accounting.memoryRatio);
    os << buf;
    return os.str();
}

} // namespace kpeforge
