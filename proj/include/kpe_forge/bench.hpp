#pragma once

#include "kpe_forge/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kpeforge {

// Conditioning length: 0 (text only), grid tokens (skeleton), joints (KPE).
int conditioningTokens(ConditioningMode mode, JointScheme scheme, int gridHeight, int gridWidth);

struct AccountingRow {
    ConditioningMode mode{ConditioningMode::Kpe};
    int condTokens{0};
    int seqLen{0};
    // Key/value cache held for the conditioning segment: condTokens * 2 * depth * d floats.
    std::int64_t condMemoryBytes{0};
};

struct TokenAccounting {
    std::vector<AccountingRow> rows;  // text_only, skeleton, kpe
    // Skeleton / KPE conditioning token counts.
    double memoryRatio{0.0};
};

TokenAccounting tokenAccounting(const ModelConfig& config);

/// Multiply-accumulate counts of one full forward pass over seqLen tokens:
///   attention   = 2 * L^2 * d * depth        (Q K^T and P V)
///   projections = 4 * L * d^2 * depth        (QKV and output)
///   mlp         = 2 * mlpRatio * L * d^2 * depth
/// The head count changes how the work is split, not its total.
struct AttentionCost {
    double attention{0.0};
    double projections{0.0};
    double mlp{0.0};
    double total() const noexcept { return attention + projections + mlp; }
};

AttentionCost attentionCost(std::int64_t seqLen, int d, int depth, int heads, int mlpRatio = 4);

struct BenchVariant {
    ConditioningMode mode{ConditioningMode::Kpe};
    // One full image generation for input i (conditioning preparation included).
    std::function<void(std::size_t)> generate;
    ModelConfig config;
};

struct BenchReport {
    ConditioningMode mode{ConditioningMode::Kpe};
    int condTokens{0};
    int seqLen{0};
    std::int64_t condMemoryBytes{0};
    double attnMacs{0.0};
    double wallClock{0.0};  // median seconds per image
    double speedupVsSkeleton{0.0};
    int runs{0};
};

struct MeasureOptions {
    int runs{5};
    int warmup{1};
    std::size_t inputs{4};
    // Medians below this trigger a warning and a doubled run count.
    double minMedianSeconds{1e-3};
    int maxRuns{160};
};

/// Times every variant round-robin (so slow drift hits all of them alike) and
/// reports the median per-image wall clock. `warn` receives timer warnings.
std::vector<BenchReport> measureInference(const std::vector<BenchVariant>& variants, const MeasureOptions& options,
                                          const std::function<void(const std::string&)>& warn = {});

std::string benchReportJson(const std::vector<BenchReport>& reports, const TokenAccounting& accounting,
                            const std::string& configHash);
// Human-readable table with pose-token and relative-speed rows.
std::string benchTable(const std::vector<BenchReport>& reports);
std::string accountingTable(const TokenAccounting& accounting, const std::string& title);

} // namespace kpeforge
