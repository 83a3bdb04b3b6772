#pragma once

#include "kpe_forge/adam.hpp"
#include "kpe_forge/checkpoint.hpp"
#include "kpe_forge/model.hpp"

#include <functional>
#include <iosfwd>
#include <vector>

namespace kpeforge {

struct TrainConfig {
    int epochs{30};
    int batchSize{10};
    AdamHyper adam{};
    // Halve the learning rate after this many epochs without improvement.
    int plateauEpochs{12};
    double lrFactor{0.5};
    double minLr{1e-6};
};

struct EpochRecord {
    int epoch{0};
    double lr{0.0};
    LossBreakdown loss;
};

struct TrainResult {
    Transformer<float> model;
    AdamState<float> adam;
    TrainingState state;
    std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const TrainResult&)>;

/// Shuffled mini-batch Adam over `data`. The epoch loss is the mean of the
/// per-example losses seen during that epoch. A non-finite loss throws
/// DivergenceError. `resume` continues from a saved transformer checkpoint.
TrainResult trainTransformer(const std::vector<SequenceExample>& data, const ModelConfig& modelConfig,
                             const TrainConfig& config, std::uint64_t seed, const EpochCallback& onEpoch = {},
                             const Checkpoint* resume = nullptr);

// Columns: epoch, lr, L_T, L_I, L_K, total.
void writeLossCsv(std::ostream& out, const std::vector<EpochRecord>& log);

Checkpoint makeCheckpoint(const Transformer<float>& model, const AdamState<float>* adam, const TrainingState& state);
Transformer<float> modelFromCheckpoint(const Checkpoint& ckpt);

} // namespace kpeforge
