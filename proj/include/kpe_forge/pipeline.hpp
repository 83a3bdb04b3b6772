#pragma once

#include "kpe_forge/bpe.hpp"
#include "kpe_forge/checkpoint.hpp"
#include "kpe_forge/dataset.hpp"
#include "kpe_forge/metrics.hpp"
#include "kpe_forge/model.hpp"
#include "kpe_forge/run_config.hpp"
#include "kpe_forge/sampler.hpp"
#include "kpe_forge/trainer.hpp"
#include "kpe_forge/vq.hpp"

#include <vector>

namespace kpeforge {

// Module settings derived from a run configuration.
DatasetConfig datasetConfig(const RunConfig& rc);
VqTrainConfig vqConfig(const RunConfig& rc);
ModelConfig modelConfig(const RunConfig& rc, ConditioningMode mode, int textVocab, int imageVocab);
TrainConfig trainConfig(const RunConfig& rc);
SamplerConfig samplerConfig(const RunConfig& rc, std::uint64_t seed);

std::vector<std::string> captions(const Dataset& ds, const std::vector<std::size_t>& indices);
std::vector<Image> images(const Dataset& ds, const std::vector<std::size_t>& indices);

// Codebook + encoder/decoder in the shared checkpoint format (kind "vq").
Checkpoint makeCodebookCheckpoint(const VqModel<float>& vq);
VqModel<float> codebookFromCheckpoint(const Checkpoint& ckpt);

// Conditioning input for a pose: keypoint tokens (KPE), VQ tokens of the
// rendered skeleton image (skeleton) or nothing (text only).
Conditioning conditioningFor(const ModelConfig& config, const MultiPersonPose& pose, const VqModel<float>& vq);

SequenceExample makeExample(const Sample& sample, const BpeVocab& bpe, const VqModel<float>& vq,
                            const ModelConfig& config);
std::vector<SequenceExample> buildExamples(const Dataset& ds, const std::vector<std::size_t>& indices,
                                           const BpeVocab& bpe, const VqModel<float>& vq, const ModelConfig& config);

struct Evaluation {
    std::vector<EvalRecord> records;
    std::vector<GeneratedImage> generated;  // filled when requested, record order
};

/// Generates samplesPerInput images per input (sample k of input i uses
/// deriveSeed(sampler.seed, i * samplesPerInput + k)) and scores each against
/// the ground truth: counting-oracle PCE, OKS of the recovered poses, Mask-SSIM.
Evaluation evaluateModel(const Transformer<float>& model, const VqModel<float>& vq, const BpeVocab& bpe,
                         const Dataset& ds, const std::vector<std::size_t>& indices, const SamplerConfig& sampler,
                         bool keepImages = false);

} // namespace kpeforge
