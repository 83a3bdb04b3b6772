#pragma once

#include "kpe_forge/model.hpp"
#include "kpe_forge/rng.hpp"
#include "kpe_forge/vq.hpp"

#include <cstdint>
#include <vector>

namespace kpeforge {

// Uniform is the default; Proportional renormalizes softmax over the pool.
enum class PoolSampling { Uniform, Proportional };

struct SamplerConfig {
    int poolSize{8};
    std::uint64_t seed{0};
    int samplesPerInput{1};
    PoolSampling sampling{PoolSampling::Uniform};

    void validate(int imageVocab) const;
};

// Indices of the k largest logits, largest first; ties favour the lower index.
std::vector<int> topK(const RowVec<float>& logits, int k);

// Draws one token from the top-`poolSize` set of `logits`.
int samplePool(const RowVec<float>& logits, int poolSize, PoolSampling sampling, Rng& rng);

/// Autoregressively emits imageTokens ids for (text, conditioning) with a
/// key/value cache. The rng stream is seeded from `seed` alone.
std::vector<int> generateTokens(const Transformer<float>& model, const std::vector<int>& text,
                                const Conditioning& cond, const SamplerConfig& config, std::uint64_t seed);

struct GeneratedImage {
    Image image;
    TokenGrid grid;
    std::uint64_t seed{0};
};

// Sample i uses deriveSeed(config.seed, firstIndex + i).
std::vector<GeneratedImage> generateImages(const Transformer<float>& model, const VqModel<float>& vq,
                                           const std::vector<int>& text, const Conditioning& cond,
                                           const SamplerConfig& config, std::uint64_t firstIndex = 0);

} // namespace kpeforge
