#include "kpe_forge/sampler.hpp"

#include "kpe_forge/error.hpp"
#include "kpe_forge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kpeforge {

void SamplerConfig::validate(int imageVocab) const {
    if (poolSize < 1 || poolSize > imageVocab)
        throw ConfigError("sample.pool_size must lie in [1, " + std::to_string(imageVocab) + "], got " +
                          std::to_string(poolSize));
    if (samplesPerInput < 1) throw ConfigError("sample.samples_per_input must be >= 1");
}

std::vector<int> topK(const RowVec<float>& logits, int k) {
    const int n = static_cast<int>(logits.size());
    if (k < 1 || k > n) throw InvalidArgument("top-k size outside [1, vocab]");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        return logits(a) > logits(b) || (logits(a) == logits(b) && a < b);
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

int samplePool(const RowVec<float>& logits, int poolSize, PoolSampling sampling, Rng& rng) {
    const std::vector<int> pool = topK(logits, poolSize);
    if (sampling == PoolSampling::Uniform) return pool[rng.below(pool.size())];
    const double mx = logits(pool.front());
    std::vector<double> w(pool.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) total += w[i] = std::exp(static_cast<double>(logits(pool[i])) - mx);
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (u < w[i]) return pool[i];
        u -= w[i];
    }
    return pool.back();
}

std::vector<int> generateTokens(const Transformer<float>& model, const std::vector<int>& text,
                                const Conditioning& cond, const SamplerConfig& config, std::uint64_t seed) {
    config.validate(model.config().imageVocab);
    Rng rng(seed);
    const int n = model.config().imageTokens();
    DecodeState<float> state;
    RowVec<float> logits = model.prefill(state, text, cond);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int token = samplePool(logits, config.poolSize, config.sampling, rng);
        out.push_back(token);
        if (k + 1 < n) logits = model.advance(state, token, k);
    }
    return out;
}

std::vector<GeneratedImage> generateImages(const Transformer<float>& model, const VqModel<float>& vq,
                                           const std::vector<int>& text, const Conditioning& cond,
                                           const SamplerConfig& config, std::uint64_t firstIndex) {
    config.validate(model.config().imageVocab);
    const auto& g = vq.geometry();
    if (g.gridHeight() != model.config().gridHeight || g.gridWidth() != model.config().gridWidth)
        throw ConfigError("codebook grid does not match the transformer image grid");
    if (vq.codebookSize() != model.config().imageVocab)
        throw ConfigError("codebook size does not match the transformer image vocabulary");
    std::vector<GeneratedImage> out(static_cast<std::size_t>(config.samplesPerInput));
    parallelFor(out.size(), [&](std::size_t i) {
        GeneratedImage& gi = out[i];
        gi.seed = deriveSeed(config.seed, firstIndex + i);
        gi.grid = {g.gridHeight(), g.gridWidth(), generateTokens(model, text, cond, config, gi.seed)};
        gi.image = decodeTokens(gi.grid, vq);
    });
    return out;
}

} // namespace kpeforge
